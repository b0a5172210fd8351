/** Functional NN primitives on tfjs tensors.
 *
 * Weights are initialized from the package's own seeded PRNG (not tfjs's),
 * so runs are bit-reproducible for a fixed seed, and every variable is
 * registered under a unique name for checkpointing.
 */

import { tf } from "./backend.js";
import { ValidationError } from "./io.js";
import { Prng } from "./prng.js";

export class Params {
  readonly vars = new Map<string, tf.Variable>();

  add(name: string, values: Float32Array, shape: number[]): tf.Variable {
    if (this.vars.has(name)) throw new ValidationError(`duplicate variable ${name}`);
    // unnamed in the engine: tfjs variable names are process-global, and one
    // process may hold several models; the logical name lives in this map
    const v = tf.variable(tf.tensor(values, shape, "float32"), true);
    this.vars.set(name, v);
    return v;
  }

  trainable(): tf.Variable[] {
    return [...this.vars.values()];
  }
}

export interface ConvOpts {
  stride?: number;
  /** weight init std; defaults to He for k*k*cin fan-in */
  std?: number;
}

/** TF "same" padding split (before, after) for one spatial axis. */
function samePads(inSize: number, k: number, s: number): [number, number] {
  const out = Math.ceil(inSize / s);
  const total = Math.max((out - 1) * s + k - inSize, 0);
  const before = Math.floor(total / 2);
  return [before, total - before];
}

/** Filter gradient of a "same" convolution, written as a dilated convolution:
 * dW[ky,kx,ci,co] = sum_{b,oy,ox} x[b, oy*s+ky-p, ox*s+kx-p, ci] * dy[b,oy,ox,co].
 * Padding the input and treating dy as a stride-dilated filter computes the
 * whole sum with one conv call (batch folds into the summed channel axis).
 * Valid whenever k >= s, which holds for every convolution in this package.
 */
function convFilterGrad(
  x: tf.Tensor4D,
  dy: tf.Tensor4D,
  wShape: [number, number, number, number],
  s: number,
): tf.Tensor4D {
  const [, h, w] = x.shape;
  const [kh, kw] = wShape;
  if (kh < s || kw < s) {
    throw new ValidationError(`filter ${kh}x${kw} smaller than stride ${s} is unsupported`);
  }
  const [padT, padB] = samePads(h, kh, s);
  const [padL, padR] = samePads(w, kw, s);
  return tf.tidy(() => {
    const xp = tf.pad(x, [[0, 0], [padT, padB], [padL, padR], [0, 0]]);
    const xT = tf.transpose(xp, [3, 1, 2, 0]); // [cin, Hp, Wp, B]
    const dyF = tf.transpose(dy, [1, 2, 0, 3]); // [ho, wo, B, cout]
    const g = tf.conv2d(xT as tf.Tensor4D, dyF as tf.Tensor4D, 1, "valid", "NHWC", s);
    return tf.transpose(g, [1, 2, 0, 3]) as tf.Tensor4D; // [kh, kw, cin, cout]
  });
}

/** conv2d with "same" padding and a hand-rolled gradient.
 *
 * The stock conv2d gradient needs the Conv2DBackpropFilter kernel, which the
 * wasm backend does not ship. The input gradient maps to conv2dTranspose
 * (Conv2DBackpropInput — available) and the filter gradient to a dilated
 * forward convolution, so this formulation trains on every backend.
 */
export function conv2dSame(
  x: tf.Tensor4D,
  w: tf.Tensor4D | tf.Variable,
  stride: number,
): tf.Tensor4D {
  const op = tf.customGrad((...args: Array<tf.Tensor | tf.GradSaveFunc>) => {
    const xt = args[0] as tf.Tensor4D;
    const wt = args[1] as tf.Tensor4D;
    (args[2] as tf.GradSaveFunc)([xt, wt]);
    return {
      value: tf.conv2d(xt, wt, stride, "same"),
      gradFunc: (dy: tf.Tensor, saved: tf.Tensor[]) => {
        const [xs, ws] = saved as [tf.Tensor4D, tf.Tensor4D];
        return [
          tf.conv2dTranspose(dy as tf.Tensor4D, ws, xs.shape, stride, "same"),
          convFilterGrad(xs, dy as tf.Tensor4D, ws.shape as [number, number, number, number], stride),
        ];
      },
    };
  });
  return op(x, w as tf.Tensor4D) as tf.Tensor4D;
}

export class Conv {
  constructor(
    readonly w: tf.Variable,
    readonly b: tf.Variable,
    readonly stride: number,
  ) {}

  apply(x: tf.Tensor4D): tf.Tensor4D {
    return tf.tidy(() => tf.add(conv2dSame(x, this.w, this.stride), this.b)) as tf.Tensor4D;
  }
}

export function makeConv(
  params: Params,
  prng: Prng,
  name: string,
  k: number,
  cin: number,
  cout: number,
  opts: ConvOpts = {},
): Conv {
  const std = opts.std ?? Math.sqrt(2 / (k * k * cin));
  const w = params.add(
    `${name}/w`,
    prng.fillNormal(new Float32Array(k * k * cin * cout), std),
    [k, k, cin, cout],
  );
  const b = params.add(`${name}/b`, new Float32Array(cout), [cout]);
  return new Conv(w, b, opts.stride ?? 1);
}

export function lrelu(x: tf.Tensor): tf.Tensor {
  return tf.leakyRelu(x, 0.1);
}

export type BorderMode = "zero" | "clamp";

/** Row gather with constant indices and a scatter-add backward.
 *
 * The stock gather gradient routes through a segment-sum whose cpu kernel is
 * O(rows x indices) with per-segment tensor allocations — quadratic in pixel
 * count here. Constant indices admit a direct scatter-add, which is linear.
 */
function gatherRowsConst(flat: tf.Tensor2D, idx: Int32Array): tf.Tensor2D {
  const [rows, c] = flat.shape;
  const op = tf.customGrad((...args: Array<tf.Tensor | tf.GradSaveFunc>) => {
    const x = args[0] as tf.Tensor2D;
    (args[1] as tf.GradSaveFunc)([]);
    return {
      value: tf.gather(x, tf.tensor1d(idx, "int32")),
      gradFunc: (dy: tf.Tensor) => [
        tf.scatterND(tf.tensor2d(idx, [idx.length, 1], "int32"), dy as tf.Tensor2D, [rows, c]),
      ],
    };
  });
  return op(flat) as tf.Tensor2D;
}

/** Differentiable bilinear sampling of feat at per-pixel positions.
 *
 * feat: [1, H, W, C]; py/px: [M, H, W] — M independent position fields over
 * the same feature map, sampled in one pass; returns [M, H, W, C]. Gradients
 * flow to feat (through gather) and to py/px (through the fractional
 * interpolation weights). "zero" treats out-of-bounds samples as zero
 * (convolution padding semantics); "clamp" extends the border pixel
 * (warping semantics).
 *
 * Corner indices and validity masks are computed eagerly on the host and
 * enter the graph as constants: floor() is piecewise constant in the
 * coordinates (zero derivative a.e.), and gather indices must not sit on the
 * tape — backprop cannot produce a float gradient for an int input.
 */
export function sampleBilinear(
  feat: tf.Tensor4D,
  py: tf.Tensor3D,
  px: tf.Tensor3D,
  border: BorderMode,
): tf.Tensor4D {
  const [, h, w, c] = feat.shape;
  const m = py.shape[0];
  const n = m * h * w;
  const pyArr = py.dataSync();
  const pxArr = px.dataSync();

  const y0v = new Float32Array(n);
  const x0v = new Float32Array(n);
  const idx = [new Int32Array(n), new Int32Array(n), new Int32Array(n), new Int32Array(n)];
  const mask = border === "zero"
    ? [new Float32Array(n), new Float32Array(n), new Float32Array(n), new Float32Array(n)]
    : null;
  for (let i = 0; i < n; i++) {
    let y0: number;
    let x0: number;
    if (border === "clamp") {
      const yv = Math.min(Math.max(pyArr[i], 0), h - 1);
      const xv = Math.min(Math.max(pxArr[i], 0), w - 1);
      y0 = Math.min(Math.floor(yv), h - 2);
      x0 = Math.min(Math.floor(xv), w - 2);
    } else {
      y0 = Math.floor(pyArr[i]);
      x0 = Math.floor(pxArr[i]);
    }
    y0v[i] = y0;
    x0v[i] = x0;
    for (let j = 0; j < 4; j++) {
      const yc = y0 + (j >> 1);
      const xc = x0 + (j & 1);
      const inside = yc >= 0 && yc < h && xc >= 0 && xc < w;
      idx[j][i] = inside ? yc * w + xc : 0;
      if (mask) mask[j][i] = inside ? 1 : 0;
    }
  }

  return tf.tidy(() => {
    const pyG = border === "clamp" ? tf.clipByValue(py, 0, h - 1) : py;
    const pxG = border === "clamp" ? tf.clipByValue(px, 0, w - 1) : px;
    const fy = tf.sub(pyG, tf.tensor3d(y0v, [m, h, w])).expandDims(3); // [M,H,W,1]
    const fx = tf.sub(pxG, tf.tensor3d(x0v, [m, h, w])).expandDims(3);

    const flat = feat.reshape([h * w, c]) as tf.Tensor2D;
    const corner = (j: number, wgt: tf.Tensor) => {
      const weight = mask
        ? tf.mul(wgt, tf.tensor3d(mask[j], [m, h, w]).expandDims(3))
        : wgt;
      const g = gatherRowsConst(flat, idx[j]).reshape([m, h, w, c]);
      return tf.mul(g, weight);
    };

    const one = tf.scalar(1);
    return tf.addN([
      corner(0, tf.mul(tf.sub(one, fy), tf.sub(one, fx))),
      corner(1, tf.mul(tf.sub(one, fy), fx)),
      corner(2, tf.mul(fy, tf.sub(one, fx))),
      corner(3, tf.mul(fy, fx)),
    ]) as tf.Tensor4D;
  });
}

/** Backward warp matching the restoration toolkit's semantics:
 * out(x, y) = src(x + u, y + v), bilinear, border-clamped.
 * src: [1,H,W,C]; u/v: [1,H,W]. */
export function warpBilinear(
  src: tf.Tensor4D,
  u: tf.Tensor3D,
  v: tf.Tensor3D,
): tf.Tensor4D {
  const [, h, w] = src.shape;
  return tf.tidy(() => {
    const { yy, xx } = baseGrid(h, w);
    return sampleBilinear(src, tf.add(yy, v) as tf.Tensor3D, tf.add(xx, u) as tf.Tensor3D, "clamp");
  });
}

const gridCache = new Map<string, { yy: tf.Tensor3D; xx: tf.Tensor3D }>();

/** Pixel-coordinate meshgrids [1,H,W], cached and kept out of tidy scopes. */
export function baseGrid(h: number, w: number): { yy: tf.Tensor3D; xx: tf.Tensor3D } {
  const key = `${h}x${w}`;
  let g = gridCache.get(key);
  if (!g) {
    const ya = new Float32Array(h * w);
    const xa = new Float32Array(h * w);
    for (let y = 0; y < h; y++) {
      for (let x = 0; x < w; x++) {
        ya[y * w + x] = y;
        xa[y * w + x] = x;
      }
    }
    g = tf.tidy(() => ({
      yy: tf.keep(tf.tensor3d(ya, [1, h, w])),
      xx: tf.keep(tf.tensor3d(xa, [1, h, w])),
    }));
    gridCache.set(key, g);
  }
  return g;
}

export function upsample2d(x: tf.Tensor4D, h: number, w: number): tf.Tensor4D {
  return tf.image.resizeBilinear(x, [h, w], true);
}
