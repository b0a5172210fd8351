/** Event-guided deformable convolution.
 *
 * The event branch predicts per-pixel sampling offsets (2 per kernel tap)
 * and a sigmoid mask (1 per tap); the image branch is then aggregated by a
 * k x k convolution whose taps sample at the offset positions, scaled by the
 * mask. Zero offsets with unit mask reduce exactly to a standard zero-padded
 * convolution, and a zero mask leaves only the bias.
 */

import { tf } from "./backend.js";
import { ValidationError } from "./io.js";
import { Prng } from "./prng.js";
import { baseGrid, Conv, conv2dSame, lrelu, makeConv, Params, sampleBilinear } from "./nn.js";

/** Deformable k x k convolution primitive.
 *
 * x: [1,H,W,Cin]; offsets: [1,H,W,2k^2] as (dy, dx) pairs per tap in
 * row-major tap order; mask: [1,H,W,k^2]; w: [k,k,Cin,Cout]; b: [Cout].
 */
export function deformableConv2d(
  x: tf.Tensor4D,
  offsets: tf.Tensor4D,
  mask: tf.Tensor4D,
  w: tf.Tensor4D | tf.Variable,
  b: tf.Tensor1D | tf.Variable,
  k = 3,
): tf.Tensor4D {
  const [, h, wd, cin] = x.shape;
  if (offsets.shape[3] !== 2 * k * k || mask.shape[3] !== k * k) {
    throw new ValidationError(
      `offsets/mask channels ${offsets.shape[3]}/${mask.shape[3]} do not match k=${k}`,
    );
  }
  if (offsets.shape[1] !== h || offsets.shape[2] !== wd || mask.shape[1] !== h || mask.shape[2] !== wd) {
    throw new ValidationError("offsets/mask spatial dims must match the input");
  }
  const r = (k - 1) / 2;
  const kk = k * k;
  return tf.tidy(() => {
    const { yy, xx } = baseGrid(h, wd);
    const wt = w as tf.Tensor4D;
    const cout = wt.shape[3];

    // per-tap base displacements (ky - r, kx - r), row-major tap order
    const tapDy = new Float32Array(kk);
    const tapDx = new Float32Array(kk);
    for (let j = 0; j < kk; j++) {
      tapDy[j] = Math.floor(j / k) - r;
      tapDx[j] = (j % k) - r;
    }

    // offsets [1,H,W,2k^2] -> (dy, dx) each as [k^2,H,W]
    const offTap = tf.transpose(tf.reshape(offsets, [h, wd, kk, 2]), [2, 3, 0, 1]);
    const oy = tf.reshape(tf.slice(offTap, [0, 0, 0, 0], [kk, 1, h, wd]), [kk, h, wd]);
    const ox = tf.reshape(tf.slice(offTap, [0, 1, 0, 0], [kk, 1, h, wd]), [kk, h, wd]);
    const posY = tf.add(tf.add(yy, tf.tensor3d(tapDy, [kk, 1, 1])), oy) as tf.Tensor3D;
    const posX = tf.add(tf.add(xx, tf.tensor3d(tapDx, [kk, 1, 1])), ox) as tf.Tensor3D;

    // sample all taps at once, scale by mask: [k^2,H,W,Cin]
    const maskTap = tf.transpose(tf.reshape(mask, [h, wd, kk]), [2, 0, 1]).expandDims(3);
    const sampled = tf.mul(sampleBilinear(x, posY, posX, "zero"), maskTap);

    // im2col layout [1,H,W,k^2*Cin]; the matching weight layout is the
    // natural row-major flattening of [k,k,Cin,Cout]
    const col = tf.reshape(tf.transpose(sampled, [1, 2, 0, 3]), [1, h, wd, kk * cin]);
    const wCol = tf.reshape(wt, [1, 1, kk * cin, cout]);
    const out = conv2dSame(col as tf.Tensor4D, wCol as tf.Tensor4D, 1);
    return tf.add(out, b) as tf.Tensor4D;
  });
}

/** Sampling state for one fusion stage: per-pixel tap offsets and weights. */
export interface EgdcState {
  offsets: tf.Tensor4D;
  mask: tf.Tensor4D;
}

/** One fusion stage: offsets/masks regressed from event features, applied
 * as a deformable convolution over image features. */
export class Egdc {
  readonly k = 3;
  private readonly offsetConv: Conv;
  private readonly maskConv: Conv;
  private readonly w: tf.Variable;
  private readonly b: tf.Variable;

  constructor(params: Params, prng: Prng, name: string, channels: number) {
    const k = this.k;
    // small offset/mask heads: near-zero offsets and ~0.5 masks at init keep
    // the fusion close to a plain convolution while leaving gradients alive
    this.offsetConv = makeConv(params, prng, `${name}/offsets`, 3, channels, 2 * k * k, { std: 1e-3 });
    this.maskConv = makeConv(params, prng, `${name}/mask`, 3, channels, k * k, { std: 1e-3 });
    this.w = params.add(
      `${name}/w`,
      prng.fillNormal(new Float32Array(k * k * channels * channels), Math.sqrt(2 / (k * k * channels))),
      [k, k, channels, channels],
    );
    this.b = params.add(`${name}/b`, new Float32Array(channels), [channels]);
  }

  /** offsets clamped to a sane range; masks squashed to (0, 1). */
  state(evFeat: tf.Tensor4D): EgdcState {
    return tf.tidy(() => ({
      offsets: tf.clipByValue(this.offsetConv.apply(evFeat), -8, 8),
      mask: tf.sigmoid(this.maskConv.apply(evFeat)) as tf.Tensor4D,
    }));
  }

  fuse(imgFeat: tf.Tensor4D, evFeat: tf.Tensor4D): tf.Tensor4D {
    if (
      imgFeat.shape[1] !== evFeat.shape[1] ||
      imgFeat.shape[2] !== evFeat.shape[2]
    ) {
      throw new ValidationError(
        `image/event feature dims ${imgFeat.shape} vs ${evFeat.shape} differ`,
      );
    }
    return tf.tidy(() => {
      const { offsets, mask } = this.state(evFeat);
      return lrelu(deformableConv2d(imgFeat, offsets, mask, this.w, this.b, this.k)) as tf.Tensor4D;
    });
  }
}
