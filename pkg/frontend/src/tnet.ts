/** T-Net: estimate the residual tilt flow of the coarse image and undo it.
 *
 * An overlapped patch embedding takes the coarse image and the activity
 * guidance map to quarter resolution, a couple of residual baseline blocks
 * shape the features, and a chain of iterative-flow blocks each predicts a
 * flow update at that low resolution. Every iteration's upsampled flow is
 * retained; the last one warps the coarse image into the refined output.
 */

import { tf } from "./backend.js";
import { ValidationError } from "./io.js";
import { Prng } from "./prng.js";
import { baseGrid, Conv, lrelu, makeConv, Params, sampleBilinear, upsample2d, warpBilinear } from "./nn.js";

export interface TNetConfig {
  embedPatch: number;
  baselineBlocks: number;
  ifIterations: number;
  flowScale: number;
}

export const TNET_DEFAULTS: TNetConfig = {
  embedPatch: 4,
  baselineBlocks: 2,
  ifIterations: 3,
  flowScale: 0.25,
};

export function tnetConfig(partial: Partial<TNetConfig> = {}): TNetConfig {
  const cfg = { ...TNET_DEFAULTS, ...partial };
  if (!Number.isInteger(cfg.ifIterations) || cfg.ifIterations < 1) {
    throw new ValidationError(`if_iterations must be an integer >= 1, got ${cfg.ifIterations}`);
  }
  if (!Number.isInteger(cfg.embedPatch) || cfg.embedPatch < 1) {
    throw new ValidationError(`embed_patch must be an integer >= 1, got ${cfg.embedPatch}`);
  }
  if (Math.abs(cfg.flowScale * cfg.embedPatch - 1) > 1e-12) {
    throw new ValidationError(
      `flow_scale ${cfg.flowScale} must be the reciprocal of embed_patch ${cfg.embedPatch}`,
    );
  }
  if (cfg.baselineBlocks < 1) {
    throw new ValidationError("baseline_blocks must be >= 1");
  }
  return cfg;
}

const TNET_CHANNELS = 16;

class IfBlock {
  private readonly conv1: Conv;
  private readonly conv2: Conv;
  private readonly deltaConv: Conv;

  constructor(params: Params, prng: Prng, name: string, channels: number) {
    this.conv1 = makeConv(params, prng, `${name}/conv1`, 3, channels + 2, channels);
    this.conv2 = makeConv(params, prng, `${name}/conv2`, 3, channels, channels);
    // near-zero flow update at init: refined starts out almost equal to coarse
    this.deltaConv = makeConv(params, prng, `${name}/delta`, 3, channels, 2, { std: 1e-4 });
  }

  apply(feat: tf.Tensor4D, flow: tf.Tensor4D): tf.Tensor4D {
    return tf.tidy(() => {
      let h = lrelu(this.conv1.apply(tf.concat([feat, flow], 3))) as tf.Tensor4D;
      h = lrelu(this.conv2.apply(h)) as tf.Tensor4D;
      return this.deltaConv.apply(h);
    });
  }
}

export class TNet {
  readonly cfg: TNetConfig;
  readonly params: Params;
  private readonly embed: Conv;
  private readonly baseline: { c1: Conv; c2: Conv }[];
  private readonly ifBlocks: IfBlock[];

  constructor(cfg: Partial<TNetConfig>, prng: Prng, params?: Params) {
    this.cfg = tnetConfig(cfg);
    this.params = params ?? new Params();
    const c = TNET_CHANNELS;
    const k = 2 * this.cfg.embedPatch - 1; // overlapping: kernel spans beyond the stride
    this.embed = makeConv(this.params, prng, "tnet/embed", k, 2, c, { stride: this.cfg.embedPatch });
    this.baseline = [];
    for (let i = 0; i < this.cfg.baselineBlocks; i++) {
      this.baseline.push({
        c1: makeConv(this.params, prng, `tnet/base${i}/c1`, 3, c, c),
        c2: makeConv(this.params, prng, `tnet/base${i}/c2`, 3, c, c),
      });
    }
    this.ifBlocks = [];
    for (let i = 0; i < this.cfg.ifIterations; i++) {
      this.ifBlocks.push(new IfBlock(this.params, prng, `tnet/if${i}`, c));
    }
  }

  /** coarse/vmap: [H, W]. Returns channel-first flows (2, H, W) — the final
   * one plus every intermediate iteration — and the warped refinement. */
  forward(coarse: tf.Tensor2D, vmap: tf.Tensor2D): {
    flow: tf.Tensor3D;
    flows: tf.Tensor3D[];
    refined: tf.Tensor2D;
  } {
    const [h, w] = coarse.shape;
    if (vmap.shape[0] !== h || vmap.shape[1] !== w) {
      throw new ValidationError(`coarse ${coarse.shape} and vmap ${vmap.shape} dims differ`);
    }
    const patch = this.cfg.embedPatch;
    if (h % patch !== 0 || w % patch !== 0) {
      throw new ValidationError(`spatial dims ${h}x${w} not divisible by embed_patch ${patch}`);
    }
    return tf.tidy(() => {
      const x = tf.stack([coarse, vmap], 2).reshape([1, h, w, 2]) as tf.Tensor4D;
      let feat = lrelu(this.embed.apply(x)) as tf.Tensor4D;
      for (const blk of this.baseline) {
        const inner = lrelu(blk.c2.apply(lrelu(blk.c1.apply(feat)) as tf.Tensor4D));
        feat = tf.add(feat, inner) as tf.Tensor4D;
      }
      const hq = feat.shape[1];
      const wq = feat.shape[2];
      let flowQ = tf.zeros([1, hq, wq, 2]) as tf.Tensor4D;
      const flows: tf.Tensor3D[] = [];
      for (const blk of this.ifBlocks) {
        flowQ = tf.add(flowQ, blk.apply(feat, flowQ)) as tf.Tensor4D;
        // full-resolution displacement: upsample the field and rescale the
        // quarter-resolution pixel units
        const full = tf.mul(upsample2d(flowQ, h, w), 1 / this.cfg.flowScale);
        flows.push(full.squeeze([0]).transpose([2, 0, 1]) as tf.Tensor3D);
      }
      const flow = flows[flows.length - 1];
      const u = tf.slice(flow, [0, 0, 0], [1, h, w]) as tf.Tensor3D;
      const v = tf.slice(flow, [1, 0, 0], [1, h, w]) as tf.Tensor3D;
      const refined = warpBilinear(
        coarse.reshape([1, h, w, 1]) as tf.Tensor4D, u, v,
      ).reshape([h, w]) as tf.Tensor2D;
      return { flow, flows, refined };
    });
  }
}

/** Warp [H, W] by a channel-first (2, H, W) flow — used to score each
 * iteration's flow against a target. */
export function warpByFlow(image: tf.Tensor2D, flow: tf.Tensor3D): tf.Tensor2D {
  const [h, w] = image.shape;
  return tf.tidy(() => {
    const u = tf.slice(flow, [0, 0, 0], [1, h, w]) as tf.Tensor3D;
    const v = tf.slice(flow, [1, 0, 0], [1, h, w]) as tf.Tensor3D;
    return warpBilinear(image.reshape([1, h, w, 1]) as tf.Tensor4D, u, v).reshape([h, w]) as tf.Tensor2D;
  });
}

/** Warp one [H, W] image by several (2, H, W) flows in a single sampling
 * pass; returns [N, H, W] (one row per flow). */
export function warpStack(image: tf.Tensor2D, flows: tf.Tensor3D[]): tf.Tensor3D {
  const [h, w] = image.shape;
  return tf.tidy(() => {
    const all = tf.stack(flows) as tf.Tensor4D; // [N,2,H,W]
    const n = flows.length;
    const u = tf.reshape(tf.slice(all, [0, 0, 0, 0], [n, 1, h, w]), [n, h, w]) as tf.Tensor3D;
    const v = tf.reshape(tf.slice(all, [0, 1, 0, 0], [n, 1, h, w]), [n, h, w]) as tf.Tensor3D;
    const { yy, xx } = baseGrid(h, w);
    const src = image.reshape([1, h, w, 1]) as tf.Tensor4D;
    return sampleBilinear(
      src,
      tf.add(yy, v) as tf.Tensor3D,
      tf.add(xx, u) as tf.Tensor3D,
      "clamp",
    ).reshape([n, h, w]) as tf.Tensor3D;
  });
}
