/** D-Net: regress the per-pixel exposure blur factor from the turbulent
 * image and the event voxel grid, and undo it through a global connection
 * (elementwise division in the linear intensity domain).
 *
 * Two dense-block encoders (image, events) run over a multi-scale
 * U-structure; at each scale the modalities are fused by event-guided
 * deformable convolution, and a decoder brings the fusion back to full
 * resolution where a small head predicts log of the blur factor.
 */

import { tf } from "./backend.js";
import { ValidationError } from "./io.js";
import { Prng } from "./prng.js";
import { Egdc } from "./egdc.js";
import { Conv, lrelu, makeConv, Params, upsample2d } from "./nn.js";

export interface DNetConfig {
  baseChannels: number;
  scales: number;
  denseLayersPerBlock: number;
  eventBins: number;
}

export const DNET_DEFAULTS: DNetConfig = {
  baseChannels: 16,
  scales: 3,
  denseLayersPerBlock: 3,
  eventBins: 8,
};

export function dnetConfig(partial: Partial<DNetConfig> = {}): DNetConfig {
  const cfg = { ...DNET_DEFAULTS, ...partial };
  if (!Number.isInteger(cfg.scales) || cfg.scales < 2) {
    throw new ValidationError(`scales must be an integer >= 2, got ${cfg.scales}`);
  }
  if (!Number.isInteger(cfg.eventBins) || cfg.eventBins < 2) {
    throw new ValidationError(`event_bins must be an integer >= 2, got ${cfg.eventBins}`);
  }
  if (cfg.baseChannels < 1 || cfg.denseLayersPerBlock < 1) {
    throw new ValidationError("base_channels and dense_layers_per_block must be >= 1");
  }
  return cfg;
}

/** ceil-half growth keeps dense blocks meaningful at tiny widths */
class DenseBlock {
  private readonly layers: Conv[];
  private readonly transition: Conv;

  constructor(params: Params, prng: Prng, name: string, channels: number, nLayers: number) {
    const growth = Math.max(2, Math.ceil(channels / 2));
    this.layers = [];
    for (let i = 0; i < nLayers; i++) {
      this.layers.push(
        makeConv(params, prng, `${name}/dense${i}`, 3, channels + i * growth, growth),
      );
    }
    this.transition = makeConv(params, prng, `${name}/transition`, 1, channels + nLayers * growth, channels);
  }

  apply(x: tf.Tensor4D): tf.Tensor4D {
    return tf.tidy(() => {
      let cat = x;
      for (const layer of this.layers) {
        cat = tf.concat([cat, lrelu(layer.apply(cat)) as tf.Tensor4D], 3);
      }
      return lrelu(this.transition.apply(cat)) as tf.Tensor4D;
    });
  }
}

class Encoder {
  private readonly stem: Conv;
  private readonly blocks: DenseBlock[];
  private readonly downs: Conv[];

  constructor(params: Params, prng: Prng, name: string, cin: number, cfg: DNetConfig) {
    const c = cfg.baseChannels;
    this.stem = makeConv(params, prng, `${name}/stem`, 3, cin, c);
    this.blocks = [];
    this.downs = [];
    for (let s = 0; s < cfg.scales; s++) {
      this.blocks.push(new DenseBlock(params, prng, `${name}/scale${s}`, c, cfg.denseLayersPerBlock));
      if (s < cfg.scales - 1) {
        this.downs.push(makeConv(params, prng, `${name}/down${s}`, 3, c, c, { stride: 2 }));
      }
    }
  }

  /** per-scale features, finest first */
  apply(x: tf.Tensor4D): tf.Tensor4D[] {
    return tf.tidy(() => {
      const feats: tf.Tensor4D[] = [];
      let cur = lrelu(this.stem.apply(x)) as tf.Tensor4D;
      for (let s = 0; s < this.blocks.length; s++) {
        cur = this.blocks[s].apply(cur);
        feats.push(cur);
        if (s < this.downs.length) cur = lrelu(this.downs[s].apply(cur)) as tf.Tensor4D;
      }
      return feats;
    });
  }
}

export const EPS_DIV = 1e-3;
const LOG_E_RANGE = 4;

export class DNet {
  readonly cfg: DNetConfig;
  readonly params: Params;
  private readonly imageEnc: Encoder;
  private readonly eventEnc: Encoder;
  private readonly fusions: Egdc[];
  private readonly upConvs: Conv[];
  private readonly mergeConvs: Conv[];
  private readonly head: Conv;

  constructor(cfg: Partial<DNetConfig>, prng: Prng, params?: Params) {
    this.cfg = dnetConfig(cfg);
    this.params = params ?? new Params();
    const c = this.cfg.baseChannels;
    this.imageEnc = new Encoder(this.params, prng, "dnet/image", 1, this.cfg);
    this.eventEnc = new Encoder(this.params, prng, "dnet/event", this.cfg.eventBins, this.cfg);
    this.fusions = [];
    for (let s = 0; s < this.cfg.scales; s++) {
      this.fusions.push(new Egdc(this.params, prng, `dnet/fuse${s}`, c));
    }
    this.upConvs = [];
    this.mergeConvs = [];
    for (let s = this.cfg.scales - 2; s >= 0; s--) {
      this.upConvs.push(makeConv(this.params, prng, `dnet/up${s}`, 3, c, c));
      this.mergeConvs.push(makeConv(this.params, prng, `dnet/merge${s}`, 3, 2 * c, c));
    }
    // near-zero head: the blur-factor estimate starts at ~1 so the global
    // connection passes the input through almost unchanged at init
    this.head = makeConv(this.params, prng, "dnet/head", 3, c, 1, { std: 1e-3 });
  }

  /** image: [H, W] in linear intensity; voxel: [bins, H, W].
   * Returns the blur-factor estimate and the divided (coarse) image. */
  forward(image: tf.Tensor2D, voxel: tf.Tensor3D): {
    integralEstimate: tf.Tensor2D;
    coarse: tf.Tensor2D;
  } {
    const [h, w] = image.shape;
    const div = 2 ** (this.cfg.scales - 1);
    if (h % div !== 0 || w % div !== 0) {
      throw new ValidationError(`spatial dims ${h}x${w} not divisible by ${div}`);
    }
    if (voxel.shape[0] !== this.cfg.eventBins || voxel.shape[1] !== h || voxel.shape[2] !== w) {
      throw new ValidationError(
        `voxel shape ${voxel.shape} does not match [${this.cfg.eventBins}, ${h}, ${w}]`,
      );
    }
    return tf.tidy(() => {
      const img4 = image.reshape([1, h, w, 1]) as tf.Tensor4D;
      const ev4 = voxel.transpose([1, 2, 0]).reshape([1, h, w, this.cfg.eventBins]) as tf.Tensor4D;
      const imgFeats = this.imageEnc.apply(img4);
      const evFeats = this.eventEnc.apply(ev4);
      const fused = imgFeats.map((f, s) => this.fusions[s].fuse(f, evFeats[s]));

      let cur = fused[this.cfg.scales - 1];
      for (let i = 0; i < this.upConvs.length; i++) {
        const s = this.cfg.scales - 2 - i;
        const up = upsample2d(cur, fused[s].shape[1], fused[s].shape[2]);
        cur = lrelu(this.upConvs[i].apply(up)) as tf.Tensor4D;
        cur = lrelu(this.mergeConvs[i].apply(tf.concat([cur, fused[s]], 3))) as tf.Tensor4D;
      }
      const logE = tf.clipByValue(this.head.apply(cur), -LOG_E_RANGE, LOG_E_RANGE);
      const e = tf.exp(logE);
      const coarse = tf.div(img4, tf.maximum(e, EPS_DIV));
      return {
        integralEstimate: e.reshape([h, w]) as tf.Tensor2D,
        coarse: coarse.reshape([h, w]) as tf.Tensor2D,
      };
    });
  }
}
