/** Training objective: lambda1 * MSE + lambda2 * perceptual distance.
 *
 * The perceptual term is feature-space MSE under a small frozen convolutional
 * extractor with fixed seeded weights (a stand-in for a pretrained network at
 * toy scale — it is never trained, so it measures a stable notion of
 * structural difference). lambda2 = 0 reduces the loss to plain MSE.
 */

import { tf } from "./backend.js";
import { ValidationError } from "./io.js";
import { Prng } from "./prng.js";
import { conv2dSame, lrelu } from "./nn.js";

export const LAMBDA1_DEFAULT = 1.0;
export const LAMBDA2_DEFAULT = 0.02;

export function mse(a: tf.Tensor, b: tf.Tensor): tf.Scalar {
  if (a.shape.length !== b.shape.length || a.shape.some((d, i) => d !== b.shape[i])) {
    throw new ValidationError(`shape mismatch ${a.shape} vs ${b.shape}`);
  }
  return tf.tidy(() => tf.mean(tf.square(tf.sub(a, b)))) as tf.Scalar;
}

const PERCEPTUAL_SEED = 77;
const PERCEPTUAL_CHANNELS = 8;

export class Perceptual {
  private readonly w1: tf.Tensor4D;
  private readonly w2: tf.Tensor4D;

  constructor() {
    const prng = new Prng(PERCEPTUAL_SEED);
    const c = PERCEPTUAL_CHANNELS;
    this.w1 = tf.keep(tf.tensor4d(
      prng.fillNormal(new Float32Array(9 * c), Math.sqrt(2 / 9)), [3, 3, 1, c],
    ));
    this.w2 = tf.keep(tf.tensor4d(
      prng.fillNormal(new Float32Array(9 * c * c), Math.sqrt(2 / (9 * c))), [3, 3, c, c],
    ));
  }

  features(img: tf.Tensor2D): tf.Tensor4D {
    const [h, w] = img.shape;
    return this.featuresBatch(img.reshape([1, h, w]) as tf.Tensor3D);
  }

  /** Features for a stack of images [N, H, W] in one pass: [N, H/2, W/2, C]. */
  featuresBatch(imgs: tf.Tensor3D): tf.Tensor4D {
    return tf.tidy(() => {
      const x = imgs.expandDims(3) as tf.Tensor4D;
      const f1 = lrelu(conv2dSame(x, this.w1, 1)) as tf.Tensor4D;
      return lrelu(conv2dSame(f1, this.w2, 2)) as tf.Tensor4D;
    });
  }

  distance(a: tf.Tensor2D, b: tf.Tensor2D): tf.Scalar {
    return tf.tidy(() => mse(this.features(a), this.features(b)));
  }
}

export interface LossWeights {
  lambda1: number;
  lambda2: number;
}

export function restorationLoss(
  output: tf.Tensor2D,
  target: tf.Tensor2D,
  perceptual: Perceptual,
  weights: LossWeights = { lambda1: LAMBDA1_DEFAULT, lambda2: LAMBDA2_DEFAULT },
): tf.Scalar {
  return tf.tidy(() => {
    let total = tf.mul(mse(output, target), weights.lambda1) as tf.Scalar;
    if (weights.lambda2 !== 0) {
      total = tf.add(total, tf.mul(perceptual.distance(output, target), weights.lambda2)) as tf.Scalar;
    }
    return total;
  });
}

/** Weighted sum of per-image losses for a stack of outputs [N, H, W]
 * against one target, with all conv work batched:
 * sum_i coeff[i] * (lambda1 * MSE_i + lambda2 * perceptual_i). */
export function restorationLossStack(
  outputs: tf.Tensor3D,
  target: tf.Tensor2D,
  coeffs: number[],
  perceptual: Perceptual,
  weights: LossWeights = { lambda1: LAMBDA1_DEFAULT, lambda2: LAMBDA2_DEFAULT },
): tf.Scalar {
  const [n, h, w] = outputs.shape;
  if (n !== coeffs.length) {
    throw new ValidationError(`coeffs length ${coeffs.length} != stack size ${n}`);
  }
  if (target.shape[0] !== h || target.shape[1] !== w) {
    throw new ValidationError(`shape mismatch ${outputs.shape} vs ${target.shape}`);
  }
  return tf.tidy(() => {
    const cv = tf.tensor1d(coeffs, "float32");
    const t3 = target.reshape([1, h, w]);
    const mseVec = tf.mean(tf.square(tf.sub(outputs, t3)), [1, 2]); // [N]
    let total = tf.mul(tf.sum(tf.mul(mseVec, cv)), weights.lambda1) as tf.Scalar;
    if (weights.lambda2 !== 0) {
      const fo = perceptual.featuresBatch(outputs);
      const ft = perceptual.featuresBatch(t3 as tf.Tensor3D);
      const pVec = tf.mean(tf.square(tf.sub(fo, ft)), [1, 2, 3]); // [N]
      total = tf.add(total, tf.mul(tf.sum(tf.mul(pVec, cv)), weights.lambda2)) as tf.Scalar;
    }
    return total;
  });
}

export function psnr(a: tf.Tensor2D, b: tf.Tensor2D, peak = 1.0): number {
  const m = mse(a, b).dataSync()[0];
  if (m === 0) return Infinity;
  return 10 * Math.log10((peak * peak) / m);
}
