/** Runtime backend selection.
 *
 * The wasm backend (XNNPACK) is ~10x faster than plain cpu for the conv
 * workloads here. Training avoids the gradient kernels missing from the wasm
 * build (conv filter gradients, segment sums) by formulating its backward
 * passes with forward kernels — conv2dTranspose, dilated conv2d, scatter —
 * so a smoke test checks exactly the kernel classes each mode relies on:
 *
 *   - "infer": forward ops only.
 *   - "train": forward ops plus the backward-pass formulations.
 *
 * NEURAL_REF_BACKEND=cpu|wasm overrides the preference order; a forced
 * backend that fails the mode's smoke test is an error rather than a silent
 * fallback.
 */

import * as tf from "@tensorflow/tfjs";
import "@tensorflow/tfjs-backend-wasm";

export type BackendMode = "train" | "infer";

let chosen: { mode: BackendMode; promise: Promise<string> } | null = null;

function forwardSmoke(): void {
  tf.tidy(() => {
    const x = tf.randomNormal([1, 4, 4, 2]);
    const w = tf.randomNormal([3, 3, 2, 2]);
    const idx = tf.tensor1d([0, 3, 5], "int32");
    const c = tf.conv2d(x as tf.Tensor4D, w as tf.Tensor4D, 1, "same");
    tf.gather(c.reshape([16, 2]), idx).dataSync();
    tf.image.resizeBilinear(c, [8, 8], true).dataSync();
  });
}

function gradientSmoke(): void {
  forwardSmoke();
  tf.tidy(() => {
    // kernels the hand-rolled backward passes execute
    const x = tf.randomNormal([1, 6, 6, 2]) as tf.Tensor4D;
    const w = tf.randomNormal([3, 3, 2, 4]) as tf.Tensor4D;
    const dy = tf.randomNormal([1, 3, 3, 4]) as tf.Tensor4D;
    tf.conv2dTranspose(dy, w, [1, 6, 6, 2], 2, "same").dataSync();
    const xT = tf.transpose(tf.pad(x, [[0, 0], [1, 1], [1, 1], [0, 0]]), [3, 1, 2, 0]);
    tf.conv2d(xT as tf.Tensor4D, tf.transpose(dy, [1, 2, 0, 3]) as tf.Tensor4D, 1, "valid", "NHWC", 2)
      .dataSync();
    tf.scatterND(tf.tensor2d([0, 2, 2], [3, 1], "int32"), tf.randomNormal([3, 5]), [4, 5]).dataSync();
    // backprop through the remaining elementwise/resize op classes
    const g = tf.grads((a: tf.Tensor) =>
      tf.sum(tf.image.resizeBilinear(
        tf.sigmoid(tf.leakyRelu(tf.clipByValue(a as tf.Tensor4D, -2, 2), 0.1)) as tf.Tensor4D,
        [8, 8],
        true,
      )),
    )([x]);
    g.forEach((t) => t.dataSync());
  });
}

/** Picks and readies a backend. The first call fixes the process-wide
 * backend; later calls reuse it. Asking for "train" after an "infer"
 * initialization re-runs the gradient smoke test on the already-chosen
 * backend and errors if it cannot train (switching backends under live
 * tensors is not safe). */
export function initBackend(mode: BackendMode = "train"): Promise<string> {
  if (chosen) {
    const prev = chosen;
    if (mode === "train" && prev.mode === "infer") {
      chosen = {
        mode,
        promise: prev.promise.then((name) => {
          try {
            gradientSmoke();
          } catch (err) {
            throw new ValidationBackendError(
              `backend ${name} was initialized for inference and cannot train ` +
                `(${(err as Error).message}); initialize training mode first`,
            );
          }
          return name;
        }),
      };
    }
    return chosen.promise;
  }
  const promise = (async () => {
    const forced = process.env.NEURAL_REF_BACKEND;
    if (forced && forced !== "wasm" && forced !== "cpu") {
      throw new ValidationBackendError(
        `NEURAL_REF_BACKEND must be "wasm" or "cpu", got ${JSON.stringify(forced)}`,
      );
    }
    const smoke = mode === "train" ? gradientSmoke : forwardSmoke;
    const order = forced ? [forced] : ["wasm", "cpu"];
    for (const name of order) {
      try {
        if (!(await tf.setBackend(name))) continue;
        await tf.ready();
        smoke();
        return name;
      } catch (err) {
        if (forced) {
          throw new ValidationBackendError(
            `backend ${name} cannot run mode "${mode}": ${(err as Error).message}`,
          );
        }
      }
    }
    await tf.setBackend("cpu");
    await tf.ready();
    return "cpu";
  })();
  chosen = { mode, promise };
  return promise;
}

export class ValidationBackendError extends Error {}

export { tf };
