/** Event tensorization: a time-binned voxel grid.
 *
 * Each event spreads its polarity bilinearly between the two nearest bin
 * centers; bin centers sit at k/(bins-1) of the normalized time range, so an
 * event exactly at a center contributes 1.0 to that bin and an event midway
 * between centers contributes 0.5 to each.
 */

import { tf } from "./backend.js";
import { EventStream, ValidationError } from "./io.js";

export function voxelizeEvents(
  stream: EventStream,
  bins: number,
  t0?: number,
  t1?: number,
): tf.Tensor3D {
  if (!Number.isInteger(bins) || bins < 2) {
    throw new ValidationError(`bins must be an integer >= 2, got ${bins}`);
  }
  const { width, height, t, x, y, p } = stream;
  const grid = new Float32Array(bins * height * width);
  const n = t.length;
  if (n > 0) {
    let lo = t0 ?? t[0];
    let hi = t1 ?? t[n - 1];
    if (hi < lo) throw new ValidationError(`time window [${lo}, ${hi}] is reversed`);
    const span = hi > lo ? hi - lo : 1; // degenerate window: everything in bin 0
    for (let i = 0; i < n; i++) {
      const u = (t[i] - lo) / span;
      const c = Math.min(Math.max(u, 0), 1) * (bins - 1);
      const b0 = Math.min(Math.floor(c), bins - 2);
      const f = c - b0;
      const cell = y[i] * width + x[i];
      grid[b0 * height * width + cell] += p[i] * (1 - f);
      grid[(b0 + 1) * height * width + cell] += p[i] * f;
    }
  }
  return tf.tensor3d(grid, [bins, height, width]);
}

/** Per-pixel activity proxy in [0, 1]: total absolute polarity mass, scaled
 * by its 99th percentile (used as the guidance map input downstream). */
export function activityMap(voxel: tf.Tensor3D): tf.Tensor2D {
  return tf.tidy(() => {
    const mass = voxel.abs().sum(0) as tf.Tensor2D;
    const values = mass.dataSync().slice().sort((a, b) => a - b);
    const hi = values.length ? values[Math.floor(0.99 * (values.length - 1))] : 0;
    if (hi <= 0) return tf.zerosLike(mass);
    return mass.div(hi).clipByValue(0, 1) as tf.Tensor2D;
  }) as tf.Tensor2D;
}
