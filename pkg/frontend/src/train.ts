/** Toy end-to-end training of D-Net + T-Net on datasets produced by the
 * restoration toolkit's `gen-dataset` command.
 *
 * Both networks train simultaneously under one objective: the coarse output
 * gets half weight, and every flow iteration's warped result is supervised
 * with geometrically increasing weight toward the last (gamma = 0.8), which
 * pushes later iterations to improve on earlier ones. Optimization is Adam
 * under a cosine-annealed learning rate with random-crop augmentation.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { tf } from "./backend.js";
import {
  entriesFor,
  Manifest,
  ManifestEntry,
  readEvtb,
  readManifest,
  readPfm,
  ValidationError,
} from "./io.js";
import { Prng } from "./prng.js";
import { Params } from "./nn.js";
import { DNet, DNetConfig } from "./dnet.js";
import { TNet, TNetConfig, warpStack } from "./tnet.js";
import { activityMap, voxelizeEvents } from "./voxel.js";
import {
  LAMBDA1_DEFAULT,
  LAMBDA2_DEFAULT,
  Perceptual,
  psnr,
  restorationLossStack,
} from "./loss.js";

export interface ToyTrainConfig {
  dnet: Partial<DNetConfig>;
  tnet: Partial<TNetConfig>;
  epochs: number;
  lr: number;
  crop: number;
  seed: number;
  lambda1: number;
  lambda2: number;
}

export const TRAIN_DEFAULTS: ToyTrainConfig = {
  dnet: {},
  tnet: {},
  epochs: 20,
  lr: 1e-4,
  crop: 48,
  seed: 0,
  lambda1: LAMBDA1_DEFAULT,
  lambda2: LAMBDA2_DEFAULT,
};

export function cosineLr(step: number, totalSteps: number, lr0: number): number {
  if (totalSteps <= 1) return lr0;
  return lr0 * 0.5 * (1 + Math.cos((Math.PI * step) / (totalSteps - 1)));
}

export class Model {
  readonly dnet: DNet;
  readonly tnet: TNet;
  readonly params: Params;
  readonly perceptual: Perceptual;

  constructor(dnetCfg: Partial<DNetConfig>, tnetCfg: Partial<TNetConfig>, seed: number) {
    this.params = new Params();
    const prng = new Prng(seed);
    this.dnet = new DNet(dnetCfg, prng.substream(1), this.params);
    this.tnet = new TNet(tnetCfg, prng.substream(2), this.params);
    this.perceptual = new Perceptual();
  }

  forward(image: tf.Tensor2D, voxel: tf.Tensor3D): {
    integralEstimate: tf.Tensor2D;
    coarse: tf.Tensor2D;
    flow: tf.Tensor3D;
    flows: tf.Tensor3D[];
    refined: tf.Tensor2D;
  } {
    const d = this.dnet.forward(image, voxel);
    const vmap = activityMap(voxel);
    const t = this.tnet.forward(d.coarse, vmap);
    vmap.dispose();
    return { ...d, ...t };
  }
}

/** One loaded dataset sample held as plain arrays (crops are cut per step). */
export interface Sample {
  id: string;
  width: number;
  height: number;
  turbulent: Float32Array;
  clean: Float32Array;
  /** [bins * H * W] voxel grid over the entry's exposure window */
  voxel: Float32Array;
  bins: number;
}

export function loadSample(manifest: Manifest, entry: ManifestEntry, bins: number): Sample {
  const turb = readPfm(path.join(manifest.root, entry.turbulent_path));
  const clean = readPfm(path.join(manifest.root, entry.clean_path));
  if (turb.channels !== 1 || clean.channels !== 1) {
    throw new ValidationError(`${entry.id}: expected single-channel images`);
  }
  if (turb.width !== clean.width || turb.height !== clean.height) {
    throw new ValidationError(`${entry.id}: clean/turbulent dims differ`);
  }
  const stream = readEvtb(path.join(manifest.root, entry.events_path));
  if (stream.width !== turb.width || stream.height !== turb.height) {
    throw new ValidationError(`${entry.id}: event stream dims differ from images`);
  }
  const voxelT = voxelizeEvents(stream, bins, entry.exposure_start, entry.exposure_end);
  const voxel = voxelT.dataSync().slice() as Float32Array;
  voxelT.dispose();
  return {
    id: entry.id,
    width: turb.width,
    height: turb.height,
    turbulent: turb.data,
    clean: clean.data,
    voxel,
    bins,
  };
}

function cropPlane(src: Float32Array, w: number, y0: number, x0: number, size: number): Float32Array {
  const out = new Float32Array(size * size);
  for (let y = 0; y < size; y++) {
    out.set(src.subarray((y0 + y) * w + x0, (y0 + y) * w + x0 + size), y * size);
  }
  return out;
}

export function cropSample(s: Sample, y0: number, x0: number, size: number): {
  image: tf.Tensor2D;
  clean: tf.Tensor2D;
  voxel: tf.Tensor3D;
} {
  if (y0 < 0 || x0 < 0 || y0 + size > s.height || x0 + size > s.width) {
    throw new ValidationError(`crop ${size} at (${y0}, ${x0}) outside ${s.height}x${s.width}`);
  }
  const vox = new Float32Array(s.bins * size * size);
  for (let b = 0; b < s.bins; b++) {
    vox.set(cropPlane(s.voxel.subarray(b * s.height * s.width), s.width, y0, x0, size), b * size * size);
  }
  return {
    image: tf.tensor2d(cropPlane(s.turbulent, s.width, y0, x0, size), [size, size]),
    clean: tf.tensor2d(cropPlane(s.clean, s.width, y0, x0, size), [size, size]),
    voxel: tf.tensor3d(vox, [s.bins, size, size]),
  };
}

const GAMMA = 0.8;

/** Combined objective: the coarse output at half weight plus every flow
 * iteration's warped result, weighted geometrically toward the last
 * (gamma^(n-1-i)), so later iterations are pushed to improve on earlier
 * ones. All terms are scored in one batched stack. */
export function stepLoss(
  model: Model,
  image: tf.Tensor2D,
  voxel: tf.Tensor3D,
  clean: tf.Tensor2D,
  weights: { lambda1: number; lambda2: number },
): tf.Scalar {
  return tf.tidy(() => {
    const out = model.forward(image, voxel);
    const n = out.flows.length;
    const warped = warpStack(out.coarse, out.flows); // [n,H,W]
    const stack = tf.concat([out.coarse.expandDims(0), warped]) as tf.Tensor3D;
    const coeffs = [0.5, ...out.flows.map((_, i) => GAMMA ** (n - 1 - i))];
    return restorationLossStack(stack, clean, coeffs, model.perceptual, weights);
  });
}

export interface EpochLog {
  epoch: number;
  loss: number;
  psnr: number;
  lr: number;
}

export interface ToyTrainResult {
  checkpointPath: string;
  metricsPath: string;
  log: EpochLog[];
  initialPsnr: number;
  finalPsnr: number;
}

function evalPsnr(model: Model, samples: Sample[], crop: number): number {
  let total = 0;
  for (const s of samples) {
    const y0 = Math.floor((s.height - crop) / 2);
    const x0 = Math.floor((s.width - crop) / 2);
    const { image, clean, voxel } = cropSample(s, y0, x0, crop);
    const out = model.forward(image, voxel);
    total += psnr(out.refined, clean);
    tf.dispose([image, clean, voxel, out.integralEstimate, out.coarse, out.refined, out.flow, ...out.flows]);
  }
  return total / samples.length;
}

/** Deterministic validation loss over the test split (center crops). */
export function validationLoss(model: Model, manifest: Manifest, crop: number, weights: {
  lambda1: number; lambda2: number;
}): number {
  const entries = entriesFor(manifest, "test");
  const pool = entries.length ? entries : entriesFor(manifest, "train");
  let total = 0;
  for (const entry of pool) {
    const s = loadSample(manifest, entry, model.dnet.cfg.eventBins);
    const y0 = Math.floor((s.height - crop) / 2);
    const x0 = Math.floor((s.width - crop) / 2);
    const { image, clean, voxel } = cropSample(s, y0, x0, crop);
    const l = stepLoss(model, image, voxel, clean, weights);
    total += l.dataSync()[0];
    tf.dispose([image, clean, voxel, l]);
  }
  return total / pool.length;
}

export function trainToy(
  manifestPath: string,
  cfgPartial: Partial<ToyTrainConfig>,
  outDir: string,
): ToyTrainResult {
  const cfg = { ...TRAIN_DEFAULTS, ...cfgPartial };
  const manifest = readManifest(manifestPath);
  const model = new Model(cfg.dnet, cfg.tnet, cfg.seed);
  const bins = model.dnet.cfg.eventBins;

  const trainEntries = entriesFor(manifest, "train");
  if (trainEntries.length === 0) {
    throw new ValidationError("manifest has no train entries");
  }
  const samples = trainEntries.map((e) => loadSample(manifest, e, bins));
  for (const s of samples) {
    if (s.height < cfg.crop || s.width < cfg.crop) {
      throw new ValidationError(`sample ${s.id} smaller than crop ${cfg.crop}`);
    }
  }

  const weights = { lambda1: cfg.lambda1, lambda2: cfg.lambda2 };
  const prng = new Prng(cfg.seed).substream(9);
  const optimizer = tf.train.adam(cfg.lr);
  const stepsPerEpoch = samples.length;
  const totalSteps = cfg.epochs * stepsPerEpoch;

  fs.mkdirSync(outDir, { recursive: true });
  const metricsPath = path.join(outDir, "metrics.jsonl");
  fs.writeFileSync(metricsPath, "");

  const initialPsnr = evalPsnr(model, samples, cfg.crop);
  const log: EpochLog[] = [];
  let step = 0;
  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    let epochLoss = 0;
    for (let i = 0; i < stepsPerEpoch; i++) {
      const s = samples[prng.int(samples.length)];
      const y0 = prng.int(s.height - cfg.crop + 1);
      const x0 = prng.int(s.width - cfg.crop + 1);
      const { image, clean, voxel } = cropSample(s, y0, x0, cfg.crop);
      (optimizer as any).learningRate = cosineLr(step, totalSteps, cfg.lr);
      const lossT = optimizer.minimize(
        () => stepLoss(model, image, voxel, clean, weights),
        true,
        model.params.trainable(),
      ) as tf.Scalar;
      epochLoss += lossT.dataSync()[0];
      tf.dispose([image, clean, voxel, lossT]);
      step++;
    }
    const entry: EpochLog = {
      epoch,
      loss: epochLoss / stepsPerEpoch,
      psnr: evalPsnr(model, samples, cfg.crop),
      lr: cosineLr(step - 1, totalSteps, cfg.lr),
    };
    log.push(entry);
    fs.appendFileSync(metricsPath, JSON.stringify(entry) + "\n");
  }
  const finalPsnr = log.length ? log[log.length - 1].psnr : initialPsnr;

  const checkpointPath = path.join(outDir, "checkpoint.json");
  saveCheckpoint(model, cfg, checkpointPath);
  return { checkpointPath, metricsPath, log, initialPsnr, finalPsnr };
}

export interface Checkpoint {
  version: number;
  dnet: Partial<DNetConfig>;
  tnet: Partial<TNetConfig>;
  seed: number;
  weights: Record<string, { shape: number[]; data: string }>;
}

export function saveCheckpoint(model: Model, cfg: ToyTrainConfig, file: string): void {
  const weights: Checkpoint["weights"] = {};
  for (const [name, v] of model.params.vars) {
    const data = v.dataSync() as Float32Array;
    weights[name] = {
      shape: v.shape.slice(),
      data: Buffer.from(data.buffer, data.byteOffset, data.byteLength).toString("base64"),
    };
  }
  const doc: Checkpoint = {
    version: 1,
    dnet: model.dnet.cfg,
    tnet: model.tnet.cfg,
    seed: cfg.seed,
    weights,
  };
  fs.mkdirSync(path.dirname(file), { recursive: true });
  fs.writeFileSync(file, JSON.stringify(doc));
}

export function loadCheckpoint(file: string): Model {
  const doc: Checkpoint = JSON.parse(fs.readFileSync(file, "utf8"));
  if (doc.version !== 1) throw new ValidationError(`unsupported checkpoint version ${doc.version}`);
  const model = new Model(doc.dnet, doc.tnet, doc.seed);
  for (const [name, v] of model.params.vars) {
    const saved = doc.weights[name];
    if (!saved) throw new ValidationError(`checkpoint missing weights for ${name}`);
    const buf = Buffer.from(saved.data, "base64");
    const arr = new Float32Array(buf.buffer, buf.byteOffset, buf.byteLength / 4);
    v.assign(tf.tensor(Array.from(arr), saved.shape, "float32"));
  }
  return model;
}
