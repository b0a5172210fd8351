#!/usr/bin/env node
/** Command-line interface.
 *
 *   neural-reference train --manifest <path> --config <json> --out <dir>
 *   neural-reference infer --checkpoint <path> --input <dir> [--out <dir>]
 *
 * `--config` accepts either a path to a JSON file or an inline JSON object.
 * Exit codes: 0 success, 2 invalid arguments/inputs, 1 unexpected failure.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { parseArgs } from "node:util";

import { initBackend, tf } from "./backend.js";
import {
  entriesFor,
  readEvtb,
  readManifest,
  readPfm,
  writeFlowPfm,
  writePfm,
  FormatError,
  ValidationError,
} from "./io.js";
import { voxelizeEvents } from "./voxel.js";
import { loadCheckpoint, Model, ToyTrainConfig, trainToy } from "./train.js";

const USAGE = `usage:
  neural-reference train --manifest <path> --config <json|file> --out <dir>
  neural-reference infer --checkpoint <path> --input <dir> [--out <dir>]`;

function parseConfigArg(arg: string): Partial<ToyTrainConfig> {
  const text = arg.trimStart().startsWith("{") ? arg : fs.readFileSync(arg, "utf8");
  let parsed: unknown;
  try {
    parsed = JSON.parse(text);
  } catch (err) {
    throw new FormatError(`config is not valid JSON: ${(err as Error).message}`);
  }
  if (typeof parsed !== "object" || parsed === null || Array.isArray(parsed)) {
    throw new ValidationError("config must be a JSON object");
  }
  return parsed as Partial<ToyTrainConfig>;
}

function requireOption(value: string | undefined, name: string): string {
  if (value === undefined) throw new ValidationError(`missing required option --${name}\n${USAGE}`);
  return value;
}

async function cmdTrain(args: string[]): Promise<void> {
  const { values } = parseArgs({
    args,
    options: {
      manifest: { type: "string" },
      config: { type: "string" },
      out: { type: "string" },
    },
  });
  const manifest = requireOption(values.manifest, "manifest");
  const out = requireOption(values.out, "out");
  const cfg = values.config === undefined ? {} : parseConfigArg(values.config);
  await initBackend("train");
  const result = trainToy(manifest, cfg, out);
  const first = result.log[0];
  const last = result.log[result.log.length - 1];
  if (first && last) {
    process.stdout.write(
      `trained ${result.log.length} epochs: loss ${first.loss.toExponential(3)} -> ` +
        `${last.loss.toExponential(3)}, psnr ${result.initialPsnr.toFixed(2)} -> ` +
        `${result.finalPsnr.toFixed(2)} dB\n`,
    );
  }
  process.stdout.write(`checkpoint: ${result.checkpointPath}\n`);
  process.stdout.write(`metrics: ${result.metricsPath}\n`);
}

function inferOne(
  model: Model,
  imagePath: string,
  eventsPath: string,
  outDir: string,
  window?: { t0: number; t1: number },
): void {
  const img = readPfm(imagePath);
  if (img.channels !== 1) throw new ValidationError(`${imagePath}: expected a grayscale image`);
  const stream = readEvtb(eventsPath);
  if (stream.width !== img.width || stream.height !== img.height) {
    throw new ValidationError(
      `${eventsPath}: event dims ${stream.width}x${stream.height} differ from image ` +
        `${img.width}x${img.height}`,
    );
  }
  const image = tf.tensor2d(img.data, [img.height, img.width]);
  const voxel = voxelizeEvents(stream, model.dnet.cfg.eventBins, window?.t0, window?.t1);
  const out = model.forward(image, voxel);
  const [h, w] = [img.height, img.width];
  writePfm(path.join(outDir, "coarse.pfm"), {
    width: w, height: h, channels: 1, data: out.coarse.dataSync() as Float32Array,
  });
  writePfm(path.join(outDir, "refined.pfm"), {
    width: w, height: h, channels: 1, data: out.refined.dataSync() as Float32Array,
  });
  const flow = out.flow.dataSync() as Float32Array;
  writeFlowPfm(path.join(outDir, "flow.pfm"), flow.subarray(0, h * w), flow.subarray(h * w), w, h);
  tf.dispose([image, voxel, out.integralEstimate, out.coarse, out.refined, out.flow, ...out.flows]);
}

async function cmdInfer(args: string[]): Promise<void> {
  const { values } = parseArgs({
    args,
    options: {
      checkpoint: { type: "string" },
      input: { type: "string" },
      out: { type: "string" },
    },
  });
  const checkpoint = requireOption(values.checkpoint, "checkpoint");
  const input = requireOption(values.input, "input");
  if (!fs.existsSync(input) || !fs.statSync(input).isDirectory()) {
    throw new ValidationError(`input directory not found: ${input}`);
  }
  await initBackend("infer");
  const model = loadCheckpoint(checkpoint);

  const manifestPath = path.join(input, "manifest.json");
  if (fs.existsSync(manifestPath)) {
    const manifest = readManifest(manifestPath);
    const test = entriesFor(manifest, "test");
    const entries = test.length ? test : manifest.entries;
    const outRoot = values.out ?? path.join(input, "neural_out");
    for (const entry of entries) {
      const outDir = path.join(outRoot, entry.id);
      fs.mkdirSync(outDir, { recursive: true });
      inferOne(
        model,
        path.join(manifest.root, entry.turbulent_path),
        path.join(manifest.root, entry.events_path),
        outDir,
        { t0: entry.exposure_start, t1: entry.exposure_end },
      );
      process.stdout.write(`${entry.id}: wrote ${outDir}\n`);
    }
    return;
  }

  const imagePath = path.join(input, "turbulent.pfm");
  const eventsPath = path.join(input, "events.evtb");
  if (!fs.existsSync(imagePath) || !fs.existsSync(eventsPath)) {
    throw new ValidationError(
      `${input}: expected manifest.json, or turbulent.pfm + events.evtb`,
    );
  }
  const outDir = values.out ?? path.join(input, "neural_out");
  fs.mkdirSync(outDir, { recursive: true });
  inferOne(model, imagePath, eventsPath, outDir);
  process.stdout.write(`wrote ${outDir}\n`);
}

export async function main(argv: string[]): Promise<number> {
  try {
    const [command, ...rest] = argv;
    if (command === "train") {
      await cmdTrain(rest);
    } else if (command === "infer") {
      await cmdInfer(rest);
    } else if (command === "--help" || command === "-h" || command === undefined) {
      process.stdout.write(USAGE + "\n");
    } else {
      throw new ValidationError(`unknown command: ${command}\n${USAGE}`);
    }
    return 0;
  } catch (err) {
    if (err instanceof ValidationError || err instanceof FormatError) {
      process.stderr.write(`error: ${(err as Error).message}\n`);
      return 2;
    }
    if (err instanceof Error && err.message.includes("ENOENT")) {
      process.stderr.write(`error: ${err.message}\n`);
      return 2;
    }
    process.stderr.write(`unexpected error: ${(err as Error)?.stack ?? err}\n`);
    return 1;
  }
}

const invokedDirectly = process.argv[1] !== undefined &&
  path.resolve(process.argv[1]) === new URL(import.meta.url).pathname;
if (invokedDirectly) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
