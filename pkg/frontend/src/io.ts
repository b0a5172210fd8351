/** Readers/writers for the toolkit's on-disk interchange formats.
 *
 * This package talks to the restoration toolkit exclusively through these
 * files (EVTB event streams, PFM images/flows, manifest JSON) and its CLI —
 * never through its internals.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export class FormatError extends Error {}
export class ValidationError extends Error {}

export interface EventStream {
  width: number;
  height: number;
  /** microseconds; int64 on disk, exact in a double for any sane capture */
  t: Float64Array;
  x: Uint16Array;
  y: Uint16Array;
  p: Int8Array;
}

const EVTB_MAGIC = 0x42545645; // "EVTB" little-endian
const HEADER_BYTES = 20;
const RECORD_BYTES = 16;

export function readEvtb(file: string): EventStream {
  const buf = fs.readFileSync(file);
  if (buf.length < HEADER_BYTES) {
    throw new FormatError(`${file}: truncated header (${buf.length} bytes)`);
  }
  const dv = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  if (dv.getUint32(0, true) !== EVTB_MAGIC) {
    throw new FormatError(`${file}: bad magic`);
  }
  const version = dv.getUint32(4, true);
  if (version !== 1) {
    throw new FormatError(`${file}: unsupported version ${version}`);
  }
  const width = dv.getUint16(8, true);
  const height = dv.getUint16(10, true);
  const count = dv.getBigUint64(12, true);
  if (count > BigInt(Number.MAX_SAFE_INTEGER)) {
    throw new FormatError(`${file}: implausible event count ${count}`);
  }
  const n = Number(count);
  if (buf.length !== HEADER_BYTES + n * RECORD_BYTES) {
    throw new FormatError(
      `${file}: body is ${buf.length - HEADER_BYTES} bytes, expected ${n * RECORD_BYTES}`,
    );
  }
  const t = new Float64Array(n);
  const x = new Uint16Array(n);
  const y = new Uint16Array(n);
  const p = new Int8Array(n);
  for (let i = 0; i < n; i++) {
    const off = HEADER_BYTES + i * RECORD_BYTES;
    t[i] = Number(dv.getBigInt64(off, true));
    x[i] = dv.getUint16(off + 8, true);
    y[i] = dv.getUint16(off + 10, true);
    p[i] = dv.getInt8(off + 12);
  }
  return { width, height, t, x, y, p };
}

export interface PfmImage {
  width: number;
  height: number;
  channels: 1 | 3;
  /** row-major, top-to-bottom, channel-interleaved */
  data: Float32Array;
}

export function readPfm(file: string): PfmImage {
  const buf = fs.readFileSync(file);
  // header: magic line, "W H" line, scale line — each newline-terminated
  let pos = 0;
  const line = (): string => {
    const end = buf.indexOf(0x0a, pos);
    if (end < 0) throw new FormatError(`${file}: truncated header`);
    const s = buf.subarray(pos, end).toString("latin1").trim();
    pos = end + 1;
    return s;
  };
  const magic = line();
  if (magic !== "Pf" && magic !== "PF") {
    throw new FormatError(`${file}: bad magic ${JSON.stringify(magic)}`);
  }
  const channels = magic === "PF" ? 3 : 1;
  const dims = line().split(/\s+/).map(Number);
  if (dims.length !== 2 || !dims.every((d) => Number.isInteger(d) && d > 0)) {
    throw new FormatError(`${file}: malformed dimensions`);
  }
  const [width, height] = dims;
  const scale = Number(line());
  if (!Number.isFinite(scale) || scale === 0) {
    throw new FormatError(`${file}: malformed scale`);
  }
  const little = scale < 0;
  const n = width * height * channels;
  if (buf.length - pos !== n * 4) {
    throw new FormatError(`${file}: payload is ${buf.length - pos} bytes, expected ${n * 4}`);
  }
  const dv = new DataView(buf.buffer, buf.byteOffset + pos, n * 4);
  const data = new Float32Array(n);
  // rows are stored bottom-to-top
  for (let row = 0; row < height; row++) {
    const src = (height - 1 - row) * width * channels;
    for (let i = 0; i < width * channels; i++) {
      data[row * width * channels + i] = dv.getFloat32((src + i) * 4, little);
    }
  }
  return { width, height, channels, data };
}

export function writePfm(file: string, img: PfmImage): void {
  const { width, height, channels, data } = img;
  if (data.length !== width * height * channels) {
    throw new ValidationError(`pfm payload size mismatch for ${file}`);
  }
  const header = Buffer.from(
    `${channels === 3 ? "PF" : "Pf"}\n${width} ${height}\n-1.0\n`,
    "latin1",
  );
  const body = Buffer.alloc(data.length * 4);
  for (let row = 0; row < height; row++) {
    const src = (height - 1 - row) * width * channels;
    for (let i = 0; i < width * channels; i++) {
      body.writeFloatLE(data[src + i], (row * width * channels + i) * 4);
    }
  }
  fs.mkdirSync(path.dirname(file), { recursive: true });
  fs.writeFileSync(file, Buffer.concat([header, body]));
}

/** Flow stored as a color PFM with (u, v, 0) channels. */
export function readFlowPfm(file: string): { u: Float32Array; v: Float32Array; width: number; height: number } {
  const img = readPfm(file);
  if (img.channels !== 3) throw new FormatError(`${file}: flow must be a color pfm`);
  const n = img.width * img.height;
  const u = new Float32Array(n);
  const v = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    u[i] = img.data[3 * i];
    v[i] = img.data[3 * i + 1];
  }
  return { u, v, width: img.width, height: img.height };
}

export function writeFlowPfm(file: string, u: Float32Array, v: Float32Array, width: number, height: number): void {
  const data = new Float32Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    data[3 * i] = u[i];
    data[3 * i + 1] = v[i];
  }
  writePfm(file, { width, height, channels: 3, data });
}

export interface ManifestEntry {
  id: string;
  clean_path: string;
  turbulent_path: string;
  events_path: string;
  tilt_ref_path: string;
  exposure_start: number;
  exposure_end: number;
  t_ref: number;
  c: number;
}

export interface Manifest {
  root: string;
  seed: number;
  entries: ManifestEntry[];
  split: { train: string[]; test: string[] };
}

export function readManifest(file: string): Manifest {
  let doc: any;
  try {
    doc = JSON.parse(fs.readFileSync(file, "utf8"));
  } catch (e) {
    throw new FormatError(`${file}: ${(e as Error).message}`);
  }
  if (typeof doc !== "object" || doc === null || !Array.isArray(doc.entries)) {
    throw new FormatError(`${file}: not a dataset manifest`);
  }
  const root = path.dirname(path.resolve(file));
  const entries: ManifestEntry[] = doc.entries;
  for (const e of entries) {
    for (const key of ["id", "clean_path", "turbulent_path", "events_path"]) {
      if (!(key in e)) throw new FormatError(`${file}: entry missing ${key}`);
    }
  }
  return { root, seed: doc.seed, entries, split: doc.split };
}

export function entriesFor(manifest: Manifest, split: "train" | "test"): ManifestEntry[] {
  const ids = new Set(manifest.split[split]);
  return manifest.entries.filter((e) => ids.has(e.id));
}
