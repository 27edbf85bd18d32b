/**
 * Interchange formats shared with the compression pipeline.
 *
 * A network manifest is a JSON document listing conv layers with their
 * geometry plus two raw float32 little-endian blobs each (weights and
 * dataset-averaged loss gradients), paths relative to the manifest. A
 * compressed manifest describes realized layers: variant, kept input
 * channels, retained rank and factor blobs. Kernel tensors travel in
 * (out, in, kh, kw) order; TensorFlow.js stores conv kernels as
 * (kh, kw, in, out), so this module owns the transposition.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";
import { z } from "zod";

import { DataError } from "./errors.js";

// ---------------------------------------------------------------------------
// Schemas

const positiveInt = z.number().int().positive();

export const LayerEntrySchema = z.object({
  name: z.string().min(1),
  n: positiveInt,
  c: positiveInt,
  k: positiveInt,
  stride: positiveInt,
  h_out: positiveInt,
  w_out: positiveInt,
  compressible: z.boolean(),
  weight_blob: z.string().min(1),
  gradient_blob: z.string().min(1),
});
export type LayerEntry = z.infer<typeof LayerEntrySchema>;

export const NetworkManifestSchema = z.object({
  layers: z.array(LayerEntrySchema),
  metadata: z.record(z.string(), z.string()).default({}),
});
export type NetworkManifest = z.infer<typeof NetworkManifestSchema>;

const BlobRefSchema = z.object({
  path: z.string().min(1),
  shape: z.array(positiveInt).min(1),
});
export type BlobRef = z.infer<typeof BlobRefSchema>;

export const CompressedEntrySchema = z
  .object({
    name: z.string().min(1),
    variant: z.enum(["pruned", "decomposed"]),
    kept_channels: z.array(z.number().int().nonnegative()),
    r_bar: positiveInt.nullable(),
    n: positiveInt,
    c: positiveInt,
    k: positiveInt,
    stride: positiveInt,
    h_out: positiveInt,
    w_out: positiveInt,
    blobs: z.object({
      weights: BlobRefSchema.optional(),
      w1: BlobRefSchema.optional(),
      w2: BlobRefSchema.optional(),
    }),
  })
  .refine(
    (e) => (e.variant === "pruned" ? e.blobs.weights !== undefined : e.blobs.w1 !== undefined && e.blobs.w2 !== undefined),
    { message: "pruned layers store 'weights'; decomposed layers store 'w1' and 'w2'" },
  );
export type CompressedEntry = z.infer<typeof CompressedEntrySchema>;

export const CompressedManifestSchema = z.object({
  layers: z.array(CompressedEntrySchema),
  metadata: z.record(z.string(), z.string()).default({}),
});
export type CompressedManifest = z.infer<typeof CompressedManifestSchema>;

// ---------------------------------------------------------------------------
// Raw blobs

/** Serialize values as raw row-major little-endian float32 bytes. */
export function encodeBlob(values: Float32Array | number[]): Buffer {
  const arr = values instanceof Float32Array ? values : Float32Array.from(values);
  const buf = Buffer.allocUnsafe(arr.length * 4);
  for (let i = 0; i < arr.length; i++) {
    buf.writeFloatLE(arr[i], i * 4);
  }
  return buf;
}

/** Parse a raw little-endian float32 blob, checking length and finiteness. */
export function decodeBlob(buf: Buffer, shape: number[]): Float32Array {
  const count = shape.reduce((acc, d) => acc * d, 1);
  if (buf.length !== count * 4) {
    throw new DataError(`blob holds ${buf.length} bytes, expected ${count * 4} for shape [${shape.join(", ")}]`);
  }
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    const v = buf.readFloatLE(i * 4);
    if (!Number.isFinite(v)) {
      throw new DataError(`blob contains a non-finite value at element ${i}`);
    }
    out[i] = v;
  }
  return out;
}

export function writeBlobFile(filePath: string, values: Float32Array | number[]): void {
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  fs.writeFileSync(filePath, encodeBlob(values));
}

export function readBlobFile(filePath: string, shape: number[]): Float32Array {
  let buf: Buffer;
  try {
    buf = fs.readFileSync(filePath);
  } catch (err) {
    throw new DataError(`cannot read blob ${filePath}: ${(err as Error).message}`);
  }
  try {
    return decodeBlob(buf, shape);
  } catch (err) {
    throw new DataError(`${filePath}: ${(err as Error).message}`);
  }
}

// ---------------------------------------------------------------------------
// JSON documents

function sortKeysDeep(value: unknown): unknown {
  if (Array.isArray(value)) {
    return value.map(sortKeysDeep);
  }
  if (value !== null && typeof value === "object") {
    const source = value as Record<string, unknown>;
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(source).sort()) {
      out[key] = sortKeysDeep(source[key]);
    }
    return out;
  }
  return value;
}

/** Write JSON with sorted keys, two-space indent and a trailing newline. */
export function writeJsonFile(filePath: string, doc: unknown): void {
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  fs.writeFileSync(filePath, JSON.stringify(sortKeysDeep(doc), null, 2) + "\n");
}

export function readJsonFile(filePath: string): unknown {
  let text: string;
  try {
    text = fs.readFileSync(filePath, "utf-8");
  } catch (err) {
    throw new DataError(`cannot read ${filePath}: ${(err as Error).message}`);
  }
  try {
    return JSON.parse(text);
  } catch (err) {
    throw new DataError(`${filePath} is not valid JSON: ${(err as Error).message}`);
  }
}

/** Layer name made safe for use inside file names. */
export function sanitizeName(name: string): string {
  return name.replace(/[^A-Za-z0-9_.-]/g, "_");
}

// ---------------------------------------------------------------------------
// Kernel layout

/**
 * Flatten a TensorFlow.js conv kernel (kh, kw, in, out) into row-major
 * (out, in, kh, kw) order for the interchange blobs.
 */
export function kernelToInterchange(kernel: tf.Tensor4D): Float32Array {
  return tf.tidy(() => tf.transpose(kernel, [3, 2, 0, 1]).dataSync() as Float32Array);
}

/**
 * Rebuild a TensorFlow.js conv kernel from interchange data laid out as
 * row-major (out, in, kh, kw).
 */
export function kernelFromInterchange(data: Float32Array, shape: [number, number, number, number]): tf.Tensor4D {
  const [n, c, kh, kw] = shape;
  return tf.tidy(() => tf.transpose(tf.tensor4d(data, [n, c, kh, kw]), [2, 3, 1, 0]));
}

// ---------------------------------------------------------------------------
// Network manifests

export interface NetworkLayerTensors {
  entry: LayerEntry;
  /** Row-major (n, c, k, k). */
  weights: Float32Array;
  /** Row-major (n, c, k, k). */
  gradients: Float32Array;
}

export interface NetworkBundle {
  layers: NetworkLayerTensors[];
  metadata: Record<string, string>;
}

/**
 * Write a network manifest plus one weight and one gradient blob per layer,
 * blob names derived from the sanitized layer name.
 */
export function writeNetworkManifest(bundle: NetworkBundle, manifestPath: string): void {
  const dir = path.dirname(manifestPath);
  const entries: LayerEntry[] = [];
  const seen = new Set<string>();
  for (const layer of bundle.layers) {
    const entry = layer.entry;
    if (seen.has(entry.name)) {
      throw new DataError(`duplicate layer name ${JSON.stringify(entry.name)}`);
    }
    seen.add(entry.name);
    const expected = entry.n * entry.c * entry.k * entry.k;
    if (layer.weights.length !== expected || layer.gradients.length !== expected) {
      throw new DataError(`layer ${JSON.stringify(entry.name)}: tensor size does not match the record`);
    }
    const safe = sanitizeName(entry.name);
    const weightBlob = `${safe}__w.bin`;
    const gradientBlob = `${safe}__g.bin`;
    writeBlobFile(path.join(dir, weightBlob), layer.weights);
    writeBlobFile(path.join(dir, gradientBlob), layer.gradients);
    entries.push({ ...entry, weight_blob: weightBlob, gradient_blob: gradientBlob });
  }
  writeJsonFile(manifestPath, { layers: entries, metadata: bundle.metadata });
}

/** Load a network manifest and every referenced blob. */
export function readNetworkManifest(manifestPath: string): NetworkBundle {
  const doc = readJsonFile(manifestPath);
  const parsed = NetworkManifestSchema.safeParse(doc);
  if (!parsed.success) {
    throw new DataError(`${manifestPath}: ${parsed.error.issues[0]?.message ?? "invalid manifest"}`);
  }
  const dir = path.dirname(manifestPath);
  const layers: NetworkLayerTensors[] = [];
  const seen = new Set<string>();
  for (const entry of parsed.data.layers) {
    if (seen.has(entry.name)) {
      throw new DataError(`${manifestPath}: duplicate layer name ${JSON.stringify(entry.name)}`);
    }
    seen.add(entry.name);
    const shape = [entry.n, entry.c, entry.k, entry.k];
    layers.push({
      entry,
      weights: readBlobFile(path.join(dir, entry.weight_blob), shape),
      gradients: readBlobFile(path.join(dir, entry.gradient_blob), shape),
    });
  }
  return { layers, metadata: parsed.data.metadata };
}

// ---------------------------------------------------------------------------
// Compressed manifests

export interface CompressedLayerTensors {
  entry: CompressedEntry;
  /** Pruned variant: row-major (n, kept, k, k). */
  weights?: Float32Array;
  /** Decomposed variant: row-major (r_bar, kept, k, k). */
  w1?: Float32Array;
  /** Decomposed variant: row-major (n, r_bar, 1, 1). */
  w2?: Float32Array;
}

export interface CompressedNetwork {
  layers: CompressedLayerTensors[];
  metadata: Record<string, string>;
}

/** Load a compressed manifest and every referenced factor blob. */
export function readCompressedManifest(manifestPath: string): CompressedNetwork {
  const doc = readJsonFile(manifestPath);
  const parsed = CompressedManifestSchema.safeParse(doc);
  if (!parsed.success) {
    throw new DataError(`${manifestPath}: ${parsed.error.issues[0]?.message ?? "invalid compressed manifest"}`);
  }
  const dir = path.dirname(manifestPath);
  const layers: CompressedLayerTensors[] = [];
  for (const entry of parsed.data.layers) {
    const kept = entry.kept_channels;
    for (let i = 1; i < kept.length; i++) {
      if (kept[i] <= kept[i - 1]) {
        throw new DataError(`${manifestPath}: layer ${JSON.stringify(entry.name)}: kept_channels must be strictly increasing`);
      }
    }
    if (kept.length > 0 && kept[kept.length - 1] >= entry.c) {
      throw new DataError(`${manifestPath}: layer ${JSON.stringify(entry.name)}: kept_channels exceed c=${entry.c}`);
    }
    if (entry.variant === "pruned") {
      const ref = entry.blobs.weights!;
      layers.push({ entry, weights: readBlobFile(path.join(dir, ref.path), ref.shape) });
    } else {
      const ref1 = entry.blobs.w1!;
      const ref2 = entry.blobs.w2!;
      layers.push({
        entry,
        w1: readBlobFile(path.join(dir, ref1.path), ref1.shape),
        w2: readBlobFile(path.join(dir, ref2.path), ref2.shape),
      });
    }
  }
  return { layers, metadata: parsed.data.metadata };
}

/**
 * Write a compressed manifest plus factor blobs. Primarily used by tests and
 * tooling to fabricate pass-through manifests; the compression pipeline is
 * the usual producer.
 */
export function writeCompressedManifest(network: CompressedNetwork, manifestPath: string): void {
  const dir = path.dirname(manifestPath);
  const entries: CompressedEntry[] = [];
  for (const layer of network.layers) {
    const entry = layer.entry;
    const safe = sanitizeName(entry.name);
    const blobs: CompressedEntry["blobs"] = {};
    if (entry.variant === "pruned") {
      if (!layer.weights) {
        throw new DataError(`layer ${JSON.stringify(entry.name)}: pruned variant needs a weights tensor`);
      }
      const shape = [entry.n, entry.kept_channels.length, entry.k, entry.k];
      const blob = `${safe}__w.bin`;
      writeBlobFile(path.join(dir, blob), layer.weights);
      blobs.weights = { path: blob, shape };
    } else {
      if (!layer.w1 || !layer.w2 || entry.r_bar === null) {
        throw new DataError(`layer ${JSON.stringify(entry.name)}: decomposed variant needs w1, w2 and r_bar`);
      }
      const blob1 = `${safe}__w1.bin`;
      const blob2 = `${safe}__w2.bin`;
      writeBlobFile(path.join(dir, blob1), layer.w1);
      writeBlobFile(path.join(dir, blob2), layer.w2);
      blobs.w1 = { path: blob1, shape: [entry.r_bar, entry.kept_channels.length, entry.k, entry.k] };
      blobs.w2 = { path: blob2, shape: [entry.n, entry.r_bar, 1, 1] };
    }
    entries.push({ ...entry, blobs });
  }
  writeJsonFile(manifestPath, { layers: entries, metadata: network.metadata });
}
