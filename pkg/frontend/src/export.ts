/**
 * Export a TensorFlow.js conv network into the interchange format: one
 * manifest entry per exportable conv layer with its weights and the
 * dataset-averaged loss gradient, both as (out, in, kh, kw) float32 blobs.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";
import { z } from "zod";

import { DataError } from "./errors.js";
import {
  LayerEntry,
  NetworkLayerTensors,
  kernelToInterchange,
  readBlobFile,
  readJsonFile,
  writeBlobFile,
  writeJsonFile,
  writeNetworkManifest,
} from "./interchange.js";

// ---------------------------------------------------------------------------
// Datasets

export interface DatasetBatch {
  /** Model input, shape (batch, h, w, c). */
  xs: tf.Tensor4D;
  /** Loss target, shaped like the model output. */
  ys: tf.Tensor;
}

export type LossFn = (yTrue: tf.Tensor, yPred: tf.Tensor) => tf.Scalar;

/** Mean squared error, the default export loss. */
export const meanSquaredError: LossFn = (yTrue, yPred) => tf.losses.meanSquaredError(yTrue, yPred);

const DatasetFileSchema = z.object({
  batches: z
    .array(
      z.object({
        x: z.string().min(1),
        x_shape: z.array(z.number().int().positive()).length(4),
        y: z.string().min(1),
        y_shape: z.array(z.number().int().positive()).min(1),
      }),
    )
    .min(1),
});

/** Write batches as dataset.json plus one blob per tensor. */
export function saveDatasetDir(batches: readonly DatasetBatch[], dir: string): void {
  if (batches.length === 0) {
    throw new DataError("dataset has no batches");
  }
  fs.mkdirSync(dir, { recursive: true });
  const entries = batches.map((batch, i) => {
    const x = `batch${i}_x.bin`;
    const y = `batch${i}_y.bin`;
    writeBlobFile(path.join(dir, x), batch.xs.dataSync() as Float32Array);
    writeBlobFile(path.join(dir, y), batch.ys.dataSync() as Float32Array);
    return { x, x_shape: batch.xs.shape, y, y_shape: batch.ys.shape };
  });
  writeJsonFile(path.join(dir, "dataset.json"), { batches: entries });
}

/** Load a dataset directory written by {@link saveDatasetDir}. */
export function loadDatasetDir(dir: string): DatasetBatch[] {
  const docPath = path.join(dir, "dataset.json");
  const parsed = DatasetFileSchema.safeParse(readJsonFile(docPath));
  if (!parsed.success) {
    throw new DataError(`${docPath}: ${parsed.error.issues[0]?.message ?? "invalid dataset file"}`);
  }
  return parsed.data.batches.map((entry) => ({
    xs: tf.tensor4d(readBlobFile(path.join(dir, entry.x), entry.x_shape), entry.x_shape as [number, number, number, number]),
    ys: tf.tensor(readBlobFile(path.join(dir, entry.y), entry.y_shape), entry.y_shape),
  }));
}

// ---------------------------------------------------------------------------
// Conv layer discovery

export interface ExportableConv {
  layer: tf.layers.Layer;
  n: number;
  c: number;
  k: number;
  stride: number;
  hOut: number;
  wOut: number;
}

export interface SkippedLayer {
  name: string;
  reason: string;
}

function asPair(value: number | number[]): [number, number] {
  return Array.isArray(value) ? [value[0], value[1] ?? value[0]] : [value, value];
}

/**
 * Partition a model's layers into convs expressible in the interchange
 * geometry (square kernel, equal strides, channels-last, no dilation) and
 * everything else. Skipped layers still shape each conv's h_out/w_out, which
 * is how their effect reaches the manifest.
 */
export function enumerateConvLayers(model: tf.LayersModel): {
  exportable: ExportableConv[];
  skipped: SkippedLayer[];
} {
  const exportable: ExportableConv[] = [];
  const skipped: SkippedLayer[] = [];
  for (const layer of model.layers) {
    const className = layer.getClassName();
    if (className === "InputLayer") {
      continue;
    }
    if (className !== "Conv2D") {
      skipped.push({ name: layer.name, reason: `not a 2-D convolution (${className})` });
      continue;
    }
    const config = layer.getConfig() as Record<string, unknown>;
    const [kh, kw] = asPair(config.kernelSize as number | number[]);
    const [sh, sw] = asPair(config.strides as number | number[]);
    const [dh, dw] = asPair((config.dilationRate as number | number[]) ?? 1);
    const dataFormat = (config.dataFormat as string) ?? "channelsLast";
    if (kh !== kw) {
      skipped.push({ name: layer.name, reason: `non-square kernel ${kh}x${kw}` });
      continue;
    }
    if (sh !== sw) {
      skipped.push({ name: layer.name, reason: `unequal strides ${sh}x${sw}` });
      continue;
    }
    if (dh !== 1 || dw !== 1) {
      skipped.push({ name: layer.name, reason: "dilated convolution" });
      continue;
    }
    if (dataFormat !== "channelsLast") {
      skipped.push({ name: layer.name, reason: `unsupported data format ${dataFormat}` });
      continue;
    }
    const outputShape = layer.outputShape as Array<number | null>;
    const [hOut, wOut] = [outputShape[1], outputShape[2]];
    if (typeof hOut !== "number" || typeof wOut !== "number" || hOut < 1 || wOut < 1) {
      skipped.push({ name: layer.name, reason: "dynamic spatial dimensions" });
      continue;
    }
    const kernelShape = layer.getWeights()[0].shape as number[];
    exportable.push({
      layer,
      n: kernelShape[3],
      c: kernelShape[2],
      k: kh,
      stride: sh,
      hOut,
      wOut,
    });
  }
  return { exportable, skipped };
}

// ---------------------------------------------------------------------------
// Gradient averaging

function kernelVariable(layer: tf.layers.Layer): tf.Variable {
  for (const weight of layer.weights) {
    if (weight.name.endsWith("/kernel") || weight.originalName.endsWith("kernel")) {
      return (weight as unknown as { val: tf.Variable }).val;
    }
  }
  throw new DataError(`layer ${JSON.stringify(layer.name)} has no kernel variable`);
}

/**
 * Mean of the per-batch loss gradients with respect to each conv kernel.
 *
 * Each batch contributes one gradient tensor; the result is their arithmetic
 * mean, accumulated in float64 so the value is invariant to batch order up
 * to reassociation noise. Keys are layer names; layouts match the kernels
 * (kh, kw, in, out).
 */
export function averageKernelGradients(
  model: tf.LayersModel,
  batches: readonly DatasetBatch[],
  loss: LossFn,
  convs: readonly ExportableConv[],
): Map<string, Float64Array> {
  if (batches.length === 0) {
    throw new DataError("dataset has no batches");
  }
  const variables = convs.map((conv) => kernelVariable(conv.layer));
  const accumulators = new Map<string, Float64Array>();
  for (const conv of convs) {
    accumulators.set(conv.layer.name, new Float64Array(conv.n * conv.c * conv.k * conv.k));
  }
  for (const batch of batches) {
    let grads: tf.NamedTensorMap;
    let value: tf.Scalar;
    try {
      ({ value, grads } = tf.variableGrads(() => loss(batch.ys, model.predict(batch.xs) as tf.Tensor), variables));
    } catch (err) {
      throw new DataError(`gradient computation failed: ${(err as Error).message}`);
    }
    value.dispose();
    for (let i = 0; i < convs.length; i++) {
      const grad = grads[variables[i].name];
      const acc = accumulators.get(convs[i].layer.name)!;
      const data = grad.dataSync();
      for (let j = 0; j < acc.length; j++) {
        acc[j] += data[j];
      }
      grad.dispose();
    }
  }
  for (const acc of accumulators.values()) {
    for (let j = 0; j < acc.length; j++) {
      acc[j] /= batches.length;
    }
  }
  return accumulators;
}

// ---------------------------------------------------------------------------
// Export

export interface ExportSpec {
  model: tf.LayersModel;
  batches: readonly DatasetBatch[];
  manifestPath: string;
  /** Loss whose gradient is averaged; defaults to mean squared error. */
  loss?: LossFn;
  /** Layer names exported with compressible=false (kept but never altered). */
  freeze?: readonly string[];
  /** Model layer name -> manifest layer name. */
  rename?: Readonly<Record<string, string>>;
}

export interface ExportSummary {
  manifestPath: string;
  exported: string[];
  skipped: SkippedLayer[];
}

/**
 * Write the interchange manifest for a model: per exportable conv, its
 * kernel and the dataset-mean gradient, transposed to (out, in, kh, kw).
 * Non-conv layers are recorded under metadata.skipped_layers.
 */
export function exportModel(spec: ExportSpec): ExportSummary {
  const loss = spec.loss ?? meanSquaredError;
  const { exportable, skipped } = enumerateConvLayers(spec.model);
  if (exportable.length === 0) {
    throw new DataError("model has no exportable conv layers");
  }
  const layerNames = new Set(exportable.map((conv) => conv.layer.name));
  for (const name of spec.freeze ?? []) {
    if (!layerNames.has(name)) {
      throw new DataError(`freeze rule names unknown conv layer ${JSON.stringify(name)}`);
    }
  }
  for (const name of Object.keys(spec.rename ?? {})) {
    if (!layerNames.has(name)) {
      throw new DataError(`rename rule names unknown conv layer ${JSON.stringify(name)}`);
    }
  }

  const gradients = averageKernelGradients(spec.model, spec.batches, loss, exportable);
  const frozen = new Set(spec.freeze ?? []);
  const layers: NetworkLayerTensors[] = exportable.map((conv) => {
    // getWeights() hands back the live variable tensors; read, never dispose.
    const kernel = conv.layer.getWeights()[0] as tf.Tensor4D;
    const gradHwio = tf.tensor4d(
      Float32Array.from(gradients.get(conv.layer.name)!),
      kernel.shape as [number, number, number, number],
      "float32",
    );
    const weights = kernelToInterchange(kernel);
    const grad = kernelToInterchange(gradHwio);
    gradHwio.dispose();
    const entry: LayerEntry = {
      name: spec.rename?.[conv.layer.name] ?? conv.layer.name,
      n: conv.n,
      c: conv.c,
      k: conv.k,
      stride: conv.stride,
      h_out: conv.hOut,
      w_out: conv.wOut,
      compressible: !frozen.has(conv.layer.name),
      weight_blob: "",
      gradient_blob: "",
    };
    return { entry, weights, gradients: grad };
  });

  const metadata: Record<string, string> = {
    generator: "convsqueeze-frontend",
    model_name: spec.model.name,
    batch_count: String(spec.batches.length),
    skipped_layers: skipped.map((s) => s.name).join(","),
  };
  writeNetworkManifest({ layers, metadata }, spec.manifestPath);
  return {
    manifestPath: spec.manifestPath,
    exported: layers.map((layer) => layer.entry.name),
    skipped,
  };
}
