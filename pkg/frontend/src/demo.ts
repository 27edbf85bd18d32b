/**
 * Self-contained synthetic fixtures: a small sequential conv model and a
 * random dataset, both reproducible from a seed. Used by the demo-gen CLI
 * command and the test suite.
 */

import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";

import { DatasetBatch, saveDatasetDir } from "./export.js";
import { saveModelToDir } from "./modelio.js";

/** Deterministic PRNG over [0, 1) (mulberry32). */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Uniform values in [-scale, scale]. */
export function randomArray(rand: () => number, count: number, scale = 0.5): Float32Array {
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = (rand() * 2 - 1) * scale;
  }
  return out;
}

export interface DemoOptions {
  seed?: number;
  batches?: number;
  batchSize?: number;
  /** Plain models carry no biases or activations (purely linear conv stack). */
  plain?: boolean;
}

export const DEMO_INPUT_SHAPE: [number, number, number] = [16, 16, 3];

/**
 * A four-conv stack over a 16 x 16 x 3 input: two stride-1 3 x 3 convs
 * around a stride-2 3 x 3 conv, finished by a 1 x 1 projection.
 */
export function buildDemoModel(options: DemoOptions = {}): tf.Sequential {
  const { seed = 0, plain = false } = options;
  const rand = mulberry32(seed * 2654435761 + 1);
  const model = tf.sequential({ name: `demo_net_${seed}` });
  const specs = [
    { name: "blk1", filters: 8, kernelSize: 3, strides: 1 },
    { name: "blk2", filters: 10, kernelSize: 3, strides: 2 },
    { name: "blk3", filters: 8, kernelSize: 3, strides: 1 },
    { name: "head", filters: 6, kernelSize: 1, strides: 1 },
  ];
  for (const [i, spec] of specs.entries()) {
    model.add(
      tf.layers.conv2d({
        name: spec.name,
        filters: spec.filters,
        kernelSize: spec.kernelSize,
        strides: spec.strides,
        padding: "valid",
        useBias: !plain,
        activation: plain || i === specs.length - 1 ? "linear" : "relu",
        ...(i === 0 ? { inputShape: DEMO_INPUT_SHAPE } : {}),
      }),
    );
  }
  for (const layer of model.layers) {
    const newWeights = layer.getWeights().map((w) => {
      const count = w.shape.reduce((acc, d) => acc * d, 1);
      const scale = w.shape.length === 1 ? 0.05 : 0.5;
      return tf.tensor(randomArray(rand, count, scale), w.shape);
    });
    layer.setWeights(newWeights);
    newWeights.forEach((w) => w.dispose());
  }
  return model;
}

/** Random input/target batches matching the model's geometry. */
export function makeDemoBatches(model: tf.LayersModel, options: DemoOptions = {}): DatasetBatch[] {
  const { seed = 0, batches = 3, batchSize = 2 } = options;
  const rand = mulberry32(seed * 916191049 + 7);
  const inShape = model.inputs[0].shape.slice(1) as number[];
  const outShape = model.outputs[0].shape.slice(1) as number[];
  const result: DatasetBatch[] = [];
  for (let i = 0; i < batches; i++) {
    const xShape = [batchSize, ...inShape] as [number, number, number, number];
    const yShape = [batchSize, ...outShape];
    result.push({
      xs: tf.tensor4d(randomArray(rand, xShape.reduce((a, b) => a * b, 1), 1.0), xShape),
      ys: tf.tensor(randomArray(rand, yShape.reduce((a, b) => a * b, 1), 1.0), yShape),
    });
  }
  return result;
}

export interface DemoPaths {
  modelDir: string;
  dataDir: string;
}

/** Write the demo model and dataset under `outDir` (model/ and data/). */
export async function generateDemo(outDir: string, options: DemoOptions = {}): Promise<DemoPaths> {
  const model = buildDemoModel(options);
  const batches = makeDemoBatches(model, options);
  const modelDir = path.join(outDir, "model");
  const dataDir = path.join(outDir, "data");
  await saveModelToDir(model, modelDir);
  saveDatasetDir(batches, dataDir);
  batches.forEach((batch) => {
    batch.xs.dispose();
    batch.ys.dispose();
  });
  return { modelDir, dataDir };
}
