/**
 * Disk persistence for TensorFlow.js layers models.
 *
 * The browser build of TensorFlow.js ships no file:// IO handler, so this
 * module provides one: a model directory holds `model.json` (topology plus
 * weight specs) and `weights.bin` (the concatenated weight data).
 */

import * as fs from "node:fs";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";

import { DataError } from "./errors.js";
import { readJsonFile, writeJsonFile } from "./interchange.js";

const MODEL_FILE = "model.json";
const WEIGHTS_FILE = "weights.bin";

function concatWeightData(data: ArrayBuffer | ArrayBuffer[]): Buffer {
  if (Array.isArray(data)) {
    return Buffer.concat(data.map((part) => Buffer.from(part)));
  }
  return Buffer.from(data);
}

/** Save a layers model into `dir` as model.json + weights.bin. */
export async function saveModelToDir(model: tf.LayersModel, dir: string): Promise<void> {
  fs.mkdirSync(dir, { recursive: true });
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      if (artifacts.weightData === undefined || artifacts.weightSpecs === undefined) {
        throw new DataError("model produced no weight data to save");
      }
      fs.writeFileSync(path.join(dir, WEIGHTS_FILE), concatWeightData(artifacts.weightData));
      writeJsonFile(path.join(dir, MODEL_FILE), {
        format: artifacts.format,
        generatedBy: artifacts.generatedBy,
        modelTopology: artifacts.modelTopology,
        weightSpecs: artifacts.weightSpecs,
      });
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: "JSON" as const,
        },
      };
    }),
  );
}

/**
 * Run a model on a single image stored channels-first (c, h, w) — the layout
 * the compression pipeline's reference convolution uses — and return the
 * output in the same convention (n, h_out, w_out).
 */
export function forwardOnChw(
  model: tf.LayersModel,
  data: Float32Array,
  shape: [number, number, number],
): { data: Float32Array; shape: [number, number, number] } {
  const [c, h, w] = shape;
  if (data.length !== c * h * w) {
    throw new DataError(`input holds ${data.length} values, expected ${c * h * w} for shape [${shape.join(", ")}]`);
  }
  return tf.tidy(() => {
    const nhwc = tf.tensor3d(data, [c, h, w]).transpose([1, 2, 0]).expandDims(0);
    const out = model.predict(nhwc) as tf.Tensor4D;
    if (out.shape.length !== 4 || out.shape[0] !== 1) {
      throw new DataError(`model output has shape [${out.shape.join(", ")}], expected a single feature map`);
    }
    const chw = out.squeeze([0]).transpose([2, 0, 1]) as tf.Tensor3D;
    return {
      data: chw.dataSync() as Float32Array,
      shape: chw.shape as [number, number, number],
    };
  });
}

/** Load a layers model previously written by {@link saveModelToDir}. */
export async function loadModelFromDir(dir: string): Promise<tf.LayersModel> {
  const docPath = path.join(dir, MODEL_FILE);
  const doc = readJsonFile(docPath) as {
    modelTopology?: object;
    weightSpecs?: tf.io.WeightsManifestEntry[];
  };
  if (!doc.modelTopology || !doc.weightSpecs) {
    throw new DataError(`${docPath}: missing modelTopology or weightSpecs`);
  }
  let weights: Buffer;
  try {
    weights = fs.readFileSync(path.join(dir, WEIGHTS_FILE));
  } catch (err) {
    throw new DataError(`cannot read ${path.join(dir, WEIGHTS_FILE)}: ${(err as Error).message}`);
  }
  const weightData = weights.buffer.slice(weights.byteOffset, weights.byteOffset + weights.byteLength);
  try {
    return await tf.loadLayersModel(
      tf.io.fromMemory({
        modelTopology: doc.modelTopology,
        weightSpecs: doc.weightSpecs,
        weightData,
      }),
    );
  } catch (err) {
    throw new DataError(`cannot load model from ${dir}: ${(err as Error).message}`);
  }
}
