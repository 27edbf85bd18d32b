/**
 * Rebuild a runnable model from a compressed manifest.
 *
 * Each compressed conv is replaced by an input-channel selection followed by
 * either a slimmed dense conv (pruned variant) or a k x k conv into r_bar
 * maps followed by a 1 x 1 conv back to n outputs (decomposed variant). The
 * original layer's bias and activation are carried onto the final conv, so a
 * pass-through manifest reproduces the original outputs. Channel pruning is
 * realized as an index-select on the input feature map, which keeps upstream
 * layers untouched.
 */

import * as tf from "@tensorflow/tfjs";

import { DataError } from "./errors.js";
import { CompressedLayerTensors, CompressedNetwork, kernelFromInterchange } from "./interchange.js";

/** Picks a fixed subset of channels-last feature maps. */
export class ChannelSelect extends tf.layers.Layer {
  static className = "ChannelSelect";

  private readonly indices: number[];

  constructor(config: { indices: number[]; name?: string }) {
    super({ name: config.name });
    this.indices = Array.from(config.indices);
  }

  override computeOutputShape(inputShape: tf.Shape | tf.Shape[]): tf.Shape {
    const shape = inputShape as tf.Shape;
    return [shape[0], shape[1], shape[2], this.indices.length];
  }

  override call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    const x = Array.isArray(inputs) ? inputs[0] : inputs;
    return tf.gather(x, this.indices, 3);
  }

  override getConfig(): tf.serialization.ConfigDict {
    return { ...super.getConfig(), indices: Array.from(this.indices) };
  }
}
tf.serialization.registerClass(ChannelSelect);

export interface ReimportResult {
  model: tf.LayersModel;
  /** Conv layers replaced by compressed forms. */
  replaced: string[];
  /** Layers carried over unchanged. */
  passthrough: string[];
  /** Compressed layers left dense because the manifest disagrees with the model. */
  leftDense: Array<{ name: string; reason: string }>;
}

interface ConvConfig {
  strides: number | number[];
  padding: "valid" | "same";
  dataFormat: "channelsLast" | "channelsFirst";
  activation: string;
  useBias: boolean;
}

function geometryMismatch(layer: tf.layers.Layer, tensors: CompressedLayerTensors): string | null {
  const entry = tensors.entry;
  const kernelShape = layer.getWeights()[0].shape;
  const [kh, kw, c, n] = kernelShape;
  if (kh !== entry.k || kw !== entry.k) {
    return `kernel is ${kh}x${kw}, manifest says k=${entry.k}`;
  }
  if (c !== entry.c) {
    return `layer has ${c} input channels, manifest says c=${entry.c}`;
  }
  if (n !== entry.n) {
    return `layer has ${n} filters, manifest says n=${entry.n}`;
  }
  return null;
}

function applyCompressedConv(
  layer: tf.layers.Layer,
  tensors: CompressedLayerTensors,
  input: tf.SymbolicTensor,
  created: tf.Tensor[],
): tf.SymbolicTensor {
  const entry = tensors.entry;
  const config = layer.getConfig() as unknown as ConvConfig;
  const kept = entry.kept_channels;
  const bias = config.useBias ? (layer.getWeights()[1] as tf.Tensor1D) : undefined;

  let cur = input;
  if (kept.length < entry.c) {
    cur = new ChannelSelect({ indices: kept, name: `${entry.name}__select` }).apply(cur) as tf.SymbolicTensor;
  }
  if (entry.variant === "pruned") {
    const kernel = kernelFromInterchange(tensors.weights!, [entry.n, kept.length, entry.k, entry.k]);
    created.push(kernel);
    return tf.layers
      .conv2d({
        name: `${entry.name}__slim`,
        filters: entry.n,
        kernelSize: entry.k,
        strides: config.strides,
        padding: config.padding,
        dataFormat: config.dataFormat,
        activation: config.activation as never,
        useBias: config.useBias,
        weights: bias ? [kernel, bias] : [kernel],
      })
      .apply(cur) as tf.SymbolicTensor;
  }

  const rBar = entry.r_bar!;
  const k1 = kernelFromInterchange(tensors.w1!, [rBar, kept.length, entry.k, entry.k]);
  const k2 = kernelFromInterchange(tensors.w2!, [entry.n, rBar, 1, 1]);
  created.push(k1, k2);
  const mid = tf.layers
    .conv2d({
      name: `${entry.name}__w1`,
      filters: rBar,
      kernelSize: entry.k,
      strides: config.strides,
      padding: config.padding,
      dataFormat: config.dataFormat,
      activation: "linear",
      useBias: false,
      weights: [k1],
    })
    .apply(cur) as tf.SymbolicTensor;
  return tf.layers
    .conv2d({
      name: `${entry.name}__w2`,
      filters: entry.n,
      kernelSize: 1,
      strides: 1,
      padding: "valid",
      dataFormat: config.dataFormat,
      activation: config.activation as never,
      useBias: config.useBias,
      weights: bias ? [k2, bias] : [k2],
    })
    .apply(mid) as tf.SymbolicTensor;
}

/**
 * Substitute every manifest layer into the original model and return the
 * rebuilt network. The original must be a single chain (one input, one
 * output, each layer feeding the next); uncompressed layers are reused as-is.
 * A manifest entry whose geometry disagrees with the actual layer is
 * reported and left dense rather than failing the whole rebuild.
 */
export function reimportModel(original: tf.LayersModel, compressed: CompressedNetwork): ReimportResult {
  const byName = new Map<string, CompressedLayerTensors>();
  for (const layer of compressed.layers) {
    if (byName.has(layer.entry.name)) {
      throw new DataError(`compressed manifest repeats layer ${JSON.stringify(layer.entry.name)}`);
    }
    byName.set(layer.entry.name, layer);
  }
  const modelLayerNames = new Set(original.layers.map((layer) => layer.name));
  for (const name of byName.keys()) {
    if (!modelLayerNames.has(name)) {
      throw new DataError(`compressed manifest names unknown layer ${JSON.stringify(name)}`);
    }
  }
  if (original.inputs.length !== 1 || original.outputs.length !== 1) {
    throw new DataError("reimport supports single-input single-output models only");
  }

  const chain = original.layers.filter((layer) => layer.getClassName() !== "InputLayer");
  for (const layer of chain) {
    const nodes = (layer as unknown as { inboundNodes: Array<{ inputTensors: unknown[] }> }).inboundNodes;
    if (nodes.length !== 1 || nodes[0].inputTensors.length !== 1) {
      throw new DataError(`layer ${JSON.stringify(layer.name)}: model is not a single chain of layers`);
    }
  }

  const inputShape = original.inputs[0].shape.slice(1) as number[];
  const input = tf.input({ shape: inputShape });
  const created: tf.Tensor[] = [];
  const replaced: string[] = [];
  const passthrough: string[] = [];
  const leftDense: Array<{ name: string; reason: string }> = [];

  let cur = input;
  for (const layer of chain) {
    const tensors = byName.get(layer.name);
    if (tensors === undefined) {
      cur = layer.apply(cur) as tf.SymbolicTensor;
      passthrough.push(layer.name);
      continue;
    }
    if (layer.getClassName() !== "Conv2D") {
      throw new DataError(`manifest layer ${JSON.stringify(layer.name)} is not a conv layer in the model`);
    }
    const mismatch = geometryMismatch(layer, tensors);
    if (mismatch !== null) {
      cur = layer.apply(cur) as tf.SymbolicTensor;
      leftDense.push({ name: layer.name, reason: mismatch });
      continue;
    }
    cur = applyCompressedConv(layer, tensors, cur, created);
    replaced.push(layer.name);
  }

  const model = tf.model({ inputs: input, outputs: cur, name: `${original.name}_reimported` });
  for (const tensor of created) {
    tensor.dispose();
  }
  return { model, replaced, passthrough, leftDense };
}
