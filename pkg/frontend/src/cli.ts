#!/usr/bin/env node
/**
 * Command-line bridge between TensorFlow.js models and the compression
 * pipeline: demo-gen fabricates a model + dataset, export writes the
 * interchange manifest, reimport rebuilds a runnable model from compressed
 * factors, run executes a saved model on a raw channels-first blob.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { generateDemo } from "./demo.js";
import { UsageError, exitCodeFor } from "./errors.js";
import { exportModel, loadDatasetDir } from "./export.js";
import { readBlobFile, readCompressedManifest, writeBlobFile } from "./interchange.js";
import { forwardOnChw, loadModelFromDir, saveModelToDir } from "./modelio.js";
import { reimportModel } from "./reimport.js";

function parseShape(text: string): [number, number, number] {
  const parts = text.split(",").map((p) => Number(p.trim()));
  if (parts.length !== 3 || parts.some((p) => !Number.isInteger(p) || p < 1)) {
    throw new UsageError(`--shape must be three positive integers "c,h,w", got ${JSON.stringify(text)}`);
  }
  return parts as [number, number, number];
}

function parseFreeze(text: string | undefined): string[] {
  if (!text) {
    return [];
  }
  return text
    .split(",")
    .map((p) => p.trim())
    .filter((p) => p.length > 0);
}

async function cmdDemoGen(argv: { out: string; seed: number; batches: number; batchSize: number; plain: boolean }): Promise<void> {
  if (argv.seed < 0 || !Number.isInteger(argv.seed)) {
    throw new UsageError("--seed must be a non-negative integer");
  }
  if (argv.batches < 1 || argv.batchSize < 1) {
    throw new UsageError("--batches and --batch-size must be positive");
  }
  const paths = await generateDemo(argv.out, {
    seed: argv.seed,
    batches: argv.batches,
    batchSize: argv.batchSize,
    plain: argv.plain,
  });
  console.log(`demo model: ${paths.modelDir}`);
  console.log(`demo dataset: ${paths.dataDir}`);
}

async function cmdExport(argv: { model: string; data: string; out: string; freeze?: string }): Promise<void> {
  const model = await loadModelFromDir(argv.model);
  const batches = loadDatasetDir(argv.data);
  const summary = exportModel({
    model,
    batches,
    manifestPath: argv.out,
    freeze: parseFreeze(argv.freeze),
  });
  batches.forEach((batch) => {
    batch.xs.dispose();
    batch.ys.dispose();
  });
  console.log(`exported ${summary.exported.length} conv layers to ${summary.manifestPath}`);
  for (const skip of summary.skipped) {
    console.log(`skipped ${skip.name}: ${skip.reason}`);
  }
}

async function cmdReimport(argv: { model: string; compressed: string; out: string }): Promise<void> {
  const original = await loadModelFromDir(argv.model);
  const compressed = readCompressedManifest(argv.compressed);
  const result = reimportModel(original, compressed);
  await saveModelToDir(result.model, argv.out);
  console.log(`reimported model: ${argv.out}`);
  console.log(`replaced: ${result.replaced.join(", ") || "(none)"}`);
  if (result.leftDense.length > 0) {
    for (const item of result.leftDense) {
      console.log(`left dense ${item.name}: ${item.reason}`);
    }
  }
}

async function cmdRun(argv: { model: string; input: string; shape: string; out: string }): Promise<void> {
  const shape = parseShape(argv.shape);
  const model = await loadModelFromDir(argv.model);
  const data = readBlobFile(argv.input, shape);
  const result = forwardOnChw(model, data, shape);
  fs.mkdirSync(path.dirname(path.resolve(argv.out)), { recursive: true });
  writeBlobFile(argv.out, result.data);
  console.log(`output shape: [${result.shape.join(", ")}] -> ${argv.out}`);
}

async function main(): Promise<void> {
  const parser = yargs(hideBin(process.argv))
    .scriptName("convsqueeze-frontend")
    .usage("Bridge TensorFlow.js conv models to the compression pipeline's interchange files.")
    .command(
      "demo-gen",
      "generate a synthetic model and dataset",
      (y) =>
        y
          .option("out", { type: "string", demandOption: true, describe: "output directory" })
          .option("seed", { type: "number", default: 0 })
          .option("batches", { type: "number", default: 3 })
          .option("batch-size", { type: "number", default: 2 })
          .option("plain", { type: "boolean", default: false, describe: "no biases or activations" }),
      (argv) => cmdDemoGen(argv as never),
    )
    .command(
      "export",
      "write the interchange manifest for a saved model",
      (y) =>
        y
          .option("model", { type: "string", demandOption: true, describe: "model directory" })
          .option("data", { type: "string", demandOption: true, describe: "dataset directory" })
          .option("out", { type: "string", demandOption: true, describe: "manifest path" })
          .option("freeze", { type: "string", describe: "comma-separated layers to mark compressible=false" }),
      (argv) => cmdExport(argv as never),
    )
    .command(
      "reimport",
      "rebuild a runnable model from a compressed manifest",
      (y) =>
        y
          .option("model", { type: "string", demandOption: true, describe: "original model directory" })
          .option("compressed", { type: "string", demandOption: true, describe: "compressed manifest path" })
          .option("out", { type: "string", demandOption: true, describe: "directory for the rebuilt model" }),
      (argv) => cmdReimport(argv as never),
    )
    .command(
      "run",
      "run a saved model on a raw channels-first float32 blob",
      (y) =>
        y
          .option("model", { type: "string", demandOption: true, describe: "model directory" })
          .option("input", { type: "string", demandOption: true, describe: "input blob path" })
          .option("shape", { type: "string", demandOption: true, describe: "input shape c,h,w" })
          .option("out", { type: "string", demandOption: true, describe: "output blob path" }),
      (argv) => cmdRun(argv as never),
    )
    .demandCommand(1, "specify a command")
    .strict()
    .exitProcess(false)
    .fail((msg, err) => {
      if (err) {
        throw err;
      }
      console.error(msg);
      process.exit(1);
    });

  try {
    await parser.parseAsync();
  } catch (err) {
    const error = err as Error;
    console.error(`${error.name}: ${error.message}`);
    process.exit(exitCodeFor(error));
  }
}

void main();
