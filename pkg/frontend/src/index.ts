export { DataError, NumericalError, UsageError, exitCodeFor } from "./errors.js";
export {
  CompressedEntry,
  CompressedEntrySchema,
  CompressedLayerTensors,
  CompressedManifestSchema,
  CompressedNetwork,
  LayerEntry,
  LayerEntrySchema,
  NetworkBundle,
  NetworkLayerTensors,
  NetworkManifestSchema,
  decodeBlob,
  encodeBlob,
  kernelFromInterchange,
  kernelToInterchange,
  readBlobFile,
  readCompressedManifest,
  readJsonFile,
  readNetworkManifest,
  sanitizeName,
  writeBlobFile,
  writeCompressedManifest,
  writeJsonFile,
  writeNetworkManifest,
} from "./interchange.js";
export { forwardOnChw, loadModelFromDir, saveModelToDir } from "./modelio.js";
export {
  DatasetBatch,
  ExportSpec,
  ExportSummary,
  ExportableConv,
  LossFn,
  SkippedLayer,
  averageKernelGradients,
  enumerateConvLayers,
  exportModel,
  loadDatasetDir,
  meanSquaredError,
  saveDatasetDir,
} from "./export.js";
export { ChannelSelect, ReimportResult, reimportModel } from "./reimport.js";
export {
  DEMO_INPUT_SHAPE,
  DemoOptions,
  DemoPaths,
  buildDemoModel,
  generateDemo,
  makeDemoBatches,
  mulberry32,
  randomArray,
} from "./demo.js";
