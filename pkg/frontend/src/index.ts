export {
  STREAM_MAGIC,
  STREAM_VERSION,
  StreamFormatError,
  readI32Tensor,
  readSymbolStream,
  writeI32Tensor,
  writeSymbolStream,
} from "./stream.js";
export type { I32Tensor, SymbolStream } from "./stream.js";
export { CheckpointFormatError, MANIFEST_VERSION, loadCheckpoint } from "./checkpoint.js";
export type { CheckpointParam } from "./checkpoint.js";
export {
  MetricsFormatError,
  parseBenchCsv,
  parseEpochCsv,
  parseJsonlMetrics,
  parseStatsJson,
} from "./metrics.js";
export type { BenchRow, EpochMetrics, SymbolStatsReport } from "./metrics.js";
export { naiveRetrieve } from "./oracle.js";
export type { RetrieveTables } from "./oracle.js";
export { CliConfigError, CliFailedCheckError, RosaCli } from "./cli.js";
export type {
  BenchSamRequest,
  GradcheckLine,
  MqarRequest,
  RetrieveRequest,
  RetrieveResult,
  RosaCliOptions,
} from "./cli.js";
