export {
  FORMAT_NAME,
  FORMAT_VERSION,
  MANIFEST_NAME,
  VECTORS_NAME,
  writeEmbeddings,
  readEmbeddings,
} from "./embfile.js";
export type { Entry, EmbeddingFile } from "./embfile.js";
export {
  DEFAULT_MODEL,
  DEFAULT_DIM,
  HashEncoder,
  makeEncoder,
  cosine,
  zeroShotArgmax,
} from "./encoder.js";
export type { Encoder } from "./encoder.js";
export {
  DEFAULT_PROMPT_TEMPLATE,
  validateJob,
  renderPrompt,
  exportPrototypes,
  exportSampleEmbeddings,
} from "./exporter.js";
export type { ExportJob, ExportSummary } from "./exporter.js";
export { ExporterError, ConfigError, FormatError, IoError } from "./errors.js";
