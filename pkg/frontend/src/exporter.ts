/**
 * Export jobs: encode class-name prototypes and optional per-sample images,
 * then write them as one C2FL-EMB directory.
 *
 * Class prototypes occupy the first rows (keys "class:<name>", in the given
 * class order); sample vectors follow (keys "sample:<index>", index matching
 * the position in the image list, which must match the consumer's dataset
 * ordering).  The exporter is a one-shot tool: it never trains anything.
 */

import { Encoder, makeEncoder, DEFAULT_DIM, DEFAULT_MODEL } from "./encoder.js";
import { Entry, writeEmbeddings } from "./embfile.js";
import { ConfigError } from "./errors.js";

export const DEFAULT_PROMPT_TEMPLATE = "This is a {name}";

export interface ExportJob {
  /** distinct, non-empty class names, in the consumer's class order */
  classNames: string[];
  /** must contain exactly one placeholder, {name} */
  promptTemplate?: string;
  /** optional raw image payloads, in dataset order */
  images?: Uint8Array[];
  outDir: string;
  /** encoder identifier; recorded in the manifest */
  model?: string;
  dim?: number;
}

export interface ExportSummary {
  path: string;
  model: string;
  dim: number;
  count: number;
  classes: number;
  samples: number;
}

/** Reject jobs with duplicate or empty class names or a bad template. */
export function validateJob(job: ExportJob): void {
  if (!Array.isArray(job.classNames) || job.classNames.length === 0) {
    throw new ConfigError("at least one class name is required");
  }
  for (const name of job.classNames) {
    if (typeof name !== "string" || name.length === 0) {
      throw new ConfigError(`class names must be non-empty strings, got ${JSON.stringify(name)}`);
    }
  }
  if (new Set(job.classNames).size !== job.classNames.length) {
    throw new ConfigError("class names must be distinct");
  }
  const template = job.promptTemplate ?? DEFAULT_PROMPT_TEMPLATE;
  const placeholders = template.match(/\{[^{}]*\}/g) ?? [];
  if (placeholders.length !== 1 || placeholders[0] !== "{name}") {
    throw new ConfigError(
      `prompt template must contain exactly one placeholder, {name}; got ${JSON.stringify(template)}`,
    );
  }
  if (typeof job.outDir !== "string" || job.outDir.length === 0) {
    throw new ConfigError("output directory is required");
  }
}

export function renderPrompt(template: string, name: string): string {
  return template.replace("{name}", name);
}

function encodePrototypes(job: ExportJob, encoder: Encoder): Float32Array[] {
  const template = job.promptTemplate ?? DEFAULT_PROMPT_TEMPLATE;
  return job.classNames.map((name) => encoder.encodeText(renderPrompt(template, name)));
}

function writeExport(job: ExportJob, samples: Float32Array[], encoder: Encoder): ExportSummary {
  const protos = encodePrototypes(job, encoder);
  const vectors = [...protos, ...samples];
  const entries: Entry[] = [
    ...job.classNames.map((name, c) => ({ key: `class:${name}`, row: c })),
    ...samples.map((_, j) => ({ key: `sample:${j}`, row: protos.length + j })),
  ];
  const template = job.promptTemplate ?? DEFAULT_PROMPT_TEMPLATE;
  writeEmbeddings(job.outDir, vectors, entries, template, encoder.model);
  return {
    path: job.outDir,
    model: encoder.model,
    dim: encoder.dim,
    count: vectors.length,
    classes: protos.length,
    samples: samples.length,
  };
}

/** Encode one prototype per class name and write a prototypes-only export. */
export function exportPrototypes(job: ExportJob): ExportSummary {
  validateJob(job);
  const encoder = makeEncoder(job.model ?? DEFAULT_MODEL, job.dim ?? DEFAULT_DIM);
  return writeExport(job, [], encoder);
}

/**
 * Encode prototypes plus one vector per image and write them together.
 * An empty image list degrades to a prototypes-only export.
 */
export function exportSampleEmbeddings(job: ExportJob): ExportSummary {
  validateJob(job);
  const encoder = makeEncoder(job.model ?? DEFAULT_MODEL, job.dim ?? DEFAULT_DIM);
  const samples = (job.images ?? []).map((img) => encoder.encodeImage(img));
  return writeExport(job, samples, encoder);
}
