/**
 * C2FL-EMB directory format: manifest.json plus vectors.f32.
 *
 * The manifest records format name, version, dim, count, dtype "f32le",
 * the prompt template, and one {key, row} entry per vector; the payload is
 * count x dim float32 values, little-endian, row-major.  Keys look like
 * "class:<id>" or "sample:<id>".  The writer also records the encoder model
 * identifier for provenance; readers that do not know the field ignore it.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { FormatError, IoError } from "./errors.js";

export const FORMAT_NAME = "C2FL-EMB";
export const FORMAT_VERSION = 1;
export const MANIFEST_NAME = "manifest.json";
export const VECTORS_NAME = "vectors.f32";

const KEY_KINDS = new Set(["class", "sample"]);

export interface Entry {
  key: string;
  row: number;
}

export interface EmbeddingFile {
  dim: number;
  count: number;
  promptTemplate: string;
  model?: string;
  /** key -> row, every row 0..count-1 referenced exactly once */
  entries: Map<string, number>;
  /** count x dim values, row-major */
  vectors: Float32Array;
  row(key: string): Float32Array;
}

export function checkKey(key: string): void {
  const sep = key.indexOf(":");
  const kind = sep < 0 ? "" : key.slice(0, sep);
  const ident = sep < 0 ? "" : key.slice(sep + 1);
  if (!KEY_KINDS.has(kind) || ident.length === 0) {
    throw new FormatError(
      `embedding key must look like 'class:<id>' or 'sample:<id>', got ${JSON.stringify(key)}`,
    );
  }
}

/** Write a C2FL-EMB directory; creates the directory if needed. */
export function writeEmbeddings(
  dir: string,
  vectors: Float32Array[],
  entries: Entry[],
  promptTemplate: string,
  model?: string,
): void {
  if (vectors.length === 0) {
    throw new FormatError("at least one vector is required");
  }
  const dim = vectors[0].length;
  if (dim < 1) {
    throw new FormatError("vector dimension must be >= 1");
  }
  for (const v of vectors) {
    if (v.length !== dim) {
      throw new FormatError(`vector length ${v.length} does not match dim ${dim}`);
    }
    for (const x of v) {
      if (!Number.isFinite(x)) {
        throw new FormatError("vectors must contain only finite values");
      }
    }
  }
  const n = vectors.length;
  const rows = entries.map((e) => e.row).sort((a, b) => a - b);
  if (rows.length !== n || rows.some((r, i) => r !== i)) {
    throw new FormatError(`entries must cover rows 0..${n - 1} exactly once`);
  }
  const seen = new Set<string>();
  for (const e of entries) {
    checkKey(e.key);
    if (seen.has(e.key)) {
      throw new FormatError(`duplicate embedding key: ${JSON.stringify(e.key)}`);
    }
    seen.add(e.key);
  }

  const manifest: Record<string, unknown> = {
    format: FORMAT_NAME,
    version: FORMAT_VERSION,
    dim,
    count: n,
    dtype: "f32le",
    prompt_template: promptTemplate,
  };
  if (model !== undefined) {
    manifest.model = model;
  }
  manifest.entries = [...entries]
    .sort((a, b) => a.row - b.row)
    .map((e) => ({ key: e.key, row: e.row }));

  const payload = new Uint8Array(n * dim * 4);
  const view = new DataView(payload.buffer);
  for (let r = 0; r < n; r++) {
    for (let j = 0; j < dim; j++) {
      view.setFloat32((r * dim + j) * 4, vectors[r][j], true);
    }
  }

  try {
    fs.mkdirSync(dir, { recursive: true });
    fs.writeFileSync(
      path.join(dir, MANIFEST_NAME),
      JSON.stringify(manifest, null, 2) + "\n",
    );
    fs.writeFileSync(path.join(dir, VECTORS_NAME), payload);
  } catch (e) {
    throw new IoError(`cannot write embedding directory ${dir}: ${String(e)}`);
  }
}

/** Read and validate a C2FL-EMB directory. */
export function readEmbeddings(dir: string): EmbeddingFile {
  const manifestPath = path.join(dir, MANIFEST_NAME);
  if (!fs.existsSync(manifestPath)) {
    throw new FormatError(`missing manifest: ${manifestPath}`);
  }
  let manifest: Record<string, unknown>;
  try {
    manifest = JSON.parse(fs.readFileSync(manifestPath, "utf8"));
  } catch (e) {
    throw new FormatError(`manifest is not valid JSON: ${String(e)}`);
  }
  if (manifest.format !== FORMAT_NAME) {
    throw new FormatError(
      `unrecognized format ${JSON.stringify(manifest.format)}, expected ${JSON.stringify(FORMAT_NAME)}`,
    );
  }
  if (manifest.version !== FORMAT_VERSION) {
    throw new FormatError(
      `unsupported version ${JSON.stringify(manifest.version)}, expected ${FORMAT_VERSION}`,
    );
  }
  if (manifest.dtype !== "f32le") {
    throw new FormatError(`unsupported dtype ${JSON.stringify(manifest.dtype)}`);
  }
  const dim = manifest.dim;
  const count = manifest.count;
  if (typeof dim !== "number" || !Number.isInteger(dim) || dim < 1) {
    throw new FormatError(`dim must be a positive integer, got ${JSON.stringify(dim)}`);
  }
  if (typeof count !== "number" || !Number.isInteger(count) || count < 0) {
    throw new FormatError(
      `count must be a non-negative integer, got ${JSON.stringify(count)}`,
    );
  }
  const template = manifest.prompt_template;
  if (typeof template !== "string") {
    throw new FormatError("prompt_template must be a string");
  }
  const rawEntries = manifest.entries;
  if (!Array.isArray(rawEntries) || rawEntries.length !== count) {
    throw new FormatError(`entries must list exactly count=${count} items`);
  }
  const entries = new Map<string, number>();
  const rowsSeen = new Set<number>();
  for (const item of rawEntries) {
    if (typeof item !== "object" || item === null || !("key" in item) || !("row" in item)) {
      throw new FormatError(`malformed entry: ${JSON.stringify(item)}`);
    }
    const { key, row } = item as { key: unknown; row: unknown };
    if (typeof key !== "string") {
      throw new FormatError(`entry key must be a string, got ${JSON.stringify(key)}`);
    }
    checkKey(key);
    if (typeof row !== "number" || !Number.isInteger(row) || row < 0 || row >= count) {
      throw new FormatError(`entry row ${JSON.stringify(row)} out of range for count ${count}`);
    }
    if (entries.has(key)) {
      throw new FormatError(`duplicate embedding key: ${JSON.stringify(key)}`);
    }
    entries.set(key, row);
    rowsSeen.add(row);
  }
  if (rowsSeen.size !== count) {
    throw new FormatError("entries must reference each row exactly once");
  }

  const vecPath = path.join(dir, VECTORS_NAME);
  if (!fs.existsSync(vecPath)) {
    throw new FormatError(`missing vector file: ${vecPath}`);
  }
  const raw = fs.readFileSync(vecPath);
  if (raw.byteLength !== count * dim * 4) {
    throw new FormatError(
      `vector payload holds ${raw.byteLength / 4} floats, expected ${count * dim}`,
    );
  }
  const vectors = new Float32Array(count * dim);
  const view = new DataView(raw.buffer, raw.byteOffset, raw.byteLength);
  for (let i = 0; i < vectors.length; i++) {
    vectors[i] = view.getFloat32(i * 4, true);
  }

  const model = typeof manifest.model === "string" ? manifest.model : undefined;
  return {
    dim,
    count,
    promptTemplate: template,
    model,
    entries,
    vectors,
    row(key: string): Float32Array {
      const r = entries.get(key);
      if (r === undefined) {
        throw new FormatError(`unknown embedding key: ${JSON.stringify(key)}`);
      }
      return vectors.subarray(r * dim, (r + 1) * dim);
    },
  };
}
