/**
 * Embedding encoders.
 *
 * An encoder turns a class-name prompt or an image payload into a unit-norm
 * vector.  The built-in encoder derives vectors from SHA-256 in counter mode,
 * so exports are bit-reproducible on any machine with no model download; a
 * real vision-language model can be swapped in behind the same interface.
 */

import { createHash } from "node:crypto";

import { ConfigError } from "./errors.js";

export const DEFAULT_MODEL = "hash-sha256-v1";
export const DEFAULT_DIM = 512;

export interface Encoder {
  /** identifier recorded in the export manifest for provenance */
  readonly model: string;
  readonly dim: number;
  encodeText(text: string): Float32Array;
  encodeImage(data: Uint8Array): Float32Array;
}

/**
 * Deterministic encoder: the input is hashed once, then SHA-256 in counter
 * mode expands the digest to dim uniform values in [-1, 1) which are
 * L2-normalized.  Text and image inputs use separate domains so the same
 * bytes never collide across kinds.
 */
export class HashEncoder implements Encoder {
  readonly model: string;
  readonly dim: number;

  constructor(dim: number = DEFAULT_DIM, model: string = DEFAULT_MODEL) {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new ConfigError(`embedding dim must be a positive integer, got ${dim}`);
    }
    this.dim = dim;
    this.model = model;
  }

  encodeText(text: string): Float32Array {
    return this.expand("text", Buffer.from(text, "utf8"));
  }

  encodeImage(data: Uint8Array): Float32Array {
    return this.expand("image", data);
  }

  private expand(kind: string, payload: Uint8Array): Float32Array {
    const key = createHash("sha256")
      .update(this.model)
      .update("\0")
      .update(kind)
      .update("\0")
      .update(payload)
      .digest();
    const raw = new Float64Array(this.dim);
    const counter = Buffer.alloc(4);
    const blocks = Math.ceil(this.dim / 8);
    for (let b = 0; b < blocks; b++) {
      counter.writeUInt32BE(b, 0);
      const digest = createHash("sha256").update(key).update(counter).digest();
      const view = new DataView(digest.buffer, digest.byteOffset, digest.byteLength);
      for (let j = 0; j < 8; j++) {
        const i = b * 8 + j;
        if (i < this.dim) {
          raw[i] = view.getUint32(j * 4, false) / 2 ** 31 - 1;
        }
      }
    }
    let sq = 0;
    for (const x of raw) {
      sq += x * x;
    }
    const norm = Math.sqrt(sq);
    if (norm < 1e-12) {
      throw new ConfigError("degenerate zero-norm embedding");
    }
    const out = new Float32Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      out[i] = raw[i] / norm;
    }
    return out;
  }
}

/** Build the encoder for a model identifier; unknown models are rejected. */
export function makeEncoder(model: string = DEFAULT_MODEL, dim: number = DEFAULT_DIM): Encoder {
  if (model === DEFAULT_MODEL) {
    return new HashEncoder(dim, model);
  }
  throw new ConfigError(
    `encoder model ${JSON.stringify(model)} is not available locally; known: ${JSON.stringify(DEFAULT_MODEL)}`,
  );
}

/** Cosine similarity in float64. */
export function cosine(a: ArrayLike<number>, b: ArrayLike<number>): number {
  if (a.length !== b.length) {
    throw new ConfigError(`length mismatch: ${a.length} vs ${b.length}`);
  }
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na === 0 || nb === 0) {
    throw new ConfigError("cannot take cosine of a zero vector");
  }
  return dot / Math.sqrt(na * nb);
}

/** Index of the prototype most similar to the sample: zero-shot prediction. */
export function zeroShotArgmax(sample: ArrayLike<number>, prototypes: ArrayLike<number>[]): number {
  if (prototypes.length === 0) {
    throw new ConfigError("at least one prototype is required");
  }
  let best = 0;
  let bestSim = -Infinity;
  for (let c = 0; c < prototypes.length; c++) {
    const sim = cosine(sample, prototypes[c]);
    if (sim > bestSim) {
      bestSim = sim;
      best = c;
    }
  }
  return best;
}
