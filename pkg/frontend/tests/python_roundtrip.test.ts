import { spawnSync } from "node:child_process";
import { createHash } from "node:crypto";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { VECTORS_NAME } from "../src/embfile.js";
import { HashEncoder, zeroShotArgmax } from "../src/encoder.js";
import { exportSampleEmbeddings, renderPrompt, DEFAULT_PROMPT_TEMPLATE } from "../src/exporter.js";

/**
 * Cross-language checks against the simulator's own loader: the exported
 * payload must read back bit-equal, and the teacher probabilities computed
 * from the file must rank classes the same way the encoder does natively.
 */

const CLASS_NAMES = ["ant", "bee", "cat", "dog", "elk", "fox", "gnu", "hen", "owl", "pig"];
const N_SAMPLES = 500;
const DIM = 512;
const LOGIT_SCALE = 100.0;

const outDir = fs.mkdtempSync(path.join(os.tmpdir(), "roundtrip-"));
const images: Uint8Array[] = [];

function runPython(script: string, ...args: string[]): string {
  const res = spawnSync("python3", ["-c", script, ...args], { encoding: "utf8" });
  if (res.status !== 0) {
    throw new Error(`python3 failed (${res.status}): ${res.stderr}`);
  }
  return res.stdout;
}

beforeAll(() => {
  for (let j = 0; j < N_SAMPLES; j++) {
    images.push(new Uint8Array(Buffer.from(`probe image ${j}`, "utf8")));
  }
  const summary = exportSampleEmbeddings({
    classNames: CLASS_NAMES,
    images,
    outDir,
    dim: DIM,
  });
  expect(summary.count).toBe(CLASS_NAMES.length + N_SAMPLES);
});

afterAll(() => {
  fs.rmSync(outDir, { recursive: true, force: true });
});

describe("simulator round-trip", () => {
  it("loads back bit-equal vectors and identical metadata", () => {
    const report = JSON.parse(
      runPython(
        `
import hashlib, json, sys
from c2fl.embfile import read_embeddings
ef = read_embeddings(sys.argv[1])
count, dim = ef.vectors.shape
print(json.dumps({
    "sha256": hashlib.sha256(ef.vectors.tobytes()).hexdigest(),
    "count": count,
    "dim": dim,
    "prompt_template": ef.prompt_template,
    "entries": sorted(ef.entries.items(), key=lambda kv: kv[1]),
}))
`,
        outDir,
      ),
    );
    const payload = fs.readFileSync(path.join(outDir, VECTORS_NAME));
    expect(report.count).toBe(CLASS_NAMES.length + N_SAMPLES);
    expect(report.dim).toBe(DIM);
    expect(payload.byteLength).toBe(report.count * report.dim * 4);
    expect(report.sha256).toBe(createHash("sha256").update(payload).digest("hex"));
    expect(report.prompt_template).toBe(DEFAULT_PROMPT_TEMPLATE);
    const expected = [
      ...CLASS_NAMES.map((name, c) => [`class:${name}`, c]),
      ...images.map((_, j) => [`sample:${j}`, CLASS_NAMES.length + j]),
    ];
    expect(report.entries).toEqual(expected);
  });

  it("agrees with the simulator teacher argmax on at least 99% of samples", () => {
    const encoder = new HashEncoder(DIM);
    const prototypes = CLASS_NAMES.map((name) =>
      encoder.encodeText(renderPrompt(DEFAULT_PROMPT_TEMPLATE, name)),
    );
    const native = images.map((img) => zeroShotArgmax(encoder.encodeImage(img), prototypes));

    const fromFile: number[] = JSON.parse(
      runPython(
        `
import json, sys
import numpy as np
from c2fl.teacher import FileTeacher, teacher_probs
path, names, scale, n = sys.argv[1], json.loads(sys.argv[2]), float(sys.argv[3]), int(sys.argv[4])
teacher = FileTeacher(path, tuple(names))
out = []
for j in range(n):
    probs = teacher_probs(teacher.prototypes, teacher.sample_embedding(j, 0), scale)
    out.append(int(np.argmax(probs)))
print(json.dumps(out))
`,
        outDir,
        JSON.stringify(CLASS_NAMES),
        String(LOGIT_SCALE),
        String(N_SAMPLES),
      ),
    );

    expect(fromFile).toHaveLength(N_SAMPLES);
    let agree = 0;
    for (let j = 0; j < N_SAMPLES; j++) {
      if (fromFile[j] === native[j]) {
        agree += 1;
      }
    }
    const agreement = agree / N_SAMPLES;
    console.log(`teacher argmax agreement: ${agree}/${N_SAMPLES} = ${agreement}`);
    expect(agreement).toBeGreaterThanOrEqual(0.99);
  });
});
