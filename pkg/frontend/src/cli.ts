#!/usr/bin/env node
/**
 * CLI: export --classes <file> [--images <dir>] [--template STR] --out DIR
 *              [--model ID] [--dim N]
 *
 * The classes file holds one name per line, or a JSON array of strings.
 * With --images, every regular file in the directory (sorted by name)
 * becomes one sample vector; sample index = position in that order.
 * Exit codes: 0 success, 2 bad arguments or configuration, 3 I/O error.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { parseArgs } from "node:util";
import { pathToFileURL } from "node:url";

import { DEFAULT_DIM, DEFAULT_MODEL } from "./encoder.js";
import { exportSampleEmbeddings } from "./exporter.js";
import { ConfigError, ExporterError, IoError, EXIT_CONFIG, EXIT_IO, EXIT_OK } from "./errors.js";

const USAGE =
  "usage: c2fl-export export --classes <file> [--images <dir>] [--template STR] --out DIR [--model ID] [--dim N]";

function readClassNames(file: string): string[] {
  let text: string;
  try {
    text = fs.readFileSync(file, "utf8");
  } catch (e) {
    throw new IoError(`cannot read classes file ${file}: ${String(e)}`);
  }
  if (text.trimStart().startsWith("[")) {
    let parsed: unknown;
    try {
      parsed = JSON.parse(text);
    } catch (e) {
      throw new ConfigError(`classes file is not valid JSON: ${String(e)}`);
    }
    if (!Array.isArray(parsed) || !parsed.every((x) => typeof x === "string")) {
      throw new ConfigError("JSON classes file must be an array of strings");
    }
    return parsed;
  }
  return text
    .split("\n")
    .map((line) => line.trim())
    .filter((line) => line.length > 0);
}

function readImages(dir: string): Uint8Array[] {
  let names: string[];
  try {
    names = fs
      .readdirSync(dir, { withFileTypes: true })
      .filter((d) => d.isFile())
      .map((d) => d.name)
      .sort();
  } catch (e) {
    throw new IoError(`cannot list image directory ${dir}: ${String(e)}`);
  }
  return names.map((name) => {
    try {
      return new Uint8Array(fs.readFileSync(path.join(dir, name)));
    } catch (e) {
      throw new IoError(`cannot read image ${path.join(dir, name)}: ${String(e)}`);
    }
  });
}

export function main(argv: string[]): number {
  try {
    const { values, positionals } = parseArgs({
      args: argv,
      allowPositionals: true,
      options: {
        classes: { type: "string" },
        images: { type: "string" },
        template: { type: "string" },
        out: { type: "string" },
        model: { type: "string" },
        dim: { type: "string" },
      },
    });
    if (positionals.length !== 1 || positionals[0] !== "export") {
      throw new ConfigError(USAGE);
    }
    if (!values.classes || !values.out) {
      throw new ConfigError(USAGE);
    }
    const dim = values.dim === undefined ? DEFAULT_DIM : Number(values.dim);
    if (!Number.isInteger(dim) || dim < 1) {
      throw new ConfigError(`--dim must be a positive integer, got ${values.dim}`);
    }
    const summary = exportSampleEmbeddings({
      classNames: readClassNames(values.classes),
      promptTemplate: values.template,
      images: values.images === undefined ? [] : readImages(values.images),
      outDir: values.out,
      model: values.model ?? DEFAULT_MODEL,
      dim,
    });
    console.log(
      `wrote ${summary.path}: count=${summary.count} dim=${summary.dim} ` +
        `classes=${summary.classes} samples=${summary.samples} model=${summary.model}`,
    );
    return EXIT_OK;
  } catch (e) {
    if (e instanceof ExporterError) {
      console.error(`error: ${e.message}`);
      return e.exitCode;
    }
    if (e instanceof Error && "code" in e) {
      console.error(`error: ${e.message}`);
      const code = String((e as NodeJS.ErrnoException).code);
      if (code.startsWith("ERR_PARSE_ARGS")) {
        // unknown option or missing value
        console.error(USAGE);
        return EXIT_CONFIG;
      }
      return EXIT_IO;
    }
    throw e;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
