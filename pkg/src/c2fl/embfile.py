"""Reader and writer for the C2FL-EMB embedding interchange directory.

A directory holds manifest.json plus vectors.f32.  The manifest pins the
format name and version, the vector dimension and count, the dtype tag
("f32le"), the prompt template the producer used, and an entries list
mapping string keys ("class:<id>" or "sample:<id>") to row numbers in the
vector file.  vectors.f32 is row-major little-endian float32.

Round-tripping is bit-exact: the reader hands back the float32 rows as
written, without renormalizing or reordering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

Array = np.ndarray

FORMAT_NAME = "C2FL-EMB"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
VECTORS_NAME = "vectors.f32"
_KEY_KINDS = ("class", "sample")


@dataclass(frozen=True)
class EmbeddingFile:
    """Parsed embedding directory: float32 rows plus key -> row mapping."""

    vectors: Array
    entries: dict[str, int]
    prompt_template: str

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row(self, key: str) -> Array:
        if key not in self.entries:
            raise FormatError(f"embedding key not found: {key!r}")
        return self.vectors[self.entries[key]]


def _check_key(key: str) -> None:
    kind, sep, ident = key.partition(":")
    if not sep or kind not in _KEY_KINDS or not ident:
        raise FormatError(
            f"embedding key must look like 'class:<id>' or 'sample:<id>', got {key!r}"
        )


def write_embeddings(
    path: str | Path,
    vectors: Array,
    entries: dict[str, int],
    prompt_template: str,
) -> None:
    """Write a C2FL-EMB directory; creates the directory if needed."""
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    if vectors.ndim != 2:
        raise FormatError(f"vectors must be a matrix, got shape {vectors.shape}")
    n, dim = vectors.shape
    if dim < 1:
        raise FormatError("vector dimension must be >= 1")
    rows = sorted(entries.values())
    if rows != list(range(n)):
        raise FormatError(
            f"entries must cover rows 0..{n - 1} exactly once, got {rows}"
        )
    for key in entries:
        _check_key(key)
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dim": dim,
        "count": n,
        "dtype": "f32le",
        "prompt_template": prompt_template,
        "entries": [
            {"key": key, "row": row}
            for key, row in sorted(entries.items(), key=lambda kv: kv[1])
        ],
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    vectors.tofile(root / VECTORS_NAME)


def read_embeddings(path: str | Path) -> EmbeddingFile:
    """Read and validate a C2FL-EMB directory."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FormatError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest is not valid JSON: {e}") from e
    if manifest.get("format") != FORMAT_NAME:
        raise FormatError(
            f"unrecognized format {manifest.get('format')!r}, expected {FORMAT_NAME!r}"
        )
    if manifest.get("version") != FORMAT_VERSION:
        raise FormatError(
            f"unsupported version {manifest.get('version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    if manifest.get("dtype") != "f32le":
        raise FormatError(f"unsupported dtype {manifest.get('dtype')!r}")
    dim = manifest.get("dim")
    count = manifest.get("count")
    if not isinstance(dim, int) or dim < 1:
        raise FormatError(f"dim must be a positive integer, got {dim!r}")
    if not isinstance(count, int) or count < 0:
        raise FormatError(f"count must be a non-negative integer, got {count!r}")
    template = manifest.get("prompt_template")
    if not isinstance(template, str):
        raise FormatError("prompt_template must be a string")
    raw_entries = manifest.get("entries")
    if not isinstance(raw_entries, list) or len(raw_entries) != count:
        raise FormatError(
            f"entries must list exactly count={count} items"
        )
    entries: dict[str, int] = {}
    for item in raw_entries:
        if not isinstance(item, dict) or "key" not in item or "row" not in item:
            raise FormatError(f"malformed entry: {item!r}")
        key, row = item["key"], item["row"]
        if not isinstance(key, str):
            raise FormatError(f"entry key must be a string, got {key!r}")
        _check_key(key)
        if not isinstance(row, int) or not 0 <= row < count:
            raise FormatError(f"entry row {row!r} out of range for count {count}")
        if key in entries:
            raise FormatError(f"duplicate embedding key: {key!r}")
        entries[key] = row
    if len(set(entries.values())) != count:
        raise FormatError("entries must reference each row exactly once")

    vec_path = root / VECTORS_NAME
    if not vec_path.is_file():
        raise FormatError(f"missing vector file: {vec_path}")
    raw = np.fromfile(vec_path, dtype="<f4")
    if raw.size != count * dim:
        raise FormatError(
            f"vectors.f32 holds {raw.size} floats, expected {count}*{dim}"
        )
    vectors = raw.reshape(count, dim)
    vectors.flags.writeable = False
    return EmbeddingFile(vectors, entries, template)
