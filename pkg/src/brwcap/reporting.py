"""Deterministic output writers and run manifests.

Result files (CSV/JSON) are byte-deterministic functions of (config, seed,
version): floats are rendered with repr (shortest round-trip), keys are
sorted, newlines are '\\n'.  Volatile information (wall time) lives only in
the sibling ``.manifest.json``, so result files can be byte-compared across
worker counts and machines.
"""

from __future__ import annotations

import json
import os
import time

from . import __version__


def fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows, schema, path):
    """Rows are sequences matching schema; empty input gives a header-only file."""
    lines = [",".join(schema)]
    for row in rows:
        if len(row) != len(schema):
            raise ValueError(f"row has {len(row)} fields, schema has {len(schema)}")
        lines.append(",".join(fmt(v) for v in row))
    data = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(data)


def read_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    return header, rows


def write_json(doc, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


class RunManifest:
    """Config echo + environment; written next to every output file."""

    def __init__(self, config: dict, green_checksum=None):
        self.config = dict(config)
        self.green_checksum = green_checksum
        self.t0 = time.time()
        self.stream_counts = {}

    def record_streams(self, tag, n):
        self.stream_counts[tag] = int(n)

    def write(self, out_path):
        doc = {
            "config": self.config,
            "code_version": __version__,
            "green_table_checksum": self.green_checksum,
            "wall_time_s": round(time.time() - self.t0, 3),
            "stream_replicates": self.stream_counts,
        }
        write_json(doc, manifest_path(out_path))
        return doc


def manifest_path(out_path):
    base, _ = os.path.splitext(out_path)
    return base + ".manifest.json"


def file_crc(path):
    from .green import crc64
    with open(path, "rb") as fh:
        return crc64(fh.read())
