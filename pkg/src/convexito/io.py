"""Deterministic artifact writing: CSV with a provenance comment, JSON reports, manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .path_sim import SemimartingalePath, TimeGrid, path_header, path_rows

CURVE_HEADER = ("param", "error", "stderr")
RECORD_FIELDS = ("checkpoint_t", "mean_increment", "std_error", "z")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class ArtifactWriter:
    """Writes files under ``out_dir`` and remembers what it wrote."""
    out_dir: Path
    seed: int
    config_digest: str
    written: list = field(default_factory=list)

    def __post_init__(self):
        self.out_dir = Path(self.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    @property
    def comment(self):
        return f"# seed={self.seed} config_digest={self.config_digest}"

    def _track(self, path):
        if path not in self.written:
            self.written.append(path)
        return path

    def write_csv(self, name, header, rows):
        path = self.out_dir / name
        with open(path, "w", newline="") as fh:
            fh.write(self.comment + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        return self._track(path)

    def write_curve(self, curve, name="curves.csv"):
        """One curve as ``param,error,stderr`` rows."""
        return self.write_csv(name, CURVE_HEADER, curve.rows())

    def write_records(self, records, name="records.csv"):
        return self.write_csv(name, RECORD_FIELDS,
                              ([r[k] for k in RECORD_FIELDS] for r in records))

    def write_paths(self, xpath, name="paths.csv"):
        return self.write_csv(name, ["path_id"] + path_header(xpath.dim), path_rows(xpath))

    def write_json(self, name, obj):
        path = self.out_dir / name
        payload = {"seed": self.seed, "config_digest": self.config_digest, **obj}
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
        return self._track(path)

    def digests(self):
        return {p.name: sha256_file(p) for p in self.written}


def read_csv(path):
    """Return ``(comment, header, rows)`` with rows as lists of strings."""
    with open(path, newline="") as fh:
        comment = fh.readline().rstrip("\n")
        reader = csv.reader(fh)
        header = next(reader)
        return comment, header, list(reader)


def read_curve(path):
    """``(params, errors, stderrs)`` from a curve CSV."""
    _, _, rows = read_csv(path)
    data = np.array(rows, dtype=float).reshape(-1, 3)
    return data[:, 0], data[:, 1], data[:, 2]


def read_paths(path):
    """Rebuild a :class:`SemimartingalePath` from a long-format path dump."""
    _, header, rows = read_csv(path)
    data = np.array(rows, dtype=float)
    d = (len(header) - 2) // 3
    ids = data[:, 0].astype(int)
    n_paths = ids.max() + 1
    block = data.reshape(n_paths, -1, data.shape[1])
    grid = TimeGrid(block[0, :, 1])
    x0 = block[0, 0, 2:2 + d]
    m = block[:, :, 2 + d:2 + 2 * d]
    a = block[:, :, 2 + 2 * d:]
    return SemimartingalePath(grid, x0, m, a)
