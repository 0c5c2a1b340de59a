"""Run artifacts: CSV tables, loop files with JSON sidecars, JSON reports.

CSV files follow RFC 4180 with '.' decimals and 17 significant digits, so a
reload reproduces every double exactly. Each file starts with ``#`` metadata
lines (code version, config hash) ahead of the header row; JSON files carry
the same data under a ``"meta"`` key. Nothing time dependent is written, so
identical runs give byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from . import __version__ as CODE_VERSION
from .loopspace import LoopConfiguration


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON form of a config mapping."""
    blob = json.dumps(config if config is not None else {}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def metadata(config=None, **extra) -> dict:
    meta = {"code": "orbimag", "version": CODE_VERSION, "config_sha256": config_hash(config)}
    meta.update({k: _plain(v) for k, v in extra.items()})
    return meta


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _plain(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    return obj


# -- CSV -------------------------------------------------------------------------

def write_table(path, columns, rows, meta=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    for key, val in (meta or {}).items():
        buf.write(f"# {key}: {json.dumps(val, sort_keys=True)}\r\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    path.write_bytes(buf.getvalue().encode())
    return path


def read_table(path):
    """Returns ``(meta, columns, rows)`` with rows as lists of strings."""
    meta, lines = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(": ")
                meta[key] = json.loads(val)
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    return meta, rows[0], rows[1:]


def read_numeric(path):
    meta, cols, rows = read_table(path)
    return meta, cols, np.array([[float(x) for x in r] for r in rows])


def body_bytes(path) -> bytes:
    """File contents without the metadata block."""
    return b"".join(l for l in Path(path).read_bytes().splitlines(keepends=True) if not l.startswith(b"#"))


# -- loops -----------------------------------------------------------------------

def loop_columns(n, d):
    return ["t"] + [f"q_{i + 1}" for i in range(n)] + [f"phi_{i + 1}" for i in range(d)]


def save_loop(path, cfg: LoopConfiguration, meta=None, **record) -> Path:
    """Loop CSV plus a sidecar ``.json`` holding T and any extra fields."""
    path = Path(path)
    N = cfg.N
    t = np.arange(N) / N
    rows = np.column_stack([t, cfg.gamma, cfg.phi])
    write_table(path, loop_columns(cfg.gamma.shape[1], cfg.phi.shape[1]), rows, meta)
    side = {"T": cfg.T, "N": N, **record}
    if meta is not None:
        side["meta"] = meta
    write_json(path.with_suffix(".json"), side)
    return path


def load_loop(path):
    """Returns ``(cfg, sidecar)``."""
    path = Path(path)
    _, cols, data = read_numeric(path)
    side = json.loads(path.with_suffix(".json").read_text())
    n = sum(c.startswith("q_") for c in cols)
    cfg = LoopConfiguration(data[:, 1:1 + n], data[:, 1 + n:], float(side["T"]))
    return cfg, side


# -- trajectories and scans ------------------------------------------------------

def save_trajectory(path, traj, meta=None) -> Path:
    n, d = traj.q.shape[1], traj.A.shape[1]
    cols = (["t"] + [f"q_{i + 1}" for i in range(n)] + [f"p_{i + 1}" for i in range(n)] + ["H"]
            + [f"A_{i + 1}" for i in range(d)])
    return write_table(path, cols, traj.rows(), meta)


SCAN_COLUMNS = ["k", "c_k", "status", "T", "kbar", "grad_norm"]


def save_scan(path, rows, meta=None) -> Path:
    return write_table(path, SCAN_COLUMNS, ([r[c] for c in SCAN_COLUMNS] for r in rows), meta)


# -- JSON ------------------------------------------------------------------------

def write_json(path, obj, meta=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    obj = dict(obj)
    if meta is not None:
        obj["meta"] = meta
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")
    return path
