"""File formats: node-value CSV, control bitmask CSV and JSON-lines records.

Node-value CSV has a header ``i,j,value`` and one row per grid node.  The
control file stores one row per (level, x-index) with the y-direction as a
string of 0/1 characters, preceded by ``#`` metadata lines holding the grid,
level times and volatility band.  Paths ending in ``.gz`` are gzip-compressed.
"""

from __future__ import annotations

import csv
import gzip
import json
from pathlib import Path

import numpy as np

from .core import ControlField, Grid2D
from .errors import ConfigError


def _open(path, mode: str):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", newline="")
    return open(path, mode, newline="")


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_node_csv(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    with _open(path, "w") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "value"])
        for i in range(values.shape[0]):
            for j in range(values.shape[1]):
                w.writerow([i, j, _fmt(values[i, j])])


def read_node_csv(path, shape: tuple | None = None) -> np.ndarray:
    with _open(path, "r") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    i = np.array([int(r["i"]) for r in rows])
    j = np.array([int(r["j"]) for r in rows])
    shape = shape or (i.max() + 1, j.max() + 1)
    out = np.full(shape, np.nan)
    out[i, j] = [float(r["value"]) for r in rows]
    return out


def _join(a) -> str:
    return " ".join(_fmt(v) for v in a)


def write_control_csv(path, control: ControlField) -> None:
    g = control.grid
    with _open(path, "w") as fh:
        fh.write(f"# sigma_lo={_fmt(control.sigma_lo)}\n")
        fh.write(f"# sigma_hi={_fmt(control.sigma_hi)}\n")
        fh.write(f"# x_nodes={_join(g.x_nodes)}\n")
        fh.write(f"# y_nodes={_join(g.y_nodes)}\n")
        fh.write(f"# times={_join(control.times)}\n")
        fh.write("level,t,i,bits\n")
        for k in range(len(control)):
            t = _fmt(control.times[k])
            for i, row in enumerate(control.mask[k]):
                fh.write(f"{k},{t},{i},{''.join('1' if b else '0' for b in row)}\n")


def read_control_csv(path) -> ControlField:
    meta = {}
    with _open(path, "r") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            meta[key] = val
        elif line and not line.startswith("level,"):
            body.append(line)
    try:
        grid = Grid2D(np.array(meta["x_nodes"].split(), float), np.array(meta["y_nodes"].split(), float))
        times = np.array(meta["times"].split(), float)
        lo, hi = float(meta["sigma_lo"]), float(meta["sigma_hi"])
    except KeyError as exc:
        raise ConfigError(f"{path}: missing metadata {exc}") from None
    mask = np.zeros((times.size,) + grid.shape, dtype=np.uint8)
    seen = np.zeros((times.size, grid.nx), dtype=bool)
    for line in body:
        k, _, i, bits = line.split(",")
        k, i = int(k), int(i)
        if len(bits) != grid.ny or set(bits) - {"0", "1"}:
            raise ConfigError(f"{path}: bad bit row for level {k}, i={i}")
        mask[k, i] = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
        seen[k, i] = True
    if not seen.all():
        raise ConfigError(f"{path}: control file is incomplete")
    return ControlField(grid, times, mask, lo, hi)


def append_jsonl(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
