"""CSV/JSON writers and MW (de)serialization."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import TWO_PI
from .mw import MWSolution

CSV_FMT = "%.16e"  # 17 significant digits


def write_csv(path, header, rows) -> Path:
    """Write a header row plus numeric rows in lossless scientific notation."""
    path = Path(path)
    arr = np.atleast_2d(np.asarray(rows, dtype=float))
    if arr.size == 0:
        arr = arr.reshape(0, len(header))
    if arr.shape[1] != len(header):
        raise ValueError(f"{path.name}: {arr.shape[1]} columns for {len(header)} header fields")
    np.savetxt(path, arr, fmt=CSV_FMT, delimiter=",", header=",".join(header), comments="")
    return path


def read_csv(path) -> tuple:
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, default=_default, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def wrap_angle(a):
    """Map to [0, 2 pi); values rounding up to 2 pi fold back to 0."""
    w = np.mod(a, TWO_PI)
    return np.where(w >= TWO_PI, 0.0, w) if np.ndim(w) else (0.0 if w >= TWO_PI else float(w))


def mw_to_dict(mw: MWSolution, model_cfg: dict | None = None) -> dict:
    return {"values": mw.values.tolist(), "beta": mw.beta, "omega": mw.omega, "tau": mw.tau,
            "phi": float(wrap_angle(mw.phi)), "residual_norm": mw.residual_norm, "T": mw.T, "V": mw.V,
            "model": model_cfg}


def mw_from_dict(d: dict) -> MWSolution:
    return MWSolution(np.array(d["values"], dtype=float), float(d["beta"]), float(d["omega"]),
                      float(d["tau"]), float(d["phi"]), float(d.get("residual_norm", 0.0)))
