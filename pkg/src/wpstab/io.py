"""JSON and CSV serialisation for solutions, field bundles and reports."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from wpstab.errors import WpstabError


class IntegrityError(WpstabError, ValueError):
    """A stored file is malformed or inconsistent with its own header."""


def _floats(xs) -> list:
    return [float(x) for x in np.asarray(xs, dtype=float)]


def array_digest(*arrays) -> str:
    h = hashlib.sha256()
    for arr in arrays:
        h.update(np.ascontiguousarray(np.asarray(arr, dtype=float)).tobytes())
    return h.hexdigest()[:16]


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and hasattr(obj, "name"):  # enums
        return obj.value
    return obj


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=1, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"cannot read {path}: {exc}") from exc


def write_csv(path, columns: dict) -> Path:
    """Columns of equal length, written in insertion order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    lengths = {len(columns[k]) for k in names}
    if len(lengths) > 1:
        raise ValueError("CSV columns must have equal length")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*(columns[k] for k in names)):
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def write_rows(path, rows: list[dict], header: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _clean(r.get(k, "")) for k in header})
    return path


# --------------------------------------------------------------------------- field bundles


def field_bundle(T: float, fields: dict, tags: dict | None = None) -> dict:
    fields = {k: _floats(v) for k, v in fields.items()}
    sizes = {len(v) for v in fields.values()}
    if len(sizes) > 1:
        raise ValueError("all fields must share the grid")
    n = sizes.pop() if sizes else 0
    return {"T": float(T), "n_points": n, "fields": fields, "tags": dict(tags or {})}


def check_bundle(payload: dict) -> dict:
    for key in ("T", "n_points", "fields"):
        if key not in payload:
            raise IntegrityError(f"field bundle lacks '{key}'")
    n = payload["n_points"]
    for name, vals in payload["fields"].items():
        if len(vals) != n:
            raise IntegrityError(f"field '{name}' has {len(vals)} samples, header says {n}")
        if any(v is None for v in vals):
            raise IntegrityError(f"field '{name}' contains non-finite samples")
    return payload


# --------------------------------------------------------------------------- Böhm solutions


def solution_payload(sol) -> dict:
    pr = sol.params
    return {
        "params": {"p": pr.p, "q": pr.q, "alpha": pr.alpha, "Lambda": pr.Lambda, "n_points": pr.n_points,
                   "tol": pr.tol, "bracket": list(pr.bracket), "scan_points": pr.scan_points},
        "T": sol.T,
        "topology": sol.topology.value,
        "b0": sol.b0,
        "label": sol.label,
        "t": _floats(sol.t),
        "a": _floats(sol.a),
        "b": _floats(sol.b),
        "adot": _floats(sol.adot),
        "bdot": _floats(sol.bdot),
        "diagnostics": sol.diagnostics,
        "digest": sol.digest(),
    }


def save_solution(sol, path) -> Path:
    return write_json(path, solution_payload(sol))


def save_solution_csv(sol, path) -> Path:
    return write_csv(path, {"t": sol.t, "a": sol.a, "b": sol.b, "adot": sol.adot, "bdot": sol.bdot})


def load_solution(path):
    from wpstab.bohm import BohmParams, solution_from_arrays

    d = read_json(path)
    try:
        pr = d["params"]
        params = BohmParams(int(pr["p"]), int(pr["q"]), int(pr["alpha"]), int(pr["n_points"]),
                            float(pr.get("tol", 1e-10)), tuple(pr.get("bracket", (0.05, 1.5))),
                            int(pr.get("scan_points", 400)))
        arrays = [np.asarray(d[k], dtype=float) for k in ("t", "a", "b", "adot", "bdot")]
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"malformed solution file {path}: {exc}") from exc
    n = len(arrays[0])
    if any(len(x) != n for x in arrays) or n != params.n_points:
        raise IntegrityError("solution arrays disagree in length")
    if not all(np.all(np.isfinite(x)) for x in arrays):
        raise IntegrityError("solution contains non-finite samples")
    t = arrays[0]
    if abs(t[-1] - float(d["T"])) > 1e-12 * max(1.0, abs(t[-1])) or np.any(np.diff(t) <= 0):
        raise IntegrityError("time samples inconsistent with T")
    sol = solution_from_arrays(params, d["T"], *arrays[1:], topology=d["topology"], b0=d.get("b0"),
                               diagnostics={k: v for k, v in d.get("diagnostics", {}).items()
                                            if k == "boundary_mismatch"})
    if "digest" in d and d["digest"] != sol.digest():
        raise IntegrityError("solution digest mismatch: file was modified or corrupted")
    return sol


def solution_filename(p: int, q: int, alpha: int, ext: str = "json") -> str:
    return f"bohm_p{p}_q{q}_a{alpha}.{ext}"
