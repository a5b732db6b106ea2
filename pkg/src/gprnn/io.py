"""Datasets, checkpoints and configuration files.

A dataset directory holds ``manifest.json``, one header-free CSV per trial
(T rows by N columns) and optionally one 3-column CSV of true latents per
trial.  Checkpoints are JSON: every float is written with its shortest
round-trip repr, so a save/load cycle is bit-exact.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .diffcore import ParamVector
from .diffcore.optim import AdamHyper, AdamState

KINDS = ("real", "counts")
MANIFEST = "manifest.json"
CHECKPOINT_FORMAT = "gprnn-checkpoint"
CHECKPOINT_VERSION = 1


class DatasetError(ValueError):
    pass


class CheckpointError(ValueError):
    """Unreadable, truncated or corrupted checkpoint file."""


class CheckpointMismatch(CheckpointError):
    """Checkpoint written under a different configuration."""


# ----------------------------------------------------------------------------
# datasets

@dataclass
class Dataset:
    kind: str
    x: np.ndarray                   # (B, N, T)
    z: np.ndarray | None = None     # (B, L_true, T)
    seed: int | None = None
    meta: dict | None = None

    @property
    def shape(self):
        return self.x.shape

    def trial(self, b):
        return self.x[b]


def _write_matrix(path, M, integer):
    fmt = "%d" if integer else "%.17g"
    np.savetxt(path, M, fmt=fmt, delimiter=",")


def save_dataset(path, x, kind, z=None, seed=None, meta=None):
    """Write observations ``x`` (N, T) or (B, N, T) and optional latents."""
    path = Path(path)
    x = np.asarray(x, dtype=np.float64)
    x = x[None] if x.ndim == 2 else x
    if z is not None:
        z = np.asarray(z, dtype=np.float64)
        z = z[None] if z.ndim == 2 else z
    ds = Dataset(kind, x, z, seed, meta)
    _validate_arrays(ds)
    path.mkdir(parents=True, exist_ok=True)
    B, N, T = x.shape
    trials, latents = [], []
    for b in range(B):
        name = f"trial_{b:03d}.csv"
        _write_matrix(path / name, x[b].T, kind == "counts")
        trials.append(name)
        if z is not None:
            lname = f"latent_{b:03d}.csv"
            _write_matrix(path / lname, z[b].T, False)
            latents.append(lname)
    manifest = {"kind": kind, "N": N, "T": T, "L_true": None if z is None else int(z.shape[1]),
                "trials": B, "seed": seed, "files": trials, "latent_files": latents or None,
                "meta": meta or {}}
    with open(path / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def validate_manifest(m):
    if not isinstance(m, dict):
        raise DatasetError("manifest must be a JSON object")
    for key in ("kind", "N", "T", "trials", "files"):
        if key not in m:
            raise DatasetError(f"manifest missing field {key!r}")
    if m["kind"] not in KINDS:
        raise DatasetError(f"manifest kind must be one of {KINDS}, got {m['kind']!r}")
    for key in ("N", "T", "trials"):
        if not _is_int(m[key]) or m[key] < 1:
            raise DatasetError(f"manifest field {key!r} must be a positive integer")
    if m.get("L_true") is not None and (not _is_int(m["L_true"]) or m["L_true"] < 1):
        raise DatasetError("manifest field 'L_true' must be a positive integer or null")
    if m.get("seed") is not None and not _is_int(m["seed"]):
        raise DatasetError("manifest field 'seed' must be an integer or null")
    files = m["files"]
    if not isinstance(files, list) or len(files) != m["trials"] or not all(isinstance(f, str) for f in files):
        raise DatasetError("manifest 'files' must list one file name per trial")
    lat = m.get("latent_files")
    if lat is not None:
        if not isinstance(lat, list) or len(lat) != m["trials"] or not all(isinstance(f, str) for f in lat):
            raise DatasetError("manifest 'latent_files' must list one file name per trial")
        if m.get("L_true") is None:
            raise DatasetError("manifest lists latent files but no 'L_true'")
    if "meta" in m and not isinstance(m["meta"], dict):
        raise DatasetError("manifest 'meta' must be an object")


def _validate_arrays(ds: Dataset):
    if ds.kind not in KINDS:
        raise DatasetError(f"kind must be one of {KINDS}")
    if not np.all(np.isfinite(ds.x)):
        raise DatasetError("observations must be finite")
    if ds.kind == "counts":
        if np.any(ds.x < 0):
            raise DatasetError("counts must be non-negative")
        if np.any(ds.x != np.round(ds.x)):
            raise DatasetError("counts must be integers")
    if ds.z is not None and (ds.z.shape[0] != ds.x.shape[0] or ds.z.shape[2] != ds.x.shape[2]):
        raise DatasetError("latents must have one (L, T) block per trial")


def _read_matrix(path, rows, cols, what):
    if not path.exists():
        raise DatasetError(f"missing file {path.name} ({what})")
    try:
        M = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as err:
        raise DatasetError(f"{path.name}: unparseable ({err})") from err
    if M.shape != (rows, cols):
        raise DatasetError(f"{path.name} ({what}): expected {rows} rows x {cols} columns, "
                           f"found {M.shape[0]} x {M.shape[1]}")
    return M


def load_dataset(path) -> Dataset:
    path = Path(path)
    mf = path / MANIFEST
    if not mf.exists():
        raise DatasetError(f"no {MANIFEST} in {path}")
    try:
        m = json.loads(mf.read_text())
    except json.JSONDecodeError as err:
        raise DatasetError(f"malformed manifest: {err}") from err
    validate_manifest(m)
    N, T = m["N"], m["T"]
    x = np.stack([_read_matrix(path / f, T, N, f"trial {b}").T for b, f in enumerate(m["files"])])
    z = None
    if m.get("latent_files"):
        z = np.stack([_read_matrix(path / f, T, m["L_true"], f"latents of trial {b}").T
                      for b, f in enumerate(m["latent_files"])])
    ds = Dataset(m["kind"], x, z, m.get("seed"), m.get("meta") or {})
    _validate_arrays(ds)
    return ds


# ----------------------------------------------------------------------------
# checkpoints

def _arr_out(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _arr_in(d):
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def _segments_out(p: ParamVector):
    return {name: _arr_out(p.get(name)) for name in p.names()}


def _segments_in(d):
    return ParamVector.from_segments({k: _arr_in(v) for k, v in d.items()})


def _digest(payload):
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _finite_or_none(v):
    return float(v) if v is not None and np.isfinite(v) else None


def save_checkpoint(params: ParamVector, path, config: dict, kind="gaussian", state=None,
                    arrays=None):
    """Write ``params`` plus the config (and its hash) to ``path`` atomically.

    ``state`` is an optional :class:`~gprnn.inference.train.TrainState` whose
    optimizer moments and counters are stored so training can resume;
    ``arrays`` holds extra named arrays (data centering, MAP latents).
    """
    from .inference.train import config_hash
    payload = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "kind": kind,
               "config": config, "config_hash": config_hash(config),
               "segments": _segments_out(params),
               "arrays": {k: _arr_out(v) for k, v in (arrays or {}).items()}}
    if state is not None:
        a = state.adam
        payload["state"] = {
            "it": state.it, "ema": _finite_or_none(state.ema), "calm": state.calm,
            "best_ema": _finite_or_none(state.best_ema), "best_iteration": state.best_iteration,
            "adam": {"m": a.m.tolist(), "v": a.v.tolist(), "step": a.step,
                     "hyper": {f.name: getattr(a.hyper, f.name) for f in fields(a.hyper)}},
            "best_params": None if state.best_params is None else _segments_out(state.best_params),
        }
    payload["digest"] = _digest(payload)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, allow_nan=False)
    os.replace(tmp, path)
    return path


@dataclass
class Checkpoint:
    kind: str
    config: dict
    config_hash: str
    params: ParamVector
    arrays: dict
    state: object | None = None     # TrainState when saved with one


def load_checkpoint(path, expect_config: dict | None = None) -> Checkpoint:
    """Read a checkpoint; refuse it if ``expect_config`` hashes differently."""
    from .inference.train import TrainState, config_hash
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: parse error ({err})") from err
    except OSError as err:
        raise CheckpointError(f"{path}: {err}") from err
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    digest = payload.pop("digest", None)
    if digest != _digest(payload):
        raise CheckpointError(f"{path}: content digest mismatch (corrupted file)")
    if payload["config_hash"] != config_hash(payload["config"]):
        raise CheckpointError(f"{path}: stored config does not match its hash")
    if expect_config is not None and config_hash(expect_config) != payload["config_hash"]:
        raise CheckpointMismatch(
            f"{path}: checkpoint config hash {payload['config_hash']} does not match "
            f"the requested config ({config_hash(expect_config)})")
    params = _segments_in(payload["segments"])
    state = None
    if payload.get("state") is not None:
        s = payload["state"]
        a = s["adam"]
        adam = AdamState(np.asarray(a["m"], dtype=np.float64), np.asarray(a["v"], dtype=np.float64),
                         a["step"], AdamHyper(**a["hyper"]))
        best = None if s["best_params"] is None else _segments_in(s["best_params"])
        state = TrainState(params, adam, s["it"], s["ema"], s["calm"],
                           -np.inf if s["best_ema"] is None else s["best_ema"],
                           s["best_iteration"], best)
    arrays = {k: _arr_in(v) for k, v in payload.get("arrays", {}).items()}
    return Checkpoint(payload["kind"], payload["config"], payload["config_hash"], params, arrays, state)


# ----------------------------------------------------------------------------
# key = value configuration files

def _parse_scalar(text):
    t = text.strip()
    low = t.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "\"'":
        return t[1:-1]
    return t


def parse_value(text):
    """Scalar, or a list when the value contains commas."""
    if "," in text:
        return [_parse_scalar(p) for p in text.split(",") if p.strip()]
    return _parse_scalar(text)


def parse_config_text(text):
    """Flat dict of dotted keys from ``key = value`` lines.

    ``[section]`` headers prefix the keys that follow; ``#`` starts a comment.
    """
    out, section = {}, ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        out[f"{section}.{key}" if section else key] = parse_value(value)
    return out


def load_config_file(path):
    return parse_config_text(Path(path).read_text())


def parse_overrides(items):
    """``["train.lr=0.1", ...]`` -> dict; flags win over file values."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ValueError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v)
    return out


__all__ = [
    "Checkpoint", "CheckpointError", "CheckpointMismatch", "Dataset", "DatasetError",
    "load_checkpoint", "load_config_file", "load_dataset", "parse_config_text",
    "parse_overrides", "parse_value", "save_checkpoint", "save_dataset", "validate_manifest",
]
