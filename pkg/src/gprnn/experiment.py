"""Sweeps over (model variant x family x seed) cells on simulated Lorenz data.

Each cell simulates (or loads) data, trains on the first ``T`` points and
evaluates latent recovery on the training window and on the ``test_T``
points that follow.  Results go to ``metrics.jsonl`` (one record per
metric), ``table.md`` (seed medians and standard errors) and
``plot_data.csv`` (long format: series, t, value).  A failing cell is
recorded and the sweep carries on.
"""
from __future__ import annotations

import itertools
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .evaluate import dumps_record, metric_record, per_dim_r2, rmse_aligned
from .inference.train import TrainConfig, config_hash

WORKERS_ENV = "GPRNN_WORKERS"

# dotted config keys -> ExperimentConfig fields
KEYS = {
    "data.mapping": "mapping", "data.observation": "observation", "data.N": "N", "data.T": "T",
    "data.test_T": "test_T", "data.noise_var": "noise_var",
    "model.dynamics": "dynamics", "model.mapping": "model_mapping", "model.family": "family",
    "model.L": "L", "model.H": "H", "model.cell": "cell",
    "train.lr": "lr", "train.max_iter": "max_iter", "train.init": "init", "train.clip": "clip",
    "train.weight_decay": "weight_decay", "train.tol": "tol", "train.patience": "patience",
    "train.samples": "samples", "train.max_cycles": "max_cycles",
    "eval.heldout": "heldout", "eval.heldout_steps": "heldout_steps",
    "seeds": "seeds", "paths.out": "out",
}
LIST_FIELDS = ("mapping", "dynamics", "model_mapping", "family", "seeds")


@dataclass
class ExperimentConfig:
    mapping: tuple = ("sine",)          # simulated readout(s)
    observation: str = "gaussian"
    N: int = 50
    T: int = 200
    test_T: int = 50
    noise_var: float = 1.0
    dynamics: tuple = ("rnn",)
    model_mapping: tuple = ("gp",)
    family: tuple = ("BI-LSTM",)
    L: int = 3
    H: int = 30
    cell: str = "lstm"
    lr: float = 1e-2
    max_iter: int = 2000
    init: str = "pca"
    clip: float = 5.0
    weight_decay: float = 1e-4
    tol: float = 1e-6
    patience: int = 50
    samples: int = 1
    max_cycles: int = 2000
    heldout: str = "map"                # "map" | "rollout"
    heldout_steps: int = 300
    seeds: tuple = (0,)
    out: str = "results"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in LIST_FIELDS:
            v = getattr(self, name)
            setattr(self, name, tuple(v) if isinstance(v, (list, tuple)) else (v,))
        from .simulate import MAPPINGS
        for m in self.mapping:
            if m not in MAPPINGS:
                raise ValueError(f"data.mapping must be in {MAPPINGS}, got {m!r}")
        if self.observation not in ("gaussian", "poisson"):
            raise ValueError("data.observation must be gaussian or poisson")
        for v in self.dynamics:
            if v not in ("rnn", "ar1"):
                raise ValueError("model.dynamics must be rnn or ar1")
        for v in self.model_mapping:
            if v not in ("gp", "nn"):
                raise ValueError("model.mapping must be gp or nn")
        if min(self.N, self.T, self.L, self.H) < 1 or self.test_T < 0:
            raise ValueError("sizes must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.heldout not in ("map", "rollout"):
            raise ValueError("eval.heldout must be map or rollout")

    @classmethod
    def from_flat(cls, flat: dict):
        kw = {}
        for k, v in flat.items():
            if k not in KEYS:
                raise ValueError(f"unknown config key {k!r}")
            kw[KEYS[k]] = v
        return cls(**kw)

    def as_dict(self):
        return asdict(self)

    def cells(self):
        """(mapping, dynamics, model_mapping, family, seed) in a fixed order."""
        return list(itertools.product(self.mapping, self.dynamics, self.model_mapping,
                                      self.family, self.seeds))

    def train_config(self, dynamics, model_mapping, family, seed):
        return TrainConfig(L=self.L, H=self.H, dynamics=dynamics, mapping=model_mapping,
                           family=family, cell=self.cell, seed=seed, lr=self.lr,
                           max_iter=self.max_iter, tol=self.tol, patience=self.patience,
                           clip=self.clip, samples=self.samples, weight_decay=self.weight_decay,
                           init=self.init)

    def poisson_config(self, seed):
        from .inference.poisson import PoissonConfig
        return PoissonConfig(L=self.L, H=self.H, cell=self.cell, seed=seed, lr=self.lr,
                             max_cycles=self.max_cycles, clip=self.clip,
                             weight_decay=self.weight_decay)


def cell_label(cell):
    mapping, dyn, mm, fam, _ = cell
    return f"{mapping}/{dyn}/{mm}/{fam}"


def _data(cfg: ExperimentConfig, mapping, seed):
    from .simulate import lorenz_dataset
    return lorenz_dataset(mapping, cfg.observation, cfg.N, cfg.T, seed,
                          noise_var=cfg.noise_var, extra=cfg.test_T)


def heldout_rollout(model, family, x_train, M):
    """Forecast-window latents rolled out from the RNN prior mean."""
    from .dynamics import prior_mean_rollout
    from .inference.families import variational_encode
    from .inference.model import ar1_of, rnn_of
    seg = {k: np.asarray(v) for k, v in model.segments().items()}
    z_train = variational_encode(family, x_train - model.x_mean[:, None]).mu
    if model.spec.dynamics == "ar1":
        a = np.asarray(ar1_of(seg).a, dtype=np.float64)
        return z_train[:, -1:] * a[:, None] ** np.arange(1, M + 1)
    return prior_mean_rollout(rnn_of(seg, model.spec), z_train, M)


def fit_cell(cfg: ExperimentConfig, cell):
    """Train and evaluate one cell; returns metrics, plot series and checkpoint data."""
    mapping, dyn, mm, fam, seed = cell
    data = _data(cfg, mapping, seed)
    T = cfg.T
    x_tr, z_tr = data.x[:, :T], data.z[:, :T]
    x_te, z_te = data.x[:, T:], data.z[:, T:]
    metrics, series = [], {}
    if cfg.observation == "poisson":
        from .inference.poisson import train_poisson_map
        pc = cfg.poisson_config(seed)
        h = config_hash({"experiment": cfg.poisson_config(seed).as_dict(), "mapping": mapping})
        fit = train_poisson_map(x_tr, pc)
        est = fit.z
        for d, r2 in enumerate(per_dim_r2(est, z_tr)):
            metrics.append(metric_record("r2", r2, seed, h, dimension=d))
        metrics.append(metric_record("rmse_train", rmse_aligned(est, z_tr), seed, h))
        ckpt = {"params": fit.model.params, "config": pc.as_dict(), "kind": "poisson",
                "arrays": {"F": fit.F, "z": fit.z}}
    else:
        from .inference.families import variational_encode
        from .inference.testtime import heldout_latents
        from .inference.train import train_gaussian
        tc = cfg.train_config(dyn, mm, fam, seed)
        h = config_hash({"train": tc.as_dict(), "mapping": mapping, "N": cfg.N, "T": cfg.T,
                         "test_T": cfg.test_T, "heldout": cfg.heldout})
        model, family, report = train_gaussian(x_tr, tc)
        est = variational_encode(family, x_tr - model.x_mean[:, None]).mu
        metrics.append(metric_record("rmse_train", rmse_aligned(est, z_tr), seed, h))
        if cfg.test_T > 0:
            if cfg.heldout == "map":
                est_te = heldout_latents(model, family, x_tr, x_te, steps=cfg.heldout_steps)
            else:
                est_te = heldout_rollout(model, family, x_tr, cfg.test_T)
            metrics.append(metric_record("rmse_test", rmse_aligned(est_te, z_te), seed, h))
        metrics.append(metric_record("elbo", report.best_objective, seed, h))
        ckpt = {"params": model.params, "config": tc.as_dict(), "kind": "gaussian",
                "arrays": {"x_mean": model.x_mean, "x_train": x_tr,
                           **{f"enc.{k}": v for k, v in family.phi.items()}}}
    from .evaluate import affine_align
    _, aligned = affine_align(est, z_tr)
    for d in range(z_tr.shape[0]):
        series[f"true/z{d + 1}"] = z_tr[d]
        series[f"est/z{d + 1}"] = aligned[d]
    label = cell_label(cell)
    for rec in metrics:
        rec.update(cell=label, mapping=mapping, dynamics=dyn, model_mapping=mm, family=fam)
    return {"metrics": metrics, "series": series, "checkpoint": ckpt}


def _safe_fit(cfg, cell):
    try:
        return fit_cell(cfg, cell)
    except Exception as err:  # a failing cell is recorded, the sweep continues
        return {"error": f"{type(err).__name__}: {err}", "traceback": traceback.format_exc()}


def worker_count(default=1):
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == "":
        return default
    n = int(raw)
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1")
    return n


def _median_se(values):
    v = np.asarray(values, dtype=np.float64)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(np.median(v)), se


def summarize(records):
    """{(cell, metric, dimension): (median, se, n)} over seeds."""
    groups = {}
    for r in records:
        if r["metric"] == "failed":
            continue
        key = (r["cell"], r["metric"], r.get("dimension"))
        groups.setdefault(key, []).append(r["value"])
    return {k: (*_median_se(v), len(v)) for k, v in groups.items()}


def markdown_table(cfg: ExperimentConfig, records):
    """Rows: (mapping, dynamics, model mapping); columns: families; cell: median (se)."""
    summ = summarize(records)
    failed = {r["cell"] for r in records if r["metric"] == "failed"}
    metrics = sorted({k[1] for k in summ} - {"elbo"}) or ["rmse_train"]
    lines = []
    for metric in metrics:
        dims = sorted({k[2] for k in summ if k[1] == metric}, key=lambda d: -1 if d is None else d)
        for dim in dims:
            title = metric if dim is None else f"{metric} (dimension {dim})"
            lines += [f"### {title}", "",
                      "| mapping | dynamics | model mapping | " + " | ".join(cfg.family) + " |",
                      "|" + "---|" * (3 + len(cfg.family))]
            for mapping, dyn, mm in itertools.product(cfg.mapping, cfg.dynamics, cfg.model_mapping):
                row = [mapping, dyn, mm]
                for fam in cfg.family:
                    label = f"{mapping}/{dyn}/{mm}/{fam}"
                    s = summ.get((label, metric, dim))
                    txt = "n/a" if s is None else f"{s[0]:.4f} ({s[1]:.4f})"
                    if label in failed:
                        txt += " [failed seeds]"
                    row.append(txt)
                lines.append("| " + " | ".join(row) + " |")
            lines.append("")
    lines.append(f"Seed medians with standard errors in parentheses; seeds {list(cfg.seeds)}.")
    return "\n".join(lines) + "\n"


def write_plot_data(path, series_by_cell):
    with open(path, "w") as fh:
        fh.write("series,t,value\n")
        for prefix, series in series_by_cell:
            for name, values in series.items():
                for t, v in enumerate(values):
                    fh.write(f"{prefix}/{name},{t},{float(v)!r}\n")


def run_experiment(cfg: ExperimentConfig, out=None, workers=None):
    """Run every cell and write the result files; returns (records, n_failed)."""
    from .io import save_checkpoint
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cells = cfg.cells()
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_fit, [cfg] * len(cells), cells))
    else:
        results = [_safe_fit(cfg, c) for c in cells]
    records, plots, n_failed = [], [], 0
    ckdir = out / "checkpoints"
    ckdir.mkdir(exist_ok=True)
    # single writer: results are written in cell order once all are in
    for cell, res in zip(cells, results):
        label = cell_label(cell)
        seed = cell[-1]
        if "error" in res:
            n_failed += 1
            records.append({"metric": "failed", "value": None, "seed": seed, "config_hash": "",
                            "cell": label, "error": res["error"]})
            continue
        records.extend(res["metrics"])
        plots.append((f"{label}/seed{seed}", res["series"]))
        ck = res["checkpoint"]
        name = label.replace("/", "_") + f"_seed{seed}.json"
        save_checkpoint(ck["params"], ckdir / name, ck["config"], ck["kind"], arrays=ck["arrays"])
    with open(out / "metrics.jsonl", "w") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")
    (out / "table.md").write_text(markdown_table(cfg, records))
    write_plot_data(out / "plot_data.csv", plots)
    with open(out / "config.json", "w") as fh:
        json.dump(cfg.as_dict(), fh, indent=2, default=list)
    return records, n_failed


__all__ = [
    "ExperimentConfig", "KEYS", "WORKERS_ENV", "cell_label", "fit_cell", "heldout_rollout",
    "markdown_table", "run_experiment", "summarize", "worker_count", "write_plot_data",
]
