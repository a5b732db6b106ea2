"""Command line entry point: ``gprnn {simulate,train,eval,cosmooth,gradcheck,sweep}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .evaluate import dumps_record, metric_record, per_dim_r2, rmse_aligned
from .experiment import ExperimentConfig, run_experiment
from .io import (
    CheckpointError, DatasetError, load_checkpoint, load_config_file, load_dataset,
    parse_overrides, save_checkpoint, save_dataset,
)


class CliError(RuntimeError):
    pass


def _config(path, overrides):
    flat = load_config_file(path) if path else {}
    flat.update(parse_overrides(overrides))
    return ExperimentConfig.from_flat(flat)


# ----------------------------------------------------------------------------
# simulate

def cmd_simulate(args):
    from .simulate import lorenz_trials
    d = lorenz_trials(args.mapping, args.obs, args.neurons, args.timesteps, args.seed,
                      trials=args.trials, noise_var=args.noise_var)
    meta = {"mapping": args.mapping, "observation": args.obs, "noise_var": args.noise_var}
    save_dataset(args.out, d.x, d.kind, d.z, seed=args.seed, meta=meta)
    print(json.dumps({"out": str(args.out), "trials": args.trials, "N": args.neurons,
                      "T": args.timesteps, "kind": d.kind}))
    return 0


# ----------------------------------------------------------------------------
# train / eval

def _train_gaussian(cfg: ExperimentConfig, ds, seed, out: Path):
    from .inference.train import TrainReport, run, split_params, prepare
    tc = cfg.train_config(cfg.dynamics[0], cfg.model_mapping[0], cfg.family[0], seed)
    _, mean = prepare(ds.x, tc)
    state, report = run(ds.x, tc)
    _, family = split_params(report.checkpoint, tc.spec, mean)
    path = out / f"checkpoint_seed{seed}.json"
    arrays = {"x_mean": mean, "x_train": ds.x, **{f"enc.{k}": v for k, v in family.phi.items()}}
    params = report.checkpoint.__class__.from_segments(
        {k: v for k, v in report.checkpoint.segments().items() if not k.startswith("enc.")})
    save_checkpoint(params, path, tc.as_dict(), "gaussian", state=state, arrays=arrays)
    report.write_jsonl(out / f"report_seed{seed}.jsonl")
    return path, report


def _train_poisson(cfg: ExperimentConfig, ds, seed, out: Path):
    from .inference.poisson import train_poisson_map
    pc = cfg.poisson_config(seed)
    fit = train_poisson_map(ds.x, pc)
    path = out / f"checkpoint_seed{seed}.json"
    save_checkpoint(fit.model.params, path, pc.as_dict(), "poisson",
                    arrays={"F": fit.F, "z": fit.z})
    fit.report.write_jsonl(out / f"report_seed{seed}.jsonl")
    return path, fit.report


def cmd_train(args):
    cfg = _config(args.config, args.set)
    ds = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    for seed in seeds:
        if ds.kind == "counts":
            path, report = _train_poisson(cfg, ds, seed, out)
        else:
            path, report = _train_gaussian(cfg, ds, seed, out)
        print(json.dumps({"seed": seed, "checkpoint": str(path), "iterations": len(report.iteration),
                          "best_objective": report.best_objective, "converged": report.converged}))
    return 0


def restore_gaussian(ck):
    """(ModelParams, VariationalFamily, x_train) from a Gaussian checkpoint."""
    from .inference.families import VariationalFamily
    from .inference.train import ModelParams, TrainConfig
    tc = TrainConfig(**ck.config)
    phi = {k[4:]: v for k, v in ck.arrays.items() if k.startswith("enc.")}
    model = ModelParams(tc.spec, ck.params, ck.arrays["x_mean"])
    return model, VariationalFamily(tc.spec.family, phi), ck.arrays["x_train"]


def restore_poisson(ck):
    from .inference.poisson import PoissonConfig, PoissonFit
    from .inference.train import ModelParams, TrainReport
    pc = PoissonConfig(**ck.config)
    model = ModelParams(pc.spec, ck.params, np.zeros(ck.arrays["F"].shape[0]))
    return PoissonFit(model, ck.arrays["F"], ck.arrays["z"], TrainReport(config_hash=ck.config_hash))


def _latents_gaussian(model, family, x_train, x):
    from .inference.families import variational_encode
    if model.spec.family == "MF":
        if x.shape != x_train.shape or not np.array_equal(x, x_train):
            raise CliError("an MF posterior only covers its training trials")
        mu = family.phi["mu"]                      # (B, T, L)
        return np.swapaxes(mu, 1, 2)
    z = variational_encode(family, x - model.x_mean[:, None]).mu
    return z[None] if z.ndim == 2 else z


def cmd_eval(args):
    ck = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    records = []
    if ck.kind == "gaussian":
        if ds.kind != "real":
            raise CliError("Gaussian checkpoint needs a real-valued dataset")
        model, family, x_train = restore_gaussian(ck)
        est = _latents_gaussian(model, family, x_train, ds.x)
    else:
        if ds.kind != "counts":
            raise CliError("Poisson checkpoint needs a counts dataset")
        from .inference.testtime import poisson_latents
        fit = restore_poisson(ck)
        z = np.asarray(fit.z)
        z = z[None] if z.ndim == 2 else z
        same = np.asarray(ck.arrays.get("F")).shape[1] == ds.x.shape[0] * ds.x.shape[2]
        est = z if same and z.shape[-1] == ds.x.shape[-1] else poisson_latents(fit, ds.x)
    seed = ck.config.get("seed")
    if ds.z is not None:
        records.append(metric_record("rmse_aligned", rmse_aligned(est, ds.z), seed, ck.config_hash))
        for d, r2 in enumerate(per_dim_r2(est, ds.z)):
            records.append(metric_record("r2", r2, seed, ck.config_hash, dimension=d))
    else:
        records.append(metric_record("latent_sd", float(np.std(est)), seed, ck.config_hash))
    for rec in records:
        print(dumps_record(rec))
    return 0


def cmd_cosmooth(args):
    from .evaluate import r_squared
    ck = load_checkpoint(args.checkpoint)
    L = int(ck.config["L"])
    if args.dims is not None and args.dims != L:
        raise CliError(f"checkpoint has L={L} latent dimensions, --dims asked for {args.dims}")
    ds = load_dataset(args.data)
    if ck.kind == "poisson":
        from .evaluate import cosmooth_scores
        scores = cosmooth_scores(restore_poisson(ck), ds.x)
    else:
        from .inference.poisson import smooth_counts
        from .inference.testtime import cosmooth_predict_gaussian
        model, family, x_train = restore_gaussian(ck)
        pred = cosmooth_predict_gaussian(model, family, x_train, ds.x)
        target = smooth_counts(ds.x)
        scores = {j: r_squared(p, target[:, j]) for j, p in pred.items() if np.ptp(target[:, j]) > 0}
    seed = ck.config.get("seed")
    for j, v in sorted(scores.items()):
        print(dumps_record(metric_record("cosmooth_r2", v, seed, ck.config_hash, neuron=j)))
    avg = float(np.mean(list(scores.values())))
    print(dumps_record(metric_record("cosmooth_r2_mean", avg, seed, ck.config_hash, dims=L)))
    return 0


# ----------------------------------------------------------------------------
# gradcheck

def gradcheck_report(seed=0, L=2, T=4, N=3, H=4, family="BI-LSTM", dynamics="rnn", mapping="gp"):
    """Finite-difference check of the full ELBO on a random tiny instance."""
    from .diffcore import ParamVector, finite_diff_check
    from .inference.elbo import draw_eps, elbo_node
    from .inference.train import TrainConfig, init_segments, prepare
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(N, T))
    tc = TrainConfig(L=L, H=H, family=family, dynamics=dynamics, mapping=mapping, seed=seed,
                     init="random")
    x_tm, _ = prepare(x, tc)
    seg = init_segments(x_tm, tc)
    # move the GP hypers and noise off their data-driven start
    for name in ("gp.log_rho", "gp.log_sigma", "obs.log_l"):
        if name in seg:
            seg[name] = seg[name] + rng.normal(0.0, 0.2)
    point = ParamVector.from_segments(seg)
    eps = draw_eps(seed, 1, 1, T, L)
    rep = finite_diff_check(lambda p: elbo_node(p, tc.spec, x_tm, eps), point, tol=1e-4)
    return {"seed": seed, "family": family, "dynamics": dynamics, "mapping": mapping,
            "parameters": len(point), "max_relative_error": rep.max_relative_error,
            "worst_segment": rep.worst_segment, "pass": bool(rep.passed)}


def poisson_gradcheck_report(seed=0, L=2, T=4, N=3, H=4, B=1):
    """Finite-difference check of the Poisson joint in F, z, prior and GP hypers."""
    from .diffcore import ParamVector, finite_diff_check
    from .dynamics import init_rnn_params
    from .gpmap import GpHyper, gram_matrix
    from .inference.poisson import PoissonConfig, poisson_joint_tm
    rng = np.random.default_rng(seed)
    spec = PoissonConfig(L=L, H=H, seed=seed).spec
    # a length scale below 1 and F drawn from the GP keep the instance well conditioned
    z = rng.normal(size=(B, T, L))
    rho, sigma = np.exp(rng.normal(0, 0.3)), np.exp(rng.uniform(-0.7, 0.0))
    K = gram_matrix(z.reshape(B * T, L).T, GpHyper(rho, sigma))
    F = np.linalg.cholesky(K) @ rng.normal(size=(B * T, N))
    seg = {"F": F, "z": z, **init_rnn_params(L, H, rng).segments("prior"),
           "gp.log_rho": np.array(np.log(rho)), "gp.log_sigma": np.array(np.log(sigma))}
    x_tm = rng.poisson(np.exp(F)).reshape(B, T, N).astype(float)
    point = ParamVector.from_segments(seg)
    rep = finite_diff_check(lambda p: poisson_joint_tm(p, spec, x_tm, 0.0), point, tol=1e-4)
    return {"seed": seed, "model": "poisson", "parameters": len(point),
            "max_relative_error": rep.max_relative_error, "worst_segment": rep.worst_segment,
            "pass": bool(rep.passed)}


def cmd_gradcheck(args):
    if args.model == "poisson":
        rep = poisson_gradcheck_report(args.seed)
    else:
        rep = gradcheck_report(args.seed, family=args.family)
    print(json.dumps(rep))
    return 0 if rep["pass"] else 1


# ----------------------------------------------------------------------------
# sweep

def cmd_sweep(args):
    cfg = _config(args.config, args.set)
    records, n_failed = run_experiment(cfg, args.out, workers=args.workers)
    print(json.dumps({"out": args.out or cfg.out, "records": len(records), "failed_cells": n_failed}))
    return 1 if n_failed else 0


def build_parser():
    p = argparse.ArgumentParser(prog="gprnn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a synthetic Lorenz dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--mapping", choices=("linear", "tanh", "sine"), default="sine")
    s.add_argument("--obs", choices=("gaussian", "poisson"), default="gaussian")
    s.add_argument("--neurons", type=int, default=50)
    s.add_argument("--timesteps", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--noise-var", type=float, default=1.0)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry (repeatable)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="latent-recovery metrics for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cosmooth", help="leave-one-neuron-out predictive R^2")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--dims", type=int, default=None)
    c.set_defaults(func=cmd_cosmooth)

    g = sub.add_parser("gradcheck", help="finite-difference check of the ELBO gradient")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--family", default="BI-LSTM")
    g.add_argument("--model", choices=("gaussian", "poisson"), default="gaussian")
    g.set_defaults(func=cmd_gradcheck)

    w = sub.add_parser("sweep", help="run a (variant x family x seed) experiment")
    w.add_argument("--config", default=None)
    w.add_argument("--out", default=None)
    w.add_argument("--workers", type=int, default=None)
    w.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, DatasetError, CheckpointError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
