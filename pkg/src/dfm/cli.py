"""Operator surface: verify / train / sample / bench / bestof.

Configuration is a flat key = value file with dotted section names
(e.g. `sampler.steps = 32`); command-line flags override file values,
and every run writes its fully resolved configuration next to its
outputs so it can be reproduced bit-for-bit.

Exit codes: 0 success, 1 check or assertion failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import data, verify
from .denoiser import (FactorizedModel, ModelDenoiser, OracleDenoiser,
                       load_checkpoint, save_checkpoint, train)
from .paths import mask_mixture_path, metric_path
from .rngs import substream
from .sampler import SamplerConfig, best_of_n, sample, sample_chains, \
    write_trace_csv
from .schedule import BetaSchedule, KappaSchedule

DEFAULTS = {
    "schedule.c": 3.0,
    "schedule.a": 0.9,
    "schedule.beta_cap": 1e6,
    "schedule.kappa": "linear",
    "path.kind": "metric",
    "task": "two_mode",
    "sampler.steps": 32,
    "sampler.chains": 1000,
    "train.steps": 2000,
    "train.batch_size": 32,
    "train.lr": 0.5,
    "train.hidden": 32,
    "train.embed_dim": 8,
    "train.time_embedding": 0,
    "train.dataset_size": 4096,
    "seed": 0,
    "threads": 1,
}


class UsageError(Exception):
    pass


def load_config(path) -> dict:
    cfg = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULTS:
                raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
            cfg[key] = value
    return cfg


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    overrides = {
        "seed": getattr(args, "seed", None),
        "task": getattr(args, "task", None),
        "sampler.steps": getattr(args, "steps", None),
        "sampler.chains": getattr(args, "chains", None),
        "path.kind": getattr(args, "path_kind", None),
        "threads": getattr(args, "threads", None),
        "train.steps": getattr(args, "train_steps", None),
        "train.lr": getattr(args, "lr", None),
    }
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    # coerce to native types
    for key, default in DEFAULTS.items():
        if isinstance(default, bool) or key == "train.time_embedding":
            cfg[key] = int(cfg[key])
        elif isinstance(default, int):
            cfg[key] = int(cfg[key])
        elif isinstance(default, float):
            cfg[key] = float(cfg[key])
    return cfg


def write_resolved(cfg: dict, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "config.resolved", "w") as fh:
        for key in sorted(cfg):
            fh.write(f"{key} = {cfg[key]}\n")


def build_path(cfg: dict, task):
    sched = BetaSchedule(c=cfg["schedule.c"], a=cfg["schedule.a"],
                         beta_cap=cfg["schedule.beta_cap"])
    if cfg["path.kind"] == "metric":
        return metric_path(task.space, sched), task.space
    if cfg["path.kind"] == "mixture":
        space, mask = data.with_mask_token(task.space)
        return mask_mixture_path(space, mask,
                                 KappaSchedule(cfg["schedule.kappa"])), space
    raise UsageError(f"unknown path.kind {cfg['path.kind']!r}")


# ---------------------------------------------------------------------


def cmd_verify(args) -> int:
    cfg = resolve_config(args)
    outdir = Path(args.out)
    write_resolved(cfg, outdir)
    seed = cfg["seed"]
    corrupt = args.corrupt
    groups = {
        "rate_condition": [verify.check_rate_condition(
            trials=args.trials or 10_000, seed=seed,
            corrupt=(corrupt == "rate"))],
        "continuity_conditional": [
            verify.check_continuity_conditional(
                trials=args.trials or 100, seed=seed, deriv="analytic",
                corrupt=(corrupt == "continuity")),
            verify.check_continuity_conditional(
                trials=args.trials or 100, seed=seed, deriv="fd",
                corrupt=(corrupt == "continuity")),
        ],
        "continuity_marginal": [verify.check_continuity_marginal(
            seed=seed, corrupt=(corrupt == "marginal"))],
        "closed_vs_generic": [verify.closed_vs_generic(
            trials=args.trials or 1000, seed=seed)],
        "boundary": [verify.check_boundary(seed=seed)],
    }
    all_ok = True
    for name, reports in groups.items():
        verify.write_reports(reports, outdir / f"{name}.csv")
        for r in reports:
            print(r.line())
            all_ok = all_ok and r.passed
    return 0 if all_ok else 1


def _make_denoiser(cfg, args, task, path):
    if args.oracle:
        if task.q is None:
            raise UsageError(f"task {task.name} has no explicit q; cannot "
                             "use --oracle")
        return OracleDenoiser(task.q, path)
    if not args.ckpt:
        raise UsageError("need --oracle or --ckpt")
    return ModelDenoiser(load_checkpoint(args.ckpt))


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    outdir = Path(args.out)
    write_resolved(cfg, outdir)
    task = data.builtin_task(cfg["task"])
    path, space = build_path(cfg, task)
    rng = substream(cfg["seed"], "train")
    dataset = data.task_dataset(task, cfg["train.dataset_size"], rng)
    C = len(task.conditions[0])
    model = FactorizedModel(
        K=space.K, D=task.D, C=C, embed_dim=cfg["train.embed_dim"],
        hidden=cfg["train.hidden"],
        time_embedding=bool(cfg["train.time_embedding"]),
        init_rng=substream(cfg["seed"], "train", "init"))
    try:
        losses = train(model, path, dataset, steps=cfg["train.steps"],
                       batch_size=cfg["train.batch_size"],
                       lr=cfg["train.lr"], rng=rng)
    except RuntimeError as exc:
        save_checkpoint(model, outdir / "model.ckpt")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    save_checkpoint(model, outdir / "model.ckpt")
    with open(outdir / "loss.csv", "w") as fh:
        fh.write("step,loss\n")
        for step, loss in enumerate(losses):
            fh.write(f"{step},{loss:.10g}\n")
    print(f"trained {cfg['train.steps']} steps; "
          f"loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    return 0


def cmd_sample(args) -> int:
    cfg = resolve_config(args)
    outdir = Path(args.out)
    write_resolved(cfg, outdir)
    task = data.builtin_task(cfg["task"])
    path, _ = build_path(cfg, task)
    den = _make_denoiser(cfg, args, task, path)
    condition = task.conditions[0]
    n = cfg["sampler.chains"]
    record = bool(args.trace_dir)
    sampler_cfg = SamplerConfig(steps=cfg["sampler.steps"], seed=cfg["seed"],
                                record_trace=record)
    out, traces = sample_chains(den, path, sampler_cfg, condition=condition,
                                n=n, rng=substream(cfg["seed"], "chains"))
    if args.trace_dir:
        tdir = Path(args.trace_dir)
        tdir.mkdir(parents=True, exist_ok=True)
        for i, tr in enumerate(traces):
            write_trace_csv(tr, tdir / f"chain_{i:06d}.csv")
    with open(outdir / "samples.csv", "w") as fh:
        if task.mode == "text":
            fh.write("chain,text,missing_eos\n")
            for i, row in enumerate(out):
                text, missing = data.decode_text(row, task.charmap,
                                                 task.space.eos)
                fh.write(f"{i},{text},{int(missing)}\n")
        else:
            fh.write("chain," + ",".join(
                f"token_{j}" for j in range(task.D)) + "\n")
            for i, row in enumerate(out):
                fh.write(f"{i}," + ",".join(str(v) for v in row) + "\n")
    if task.q is not None:
        tv = verify.empirical_tv(out, task.joint(condition))
        print(f"tv = {tv:.4f} over {n} chains")
        with open(outdir / "metrics.csv", "w") as fh:
            fh.write("metric,value\n")
            fh.write(f"tv,{tv:.6f}\n")
    return 0


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    outdir = Path(args.out)
    write_resolved(cfg, outdir)
    task = data.builtin_task(cfg["task"])
    path, _ = build_path(cfg, task)
    den = _make_denoiser(cfg, args, task, path)
    condition = task.conditions[0]
    n = cfg["sampler.chains"]
    rows = []
    for steps in (4, 8, 16, 32, 64, 128):
        sampler_cfg = SamplerConfig(steps=steps, seed=cfg["seed"])
        rng = substream(cfg["seed"], "bench", steps)
        t0 = time.perf_counter()
        out, _ = sample_chains(den, path, sampler_cfg, condition=condition,
                               n=n, rng=rng)
        dt = time.perf_counter() - t0
        tv = verify.empirical_tv(out, task.joint(condition)) \
            if task.q is not None else float("nan")
        rows.append((steps, tv, dt, n / dt))
        print(f"steps={steps:4d} tv={tv:.4f} seconds={dt:.3f} "
              f"chains_per_second={n / dt:.1f}")
    with open(outdir / "bench.csv", "w") as fh:
        fh.write("steps,tv,seconds,chains_per_second\n")
        for steps, tv, dt, cps in rows:
            fh.write(f"{steps},{tv:.6f},{dt:.6f},{cps:.3f}\n")
    return 0


def _make_scorer(name: str, task, condition):
    if name == "logq":
        if task.q is None:
            raise UsageError("logq scorer needs an enumerable task")
        q = task.joint(condition)

        def scorer(seq):
            p = q.prob_of(seq)
            return float(np.log(p)) if p > 0 else float("-inf")
        return scorer
    if name == "match":
        if task.name != "copy_condition":
            raise UsageError("match scorer only applies to copy_condition")
        expected = np.asarray(tuple(reversed(condition)), dtype=np.int64)

        def scorer(seq):
            return float((np.asarray(seq) == expected).mean())
        return scorer
    raise UsageError(f"unknown scorer {name!r}")


def cmd_bestof(args) -> int:
    cfg = resolve_config(args)
    outdir = Path(args.out)
    write_resolved(cfg, outdir)
    if args.keep > args.best_of:
        raise UsageError(f"keep={args.keep} exceeds best-of n={args.best_of}")
    task = data.builtin_task(cfg["task"])
    path, _ = build_path(cfg, task)
    den = _make_denoiser(cfg, args, task, path)
    condition = task.conditions[0]
    scorer = _make_scorer(args.scorer, task, condition)
    best_scores, single_scores = [], []
    for rep in range(args.repeats):
        sampler_cfg = SamplerConfig(steps=cfg["sampler.steps"],
                                    seed=cfg["seed"] + rep)
        selected = best_of_n(den, path, sampler_cfg, scorer,
                             n=args.best_of, keep=args.keep,
                             condition=condition)
        best_scores.append(selected[0][1])
        tokens, _ = sample(den, path, sampler_cfg, condition=condition,
                           rng=substream(cfg["seed"] + rep, "single"))
        single_scores.append(scorer(tokens))
    mean_best = float(np.mean(best_scores))
    mean_single = float(np.mean(single_scores))
    print(f"mean best-of-{args.best_of} score = {mean_best:.4f}")
    print(f"mean single-sample score = {mean_single:.4f}")
    with open(outdir / "bestof.csv", "w") as fh:
        fh.write("metric,value\n")
        fh.write(f"mean_best_of_{args.best_of},{mean_best:.6f}\n")
        fh.write(f"mean_single,{mean_single:.6f}\n")
    return 0


# ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dfm", description="discrete flow matching desk engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out")
        p.add_argument("--threads", type=int)
        p.add_argument("--task")
        p.add_argument("--path-kind", choices=["metric", "mixture"])

    p = sub.add_parser("verify", help="run the residual check suite")
    common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--corrupt", choices=["rate", "continuity", "marginal"],
                   help="test hook: inject a known violation")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train the factorized predictor")
    common(p)
    p.add_argument("--train-steps", type=int, dest="train_steps")
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    for name, fn in (("sample", cmd_sample), ("bench", cmd_bench)):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--steps", type=int)
        p.add_argument("--chains", type=int)
        p.add_argument("--oracle", action="store_true")
        p.add_argument("--ckpt")
        if name == "sample":
            p.add_argument("--trace-dir")
        p.set_defaults(func=fn)

    p = sub.add_parser("bestof", help="best-of-N inference scaling")
    common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--ckpt")
    p.add_argument("--best-of", type=int, default=8, dest="best_of")
    p.add_argument("--keep", type=int, default=1)
    p.add_argument("--scorer", choices=["logq", "match"], default="logq")
    p.add_argument("--repeats", type=int, default=100)
    p.set_defaults(func=cmd_bestof)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
