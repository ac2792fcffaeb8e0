"""Command line entry point: ``nml census|check|train|compare|demo``."""
from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path

import numpy as np

from .. import __version__, net, symmetry
from ..optim import DivergenceError, Trainer, TrajectoryLog
from . import demos
from .config import BUNDLED, ConfigError, ExperimentConfig
from .data import DataError
from .report import compare

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


def _err(msg: str) -> None:
    print(f"nml: error: {msg}", file=sys.stderr)


def max_workers(n_jobs: int) -> int:
    raw = os.environ.get("NML_THREADS", "")
    try:
        cap = int(raw) if raw.strip() else (os.cpu_count() or 1)
    except ValueError:
        raise ConfigError(f"NML_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(cap, n_jobs))


def _environment() -> dict:
    return {"nml": __version__, "python": platform.python_version(), "numpy": np.__version__}


# ---------------------------------------------------------------- census


def cmd_census(args) -> int:
    target = args.spec
    try:
        spec = net.bundled_spec(target) if target in BUNDLED else net.load_spec(target)
        c = net.census(spec)
    except (net.SpecError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    print(f"architecture: {spec.name or target}")
    print(f"scale:        {c.n_scale}")
    print(f"rescale:      {c.n_rescale}")
    print(f"translation:  {c.n_translation}")
    print(f"parameters:   {c.n_params}")
    for k, v in sorted(c.breakdown.items()):
        print(f"  {k}: {v}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "census.json").write_text(json.dumps(c.to_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ----------------------------------------------------------------- check


def run_check(cfg: ExperimentConfig) -> dict:
    network = cfg.network()
    X, y = cfg.dataset()
    opts = cfg.check
    tol = opts["tolerances"]
    descriptors = cfg.select(symmetry.enumerate_groups(network, opts["include_nonhomogeneous"]))
    rng = np.random.default_rng(cfg.hyper.seed)
    size = min(opts["batch_size"], len(X))
    batches = [tuple(a[idx] for a in (X, y)) for idx in (rng.choice(len(X), size, replace=False) for _ in range(opts["batches"]))]
    worst = {k: 0.0 for k in ("gradient", "hessian", "theorem", "loss_gap", "noise")}
    per_kind: dict[str, dict[str, float]] = {}
    for b, batch in enumerate(batches):
        for s in symmetry.check_all(network, batch, descriptors, n_alpha=opts["n_alpha"], seed=b):
            kind = per_kind.setdefault(s.kind, {k: 0.0 for k in worst})
            for k in ("gradient", "hessian", "theorem", "loss_gap"):
                v = getattr(s, k)
                worst[k], kind[k] = max(worst[k], v), max(kind[k], v)
    grads = symmetry.batch_gradients(network, batches)
    for d in descriptors:
        v = symmetry.noise_lowrank_check(network, batches, d, grads=grads).max_residual
        worst["noise"] = max(worst["noise"], v)
        per_kind[d.kind.value]["noise"] = max(per_kind[d.kind.value]["noise"], v)
    failed = sorted(k for k, v in worst.items() if v > tol[k])
    return {
        "name": cfg.name,
        "n_descriptors": len(descriptors),
        "worst": worst,
        "per_kind": per_kind,
        "tolerances": tol,
        "failed": failed,
        "passed": not failed,
    }


def cmd_check(args) -> int:
    results = _map_configs(args, run_check)
    if results is None:
        return EXIT_USAGE
    ok = True
    for r in results:
        ok &= r["passed"]
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status} {r['name']}: {r['n_descriptors']} descriptors")
        for k, v in r["worst"].items():
            mark = "  <-- exceeds tolerance" if k in r["failed"] else ""
            print(f"  {k:9s} max residual {v:.3e} (tol {r['tolerances'][k]:.0e}){mark}")
        if args.out:
            out = _out_dir(args, r["name"], len(results))
            out.mkdir(parents=True, exist_ok=True)
            (out / "check.json").write_text(json.dumps(r, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if ok else EXIT_FAILED


# ----------------------------------------------------------------- train


def run_train(cfg: ExperimentConfig, out: Path, resume: str | None = None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    network = cfg.network()
    dataset = cfg.dataset()
    descriptors = cfg.select(symmetry.enumerate_groups(network))
    trainer = Trainer(network, dataset, cfg.hyper, descriptors, cfg.log_every, cfg.noise_batches)
    if resume:
        trainer.load_checkpoint(resume)
    meta = {"config": cfg.to_dict(), "environment": _environment(), "descriptors": [d.to_dict() for d in descriptors]}
    status = {"name": cfg.name, "out": str(out), "diverged_at": None}
    try:
        log = trainer.train(epochs=cfg.epochs, checkpoint_dir=out, checkpoint_every=cfg.checkpoint_every)
    except DivergenceError as exc:
        log = exc.log
        status["diverged_at"] = exc.step
        meta["diverged_at"] = exc.step
    log.save(out / "log.npz")
    (out / "run.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    status["steps"] = int(log.forcing.shape[0])
    return status


def cmd_train(args) -> int:
    if args.resume and len(args.config) != 1:
        _err("--resume needs exactly one --config")
        return EXIT_USAGE
    job = partial(_train_job, out=args.out, n_configs=len(args.config), resume=args.resume)
    results = _map_configs(args, job)
    if results is None:
        return EXIT_USAGE
    code = EXIT_OK
    for r in results:
        if r["diverged_at"] is not None:
            _err(f"{r['name']}: diverged at step {r['diverged_at']}; partial log written to {r['out']}")
            code = EXIT_DIVERGED
        else:
            print(f"{r['name']}: {r['steps']} steps -> {r['out']}")
    return code


# --------------------------------------------------------------- compare


def cmd_compare(args) -> int:
    run = Path(args.run)
    try:
        meta = json.loads((run / "run.json").read_text())
        log = TrajectoryLog.load(run / "log.npz")
    except FileNotFoundError as exc:
        _err(f"not a run directory: {exc.filename}")
        return EXIT_USAGE
    cfg = ExperimentConfig(meta["config"], run)
    try:
        report = compare(log, cfg.predictions, args.out or run, meta={"config": meta["config"]}, svg=args.svg)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    for method, kinds in report["residuals"].items():
        for kind, r in kinds.items():
            if r["n"]:
                print(f"{method:10s} {kind:11s} max rel error {r['max_rel_error']:.3e}  mean {r['mean_rel_error']:.3e}")
    return EXIT_OK


# ------------------------------------------------------------------ demo


def cmd_demo(args) -> int:
    summary = demos.write(args.kind, args.out or ".", svg=args.svg)
    print(json.dumps(summary, indent=1))
    return EXIT_OK


# --------------------------------------------------------------- helpers


def _load_configs(args) -> list[ExperimentConfig]:
    cfgs = [ExperimentConfig.load(p) for p in args.config]
    if getattr(args, "seed", None) is not None:
        cfgs = [c.with_seed(args.seed) for c in cfgs]
    return cfgs


def _out_dir(args, name: str, n_configs: int) -> Path:
    return _out_path(args.out, name, n_configs)


def _out_path(out: str | None, name: str, n_configs: int) -> Path:
    base = Path(out) if out else Path("runs")
    return base / name if (n_configs > 1 or not out) else base


def _train_job(cfg: ExperimentConfig, out: str | None, n_configs: int, resume: str | None) -> dict:
    return run_train(cfg, _out_path(out, cfg.name, n_configs), resume)


def _map_configs(args, job):
    try:
        cfgs = _load_configs(args)
        workers = max_workers(len(cfgs))
        if workers == 1:
            return [job(c) for c in cfgs]
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(job, cfgs))
    except (ConfigError, DataError, net.SpecError, ValueError) as exc:
        _err(str(exc))
        return None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nml", description="Symmetry checks, training logs and learning-dynamics predictions.")
    p.add_argument("--version", action="version", version=f"nml {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("census", help="count symmetry groups of an architecture spec")
    c.add_argument("spec", help="spec JSON path or a bundled name (vgg16, vgg16_bn)")
    c.add_argument("--out", help="also write census.json into this directory")
    c.set_defaults(fn=cmd_census)

    for name, fn, helptext in (
        ("check", cmd_check, "verify symmetry identities on random batches"),
        ("train", cmd_train, "train with logging, accumulators and checkpoints"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", action="append", required=True, help="experiment JSON (repeat to run several)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int, help="override the sampling and initialization seeds")
        s.set_defaults(fn=fn)
        if name == "train":
            s.add_argument("--resume", help="checkpoint file to continue from")

    m = sub.add_parser("compare", help="overlay predictions on a finished run")
    m.add_argument("run", help="run directory written by `nml train`")
    m.add_argument("--out", help="write outputs here instead of the run directory")
    m.add_argument("--svg", action="store_true", help="also write one SVG chart per descriptor")
    m.set_defaults(fn=cmd_compare)

    d = sub.add_parser("demo", help="discrete versus continuous toy comparisons")
    d.add_argument("kind", choices=("quadratic", "rotation", "oscillator"))
    d.add_argument("--out", help="output directory (default: current directory)")
    d.add_argument("--svg", action="store_true")
    d.set_defaults(fn=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
