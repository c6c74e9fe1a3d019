#!/usr/bin/env python3
"""
Run one sampler comparison experiment on a zoo model.

Usage:
    python run_experiment.py run --model eight_schools --mode hmc-m --explain
    python run_experiment.py run --model repeated_binary_trials --data data/baseball1970.csv --mode hmc
    python run_experiment.py dump --model eight_schools --mode hmc-m

Modes: hmc (original model), hmc-m (marginalise conjugate latents, sample,
recover), hmc-r (non-centred reparameterisation of hierarchical Normals).
"""

import argparse
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

import settings
import zoo
from data_load import load_dataset
from diagnostics import summarize
from errors import AutomargError, ConfigError, DatasetSchemaError, TransformError
from grad import build_logdensity
from sampler import NutsConfig, run_nuts
from transform import marginalize, recover, reparam_hierarchical
from utils import recommend, summarize_draws

logger = logging.getLogger(__name__)

MODES = ("hmc", "hmc-m", "hmc-r")
REPORT_SCHEMA = 1


@dataclass(frozen=True)
class RunConfig:
    model: str
    data: Path = None
    mode: str = "hmc-m"
    # None means the registry default exemption for the model
    exempt: tuple = None
    nuts: NutsConfig = field(default_factory=NutsConfig)
    out: Path = None
    draws_csv: Path = None
    explain: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.model not in zoo.REGISTRY:
            raise ConfigError(f"unknown model {self.model!r}; choose from {sorted(zoo.REGISTRY)}")

    @property
    def exemptions(self):
        if self.exempt is None:
            return zoo.REGISTRY[self.model].default_exempt
        return tuple(self.exempt)


@dataclass
class ExperimentReport:
    model: str
    dataset: str
    mode: str
    seed: int
    original_dim: int
    reduced_dim: int
    exempt: list
    transformation_log: list
    marginalized: list
    tape_size: int
    ess: dict
    min_ess: float
    min_ess_per_s: float
    wall_time_s: float
    transform_time_s: float
    divergences: int
    sampler: dict
    schema: int = REPORT_SCHEMA

    def to_json(self):
        """Strict JSON: non-finite numbers (e.g. ESS/s of a zero-time run) become null."""
        return json.dumps(_json_safe(asdict(self)), sort_keys=True, indent=2, allow_nan=False)


def _json_safe(value):
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


# ---------------------------------------------------------
# ✅ 1. Dataset
# ---------------------------------------------------------
def resolve_dataset(entry, path=None):
    """(columns, label) for an explicit file, the bundled file, or its synthetic stand-in."""
    if path is not None:
        path = Path(path)
        if not path.exists() and (settings.DATA_DIR / path).exists():
            path = settings.DATA_DIR / path
        return load_dataset(path, entry.schema), path.name
    default = settings.DATA_DIR / entry.dataset
    if default.exists():
        return load_dataset(default, entry.schema), default.name
    stem = Path(entry.dataset).stem
    if stem in zoo.SYNTHETIC:
        print(f"⚠️ {default} not found; using synthetic {stem} (seed 0)")
        return zoo.synthetic_dataset(stem, seed=0), f"synthetic:{stem}"
    raise DatasetSchemaError(f"dataset not found: {default}")


# ---------------------------------------------------------
# ✅ 2. Transformation per mode
# ---------------------------------------------------------
def prepare(model, mode, exempt=()):
    """(model to sample, recovery stack or None) for ``mode``."""
    if mode == "hmc-m":
        return marginalize(model, exempt)
    if mode == "hmc-r":
        try:
            return reparam_hierarchical(model), None
        except TransformError as exc:
            raise ConfigError(f"hmc-r is not available for this model: {exc}") from exc
    return model, None


# ---------------------------------------------------------
# ✅ 3. Run
# ---------------------------------------------------------
def run(config):
    entry = zoo.get(config.model)
    columns, dataset = resolve_dataset(entry, config.data)
    model = entry.build(columns)
    original = [model.name_of(v) for v in model.latent_ids()]

    started = time.perf_counter()
    target, stack = prepare(model, config.mode, config.exemptions)
    fn = build_logdensity(target)
    transform_time = time.perf_counter() - started

    started = time.perf_counter()
    trace = run_nuts(fn, config.nuts)
    chains, n, dim = trace.draws.shape
    assignment = target.complete(fn.to_assignment(trace.draws.reshape(chains * n, dim)))
    extra = {}
    if stack is not None and len(stack):
        rng = np.random.default_rng(np.random.SeedSequence([config.nuts.seed, 1]))
        full = recover(stack, assignment, rng)
        for entry_ in stack:
            extra[entry_.name] = np.reshape(full[entry_.node_id], (chains, n))
    for name, values in target.evaluate_deterministic(assignment).items():
        extra[name] = np.reshape(values, (chains, n))
    trace = trace.with_variables(extra)
    wall_time = time.perf_counter() - started

    ess = summarize(trace, wall_time, names=original)
    events = target.history[len(model.history):]
    report = ExperimentReport(
        model=config.model,
        dataset=dataset,
        mode=config.mode,
        seed=config.nuts.seed,
        original_dim=len(original),
        reduced_dim=fn.dim,
        exempt=list(config.exemptions),
        transformation_log=[list(e.as_tuple()) for e in events],
        marginalized=stack.names if stack is not None else [],
        tape_size=fn.tape_size,
        ess=ess.per_variable,
        min_ess=ess.min_ess,
        min_ess_per_s=ess.min_ess_per_s,
        wall_time_s=wall_time,
        transform_time_s=transform_time,
        divergences=trace.divergences,
        sampler=config.nuts.as_dict(),
    )
    return report, trace


def write_outputs(config, report, trace):
    out = config.out or settings.OUT_DIR / f"{config.model}_{config.mode}_seed{config.nuts.seed}.json"
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n")
    names = list(report.ess)
    summary = summarize_draws(trace.as_frame(), names, report.ess)
    summary.to_csv(out.with_name(out.stem + "_summary.csv"), index_label="variable")
    if config.draws_csv:
        draws_csv = Path(config.draws_csv)
        draws_csv.parent.mkdir(parents=True, exist_ok=True)
        trace.as_frame().to_csv(draws_csv, index=False)
    return out, summary


# ---------------------------------------------------------
# ✅ CLI
# ---------------------------------------------------------
def _exempt_arg(text):
    return tuple(part.strip() for part in text.split(",") if part.strip())


def build_parser():
    parser = argparse.ArgumentParser(description="Automatic marginalisation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", required=True, choices=sorted(zoo.REGISTRY))
        p.add_argument("--data", type=Path, default=None)
        p.add_argument("--mode", choices=MODES, default="hmc-m")
        p.add_argument("--exempt", type=_exempt_arg, default=None, help="comma-separated node-name globs")
        p.add_argument("--verbose", "-v", action="store_true")

    run_p = sub.add_parser("run", help="sample a model and write a JSON report")
    common(run_p)
    run_p.add_argument("--warmup", type=int, default=2000)
    run_p.add_argument("--samples", type=int, default=10000)
    run_p.add_argument("--chains", type=int, default=1)
    run_p.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    run_p.add_argument("--target-accept", type=float, default=0.8)
    run_p.add_argument("--max-tree-depth", type=int, default=10)
    run_p.add_argument("--out", type=Path, default=None)
    run_p.add_argument("--draws-csv", type=Path, default=None)
    run_p.add_argument("--explain", action="store_true", help="print every edge reversal")
    run_p.add_argument("--no-progress", action="store_true")

    dump_p = sub.add_parser("dump", help="print the model (after the mode's transformation)")
    common(dump_p)
    dump_p.add_argument("--graph", action="store_true", help="also list the expression graph")
    return parser


def _configure_logging(verbose):
    level = logging.INFO if verbose else getattr(logging, settings.LOG_LEVEL, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def cmd_run(args):
    nuts = NutsConfig(
        warmup_draws=args.warmup,
        posterior_draws=args.samples,
        max_tree_depth=args.max_tree_depth,
        target_accept=args.target_accept,
        seed=args.seed,
        chains=args.chains,
        progress=settings.SHOW_PROGRESS and not args.no_progress,
    )
    config = RunConfig(
        model=args.model,
        data=args.data,
        mode=args.mode,
        exempt=args.exempt,
        nuts=nuts,
        out=args.out,
        draws_csv=args.draws_csv,
        explain=args.explain,
    )
    report, trace = run(config)
    if config.explain:
        for v, c, pattern in report.transformation_log:
            print(f"reverse {v} -> {c}  ({pattern})")
    out, summary = write_outputs(config, report, trace)
    print(summary.round(3).to_string())
    print(f"✅ {report.mode}: {report.reduced_dim} sampled dimensions, min ESS {report.min_ess:.1f}, "
          f"{report.min_ess_per_s:.1f} ESS/s")
    print(recommend(report))
    print(f"✅ Report → {out}")


def cmd_dump(args):
    entry = zoo.get(args.model)
    columns, _ = resolve_dataset(entry, args.data)
    model = entry.build(columns)
    exempt = entry.default_exempt if args.exempt is None else args.exempt
    target, stack = prepare(model, args.mode, exempt)
    print(target.dump())
    if stack is not None:
        print(f"\nmarginalised (recovered last to first): {', '.join(stack.names) or '-'}")
    if target.deterministic:
        names = target.names()
        for name, ref in target.deterministic.items():
            print(f"{name} := {target.graph.format(ref, names)}")
    if args.graph:
        roots = [p for v in target.live_ids() for p in target.nodes[v].params]
        print()
        print(target.graph.dump(roots, target.names()))


def main(argv=None):
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    try:
        if args.command == "run":
            cmd_run(args)
        else:
            cmd_dump(args)
    except AutomargError as exc:
        raise SystemExit(f"❌ {exc}") from exc


if __name__ == "__main__":
    main()
