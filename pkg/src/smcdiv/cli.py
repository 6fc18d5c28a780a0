"""Configuration-driven experiment runner.

Subcommands:

* ``estimate <config>`` — one divergence-bound estimate per (particle
  count, rejuvenation count) cell; writes CSV and prints a summary table.
* ``sweep <config>`` — the full Cartesian sweep; writes CSV and JSON
  lines, optionally per-sample log-ratio dumps and static figures.
* ``validate`` — runs the oracle self-check battery; nonzero exit on any
  failing check.  ``--negative-controls`` injects a deliberately broken
  kernel that must be caught.

Exit codes: 0 ok, 1 validation failure, 2 config error, 3 runtime
estimator error.  Identical config and seed give byte-identical output
files (record wall time only if you don't need that).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import math
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .core import estimate_kl_bound
from .errors import ConfigError, SmcDivError
from .models.datasets import load_observations
from .models.dpm import (
    DpmModel,
    dpm_as_seqobs,
    dpm_exact_posterior_sampler,
    dpm_gibbs_schedule,
)
from .models.grid import (
    GridModel,
    grid_as_config,
    grid_exact_posterior_sampler,
    grid_log_unnorm_posterior,
)
from .models.linreg import (
    LinRegModel,
    default_design,
    linreg_as_seqobs,
    linreg_exact_posterior_sampler,
    linreg_imh_schedule,
    linreg_rw_schedule,
)
from .results import ResultRow, write_csv, write_jsonl
from .rng import RngStream
from .seqobs import McmcReferenceSampler, build_seqobs_config
from .smc import as_sampler_package
from .validation import run_validation

_OUT_DIR_ENV = "SMCDIV_OUT_DIR"


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    seed: int
    n_particles: tuple[int, ...]
    rejuvenation: tuple[int, ...]
    n_reference: int
    n_forward: int
    reference: str
    burn_in: int
    thinning: int
    out_dir: str
    record_timing: bool
    dump_samples: bool
    figures: bool
    model_table: dict[str, Any]
    base_dir: Path


def _require(table: dict, key: str, kind, where: str):
    if key not in table:
        raise ConfigError(f"{where}: missing required key {key!r}")
    value = table[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ConfigError(
            f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, "
            f"got {type(value).__name__}"
        )
    return value


def _count_list(table: dict, key: str, where: str) -> tuple[int, ...]:
    values = _require(table, key, list, where)
    if not values or not all(isinstance(v, int) and v >= 1 for v in values):
        raise ConfigError(f"{where}.{key}: must be a non-empty list of counts >= 1")
    return tuple(values)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}")

    if "experiment" not in raw:
        raise ConfigError(f"{path}: missing [experiment] table")
    exp = raw["experiment"]
    where = "experiment"
    model = _require(exp, "model", str, where)
    if model not in ("linreg", "dpm", "grid"):
        raise ConfigError(f"{where}.model: unknown model {model!r}")
    reference = exp.get("reference", "exact")
    if reference not in ("exact", "approximate-mcmc"):
        raise ConfigError(
            f"{where}.reference: must be 'exact' or 'approximate-mcmc', got {reference!r}"
        )
    n_reference = _require(exp, "n_reference", int, where)
    n_forward = _require(exp, "n_forward", int, where)
    if n_reference < 1:
        raise ConfigError(f"{where}.n_reference: must be >= 1, got {n_reference}")
    if n_forward < 1:
        raise ConfigError(f"{where}.n_forward: must be >= 1, got {n_forward}")
    rejuv_values = exp.get("rejuvenation", [0])
    if (
        not isinstance(rejuv_values, list)
        or not rejuv_values
        or not all(isinstance(v, int) and v >= 0 for v in rejuv_values)
    ):
        raise ConfigError(
            f"{where}.rejuvenation: must be a non-empty list of counts >= 0"
        )
    rejuvenation = tuple(rejuv_values)
    model_table = raw.get("model", {}).get(model, {})
    if not model_table:
        raise ConfigError(f"{path}: missing [model.{model}] table")
    return ExperimentConfig(
        model=model,
        seed=exp.get("seed", 0),
        n_particles=_count_list(exp, "n_particles", where),
        rejuvenation=rejuvenation,
        n_reference=n_reference,
        n_forward=n_forward,
        reference=reference,
        burn_in=exp.get("burn_in", 100),
        thinning=exp.get("thinning", 10),
        out_dir=exp.get("out_dir", "results"),
        record_timing=exp.get("record_timing", True),
        dump_samples=exp.get("dump_samples", False),
        figures=exp.get("figures", False),
        model_table=model_table,
        base_dir=path.parent,
    )


def _load_model_observations(table: dict, base_dir: Path, where: str) -> tuple[float, ...]:
    if ("observations" in table) == ("dataset" in table):
        raise ConfigError(f"{where}: provide exactly one of 'observations' or 'dataset'")
    if "observations" in table:
        values = table["observations"]
        if not values or not all(isinstance(v, (int, float)) for v in values):
            raise ConfigError(f"{where}.observations: must be a non-empty list of reals")
        if any(not math.isfinite(float(v)) for v in values):
            raise ConfigError(f"{where}.observations: values must be finite")
        return tuple(float(v) for v in values)
    try:
        return load_observations(base_dir / table["dataset"])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{where}.dataset: {exc}")


class _CellBuilder:
    """Builds the per-cell package, reference sampler, and posterior."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        table = cfg.model_table
        where = f"model.{cfg.model}"
        if cfg.model == "linreg":
            obs = _load_model_observations(table, cfg.base_dir, where)
            prior_mean = tuple(table.get("prior_mean", (0.0, 0.0)))
            prior_cov = tuple(tuple(r) for r in table.get("prior_cov", ((1.0, 0.0), (0.0, 1.0))))
            design = table.get("design")
            if design is None:
                design = default_design(len(obs), dim=len(prior_mean))
            else:
                design = tuple(tuple(float(v) for v in row) for row in design)
            try:
                self.linreg = LinRegModel(
                    design=design,
                    observations=obs,
                    prior_mean=prior_mean,
                    prior_cov=prior_cov,
                    noise_var=float(table.get("noise_var", 1.0)),
                )
            except ValueError as exc:
                raise ConfigError(f"{where}: {exc}")
            self.seqobs = linreg_as_seqobs(self.linreg)
            kernel = table.get("kernel", "rw")
            if kernel == "rw":
                self.schedule_for = lambda reps: linreg_rw_schedule(
                    self.linreg, step_size=float(table.get("step_size", 0.5)),
                    repetitions=reps,
                )
            elif kernel == "imh":
                self.schedule_for = lambda reps: linreg_imh_schedule(
                    self.linreg, repetitions=reps
                )
            else:
                raise ConfigError(f"{where}.kernel: unknown kernel {kernel!r}")
            self.exact_reference = lambda: linreg_exact_posterior_sampler(self.linreg)
        elif cfg.model == "dpm":
            obs = _load_model_observations(table, cfg.base_dir, where)
            try:
                self.dpm = DpmModel(
                    alpha=float(table.get("alpha", 1.0)),
                    observations=obs,
                    prior_mean=float(table.get("prior_mean", 0.0)),
                    prior_var=float(table.get("prior_var", 1.0)),
                    obs_var=float(table.get("obs_var", 1.0)),
                )
            except (ValueError, SmcDivError) as exc:
                raise ConfigError(f"{where}: {exc}")
            self.seqobs = dpm_as_seqobs(self.dpm)
            self.schedule_for = lambda reps: dpm_gibbs_schedule(self.dpm, repetitions=reps)
            self.exact_reference = lambda: dpm_exact_posterior_sampler(self.dpm)
        else:
            try:
                self.grid = GridModel(
                    prior=tuple(table["prior"]),
                    transition=tuple(tuple(r) for r in table["transition"]),
                    likelihoods=tuple(tuple(r) for r in table["likelihoods"]),
                )
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"{where}: {exc!r}")
            self.smoothing = float(table.get("output_smoothing", 0.0))
            if set(cfg.rejuvenation) != {0}:
                raise ConfigError(
                    f"{where}: grid models have no rejuvenation kernels; "
                    "use rejuvenation = [0]"
                )

    def posterior(self) -> Callable[[Any], float]:
        if self.cfg.model == "grid":
            return grid_log_unnorm_posterior(self.grid)
        som = self.seqobs
        return lambda z: som.log_joint(z[0], z[1])

    def package(self, n_particles: int, rejuvenation: int):
        if self.cfg.model == "grid":
            return as_sampler_package(
                grid_as_config(self.grid, n_particles, self.smoothing)
            )
        smc_cfg = build_seqobs_config(
            self.seqobs, self.schedule_for(rejuvenation), n_particles
        )
        return as_sampler_package(smc_cfg)

    def reference(self):
        if self.cfg.reference == "exact":
            if self.cfg.model == "grid":
                return grid_exact_posterior_sampler(self.grid)
            return self.exact_reference()
        if self.cfg.model == "grid":
            raise ConfigError("grid models only support the exact reference")
        base = self.schedule_for(1)
        kernels = base.cycles[self.seqobs.n_observations - 1]
        if not kernels:
            raise ConfigError("approximate-mcmc reference needs rejuvenation kernels")
        return McmcReferenceSampler(
            self.seqobs, kernels, burn_in=self.cfg.burn_in, thinning=self.cfg.thinning
        )


def run_cells(cfg: ExperimentConfig, threads: int = 1):
    """Run every (n_particles, rejuvenation) cell; deterministic given seed."""
    builder = _CellBuilder(cfg)
    log_posterior = builder.posterior()
    reference_mode = "exact" if cfg.reference == "exact" else "approximate"
    cells = [
        (index, n, r)
        for index, (n, r) in enumerate(
            (n, r) for n in cfg.n_particles for r in cfg.rejuvenation
        )
    ]

    def run_cell(cell):
        index, n, r = cell
        started = time.perf_counter()
        pkg = builder.package(n, r)
        est = estimate_kl_bound(
            pkg,
            builder.reference(),
            log_posterior,
            cfg.n_reference,
            cfg.n_forward,
            RngStream(cfg.seed).split(index),
            reference_mode=reference_mode,
        )
        elapsed = time.perf_counter() - started if cfg.record_timing else 0.0
        row = ResultRow(
            model=cfg.model,
            n_particles=n,
            rejuvenation=r,
            elbo=est.elbo,
            elbo_stderr=est.elbo_stderr,
            eubo=est.eubo,
            eubo_stderr=est.eubo_stderr,
            kl_bound=est.kl_bound,
            wall_time_s=elapsed,
            seed=cfg.seed,
            reference_mode=reference_mode,
        )
        return index, row, est

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run_cell, cells))
    else:
        outputs = [run_cell(cell) for cell in cells]
    outputs.sort(key=lambda item: item[0])
    rows = [row for _, row, _ in outputs]
    estimates = [est for _, _, est in outputs]
    return rows, estimates


def _resolve_out_dir(cfg: ExperimentConfig, flag_value: str | None) -> Path:
    if flag_value:
        return Path(flag_value)
    env = os.environ.get(_OUT_DIR_ENV)
    if env:
        return Path(env)
    return cfg.base_dir / cfg.out_dir


def _print_rows(rows) -> None:
    header = f"{'model':>8} {'N':>4} {'rejuv':>5} {'elbo':>10} {'eubo':>10} {'kl_bound':>10}"
    print(header)
    for r in rows:
        print(
            f"{r.model:>8} {r.n_particles:>4} {r.rejuvenation:>5} "
            f"{r.elbo:>10.4f} {r.eubo:>10.4f} {r.kl_bound:>10.4f}"
        )


def _cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    rows, _ = run_cells(cfg, threads=args.threads)
    out_dir = _resolve_out_dir(cfg, args.out)
    path = write_csv(rows, out_dir / "results.csv")
    _print_rows(rows)
    print(f"wrote {path}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    rows, estimates = run_cells(cfg, threads=args.threads)
    out_dir = _resolve_out_dir(cfg, args.out)
    csv_path = write_csv(rows, out_dir / "results.csv")
    per_sample = None
    if cfg.dump_samples:
        per_sample = {
            i: {
                "reference_log_ratios": list(est.reference_log_ratios),
                "forward_log_ratios": list(est.forward_log_ratios),
            }
            for i, est in enumerate(estimates)
        }
    jsonl_path = write_jsonl(rows, out_dir / "results.jsonl", per_sample)
    written = [csv_path, jsonl_path]
    if cfg.figures or args.figures:
        from .report import render_sweep_figures

        written.extend(render_sweep_figures(rows, out_dir))
    _print_rows(rows)
    for path in written:
        print(f"wrote {path}")
    return 0


def _cmd_validate(args) -> int:
    results = run_validation(
        seed=args.seed if args.seed is not None else 20260810,
        negative_controls=args.negative_controls,
        scale=args.scale,
    )
    failures = 0
    for result in results:
        print(result.line())
        if not result.passed:
            failures += 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="smcdiv",
        description="Divergence bounds for sequential Monte Carlo samplers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", type=str, default=None, help="output directory")
    common.add_argument("--threads", type=int, default=1, help="concurrent sweep cells")

    p_est = sub.add_parser("estimate", parents=[common], help="run bound estimates")
    p_est.add_argument("config", type=str)
    p_est.set_defaults(func=_cmd_estimate)

    p_sweep = sub.add_parser("sweep", parents=[common], help="run a full sweep")
    p_sweep.add_argument("config", type=str)
    p_sweep.add_argument(
        "--figures", action="store_true", help="render figures regardless of config"
    )
    p_sweep.set_defaults(func=_cmd_sweep)

    p_val = sub.add_parser("validate", help="run the self-check battery")
    p_val.add_argument("--negative-controls", action="store_true")
    p_val.add_argument("--seed", type=int, default=None)
    p_val.add_argument(
        "--scale", type=float, default=1.0, help="Monte Carlo sample-count multiplier"
    )
    p_val.set_defaults(func=_cmd_validate)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SmcDivError as exc:
        print(f"estimator error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
