"""Benchmark harness: methods x model sizes x paired trials.

One run fits a GP per dataset size (all subsampled from one master
dataset), then plays every method through the same sequence of goal draws
(paired design: trial ``t`` uses the same ``x_ref`` for every method and
size).  Per-trial RNG streams derive deterministically from the master
seed, a fixed per-method stream id and the trial index, so results are
reproducible byte-for-byte and adding a method never perturbs the others.

The three benchmarked methods differ only in how they use the model's
deviation estimate:

* ``MCTS`` — ignores it.
* ``MCTS-inflated`` — plans against a conservatively shifted prediction
  (``prediction + w * mde``); the std-scale estimate is used so the shift
  is in level units.
* ``UA-MCTS-1`` — biases selection and expansion toward low-uncertainty
  transitions (variance-scale estimate).

``UA-MCTS-0`` is reserved in the registry but not implemented (it is
defined in an external reference); selecting it raises.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .gp import GpModel, HyperSearchSpace, fit_hyperparams, gp_fit, gp_predict_batch
from .mcts import SearchConfig, Variant
from .pouring import (
    ActionGrid,
    EpisodeConfig,
    EpisodeError,
    EpisodeTrace,
    GoalSpec,
    GpPredictor,
    GroundTruth,
    InflatedPredictor,
    Predictor,
    gen_dataset,
    run_episode,
    subsample,
)
from .seeding import STREAM_DATASET, STREAM_EPISODE, STREAM_XREF, substream, substream_seed

__all__ = [
    "MethodSpec",
    "METHOD_REGISTRY",
    "resolve_method",
    "build_predictor",
    "BenchConfig",
    "CellResult",
    "BenchReport",
    "run_bench",
    "variance_scatter",
    "summarize",
    "report_to_dict",
    "save_report_json",
    "save_summary_csv",
    "load_summary_csv",
    "save_scatter_csv",
    "write_bench_outputs",
]


@dataclass(frozen=True)
class MethodSpec:
    """Maps a benchmark method name onto a search variant and predictor.

    ``stream_id`` is a fixed per-method RNG label; it never changes even if
    the set of benchmarked methods does.
    """

    name: str
    variant: Variant
    mde_kind: str
    inflated: bool = False
    stream_id: int = 0


METHOD_REGISTRY: dict[str, MethodSpec | None] = {
    "MCTS": MethodSpec("MCTS", Variant.STANDARD, "std", stream_id=0),
    # Reserved: the uncertainty-aware variant whose internals are defined in
    # an external reference; plug a MethodSpec in here to enable it.
    "UA-MCTS-0": None,
    "MCTS-inflated": MethodSpec(
        "MCTS-inflated", Variant.INFLATED, "std", inflated=True, stream_id=2
    ),
    "UA-MCTS-1": MethodSpec(
        "UA-MCTS-1", Variant.UNCERTAINTY_AWARE, "variance", stream_id=3
    ),
}

DEFAULT_METHODS = ("MCTS", "MCTS-inflated", "UA-MCTS-1")


def resolve_method(name: str) -> MethodSpec:
    """Look up a method by name; raises with the available list if unknown."""
    if name not in METHOD_REGISTRY:
        known = ", ".join(sorted(METHOD_REGISTRY))
        raise ValueError(f"unknown method {name!r}; available: {known}")
    spec = METHOD_REGISTRY[name]
    if spec is None:
        raise NotImplementedError(
            f"{name} is not implemented here (defined in an external reference); "
            "register a MethodSpec to enable it"
        )
    return spec


def build_predictor(spec: MethodSpec, model: GpModel, inflation_w: float) -> Predictor:
    base = GpPredictor(model, spec.mde_kind)
    if spec.inflated:
        return InflatedPredictor(base, inflation_w)
    return base


@dataclass(frozen=True)
class BenchConfig:
    """Full benchmark configuration; everything derives from ``master_seed``."""

    master_seed: int = 7
    trials: int = 100
    dataset_sizes: tuple[int, ...] = (40, 20, 10, 5)
    methods: tuple[str, ...] = DEFAULT_METHODS
    # synthetic system
    kappa: float = 25.0
    alpha0: float = 0.5
    obs_noise_sd: float = 1.0
    # goals and episode limits
    x_ref_low: float = 20.0
    x_ref_high: float = 90.0
    goal_tol: float = 2.5
    n_max: int = 16
    initial_level: float = 0.0
    # search knobs (shared by all methods; the variant comes from MethodSpec)
    iterations: int = 400
    c_uct: float = 0.7
    tau: float = 0.1
    steepness: float = 10.0
    inflation_w: float = 2.0
    # model fitting
    fit_hyper: bool = True
    noise_floor: float = 1.0
    # mde-kind override for ablations (None keeps each method's own kind)
    mde_kind: str | None = None
    # scatter export
    scatter_resolution: int = 40
    scatter_level: float = 0.0

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.dataset_sizes:
            raise ValueError("dataset_sizes must be non-empty")
        if max(self.dataset_sizes) < 1:
            raise ValueError("dataset sizes must be positive")
        object.__setattr__(self, "dataset_sizes", tuple(int(s) for s in self.dataset_sizes))
        object.__setattr__(self, "methods", tuple(self.methods))

    def ground_truth(self) -> GroundTruth:
        return GroundTruth(
            kappa=self.kappa, alpha0=self.alpha0, obs_noise_sd=self.obs_noise_sd
        )

    def search_config(self, spec: MethodSpec) -> SearchConfig:
        return SearchConfig(
            variant=spec.variant,
            c_uct=self.c_uct,
            tau=self.tau,
            steepness=self.steepness,
            inflation_w=self.inflation_w,
            iteration_budget=self.iterations,
        )

    def hyper_space(self) -> HyperSearchSpace:
        base = HyperSearchSpace()
        lo, hi, n = base.noise_var
        return replace(base, noise_var=(max(lo, self.noise_floor), hi, n))


@dataclass
class TrialRecord:
    """One episode inside a benchmark cell."""

    trial: int
    x_ref: float
    success: bool
    n_actions: int
    stop_reason: str
    final_true_level: float
    trace: EpisodeTrace | None
    error: str | None = None


@dataclass
class CellResult:
    """Aggregate over the trials of one (dataset size, method) cell."""

    dataset_size: int
    method: str
    trials: int
    successes: int
    success_rate: float
    n_actions_mean: float
    n_actions_sd: float
    records: list[TrialRecord]


@dataclass
class BenchReport:
    config: BenchConfig
    cells: list[CellResult]
    models: dict[int, GpModel] = field(repr=False, default_factory=dict)
    kernel_params: dict[int, dict] = field(default_factory=dict)

    def cell(self, dataset_size: int, method: str) -> CellResult:
        for c in self.cells:
            if c.dataset_size == dataset_size and c.method == method:
                return c
        raise KeyError(f"no cell ({dataset_size}, {method}) in report")


def fit_bench_models(config: BenchConfig) -> dict[int, GpModel]:
    """Generate the master dataset and fit one model per requested size.

    Sizes smaller than the largest are random sub-datasets of the master
    dataset, mirroring how a physical data collection would be thinned.
    """
    gt = config.ground_truth()
    base_size = max(config.dataset_sizes)
    master = gen_dataset(gt, base_size, substream(config.master_seed, STREAM_DATASET))
    space = config.hyper_space()
    models: dict[int, GpModel] = {}
    for size in config.dataset_sizes:
        if size == base_size:
            data = master
        else:
            data = subsample(
                master, size, substream(config.master_seed, STREAM_DATASET, size)
            )
        params = fit_hyperparams(data, space) if config.fit_hyper else None
        models[size] = gp_fit(data, params)
    return models


def run_bench(config: BenchConfig | None = None) -> BenchReport:
    """Run the full grid; episode errors become failed trials, not aborts."""
    config = config if config is not None else BenchConfig()
    specs = [resolve_method(name) for name in config.methods]
    gt = config.ground_truth()
    models = fit_bench_models(config)
    # One goal sequence, shared by every method and size (paired design).
    x_refs = substream(config.master_seed, STREAM_XREF).uniform(
        config.x_ref_low, config.x_ref_high, config.trials
    )

    cells: list[CellResult] = []
    for size in config.dataset_sizes:
        for spec in specs:
            if config.mde_kind is not None:
                spec = replace(spec, mde_kind=config.mde_kind)
            predictor = build_predictor(spec, models[size], config.inflation_w)
            search_cfg = config.search_config(spec)
            records: list[TrialRecord] = []
            for t in range(config.trials):
                goal = GoalSpec(float(x_refs[t]), config.goal_tol)
                ep_cfg = EpisodeConfig(
                    search=search_cfg,
                    n_max=config.n_max,
                    initial_level=config.initial_level,
                    seed=substream_seed(
                        config.master_seed, STREAM_EPISODE, size, spec.stream_id, t
                    ),
                )
                try:
                    trace = run_episode(gt, predictor, goal, ep_cfg)
                    records.append(
                        TrialRecord(
                            trial=t,
                            x_ref=goal.x_ref,
                            success=trace.success,
                            n_actions=trace.n_actions,
                            stop_reason=trace.stop_reason,
                            final_true_level=trace.final_true_level,
                            trace=trace,
                        )
                    )
                except EpisodeError as exc:
                    records.append(
                        TrialRecord(
                            trial=t,
                            x_ref=goal.x_ref,
                            success=False,
                            n_actions=exc.trace.n_actions,
                            stop_reason="error",
                            final_true_level=exc.trace.final_true_level,
                            trace=exc.trace,
                            error=str(exc),
                        )
                    )
            n_actions = np.array([r.n_actions for r in records], dtype=float)
            successes = sum(r.success for r in records)
            cells.append(
                CellResult(
                    dataset_size=size,
                    method=spec.name,
                    trials=config.trials,
                    successes=successes,
                    success_rate=100.0 * successes / config.trials,
                    n_actions_mean=float(n_actions.mean()),
                    n_actions_sd=float(n_actions.std()),
                    records=records,
                )
            )
    kernel_params = {
        size: {
            "dot_sigma0_sq": m.params.dot_sigma0_sq,
            "rq_scale": m.params.rq_scale,
            "rq_alpha": m.params.rq_alpha,
            "noise_var": m.params.noise_var,
        }
        for size, m in models.items()
    }
    return BenchReport(
        config=config, cells=cells, models=models, kernel_params=kernel_params
    )


# ---------------------------------------------------------------------------
# Variance scatter (action-space uncertainty map plus executed actions)
# ---------------------------------------------------------------------------


def variance_scatter(
    model: GpModel,
    traces: Sequence[EpisodeTrace],
    grid_resolution: int = 40,
    grid_level: float = 0.0,
    grid: ActionGrid | None = None,
) -> list[tuple[float, float, float, str]]:
    """Rows of (alpha, duration, gp_std, kind) for external plotting.

    The background grid samples the GP's predictive std densely over the
    action space at a fixed reference level; each executed action is
    evaluated at the level that was observed when it was taken.
    """
    grid = grid if grid is not None else ActionGrid()
    alphas = np.linspace(grid.alpha_min, grid.alpha_max, grid_resolution)
    durations = np.linspace(grid.duration_min, grid.duration_max, grid_resolution)
    aa, dd = np.meshgrid(alphas, durations, indexing="ij")
    feats = np.column_stack(
        [np.full(aa.size, grid_level), aa.reshape(-1), dd.reshape(-1)]
    )
    pred = gp_predict_batch(model, feats)
    rows = [
        (float(a), float(d), float(np.sqrt(v)), "grid")
        for a, d, v in zip(feats[:, 1], feats[:, 2], pred.variance)
    ]
    steps = [step for trace in traces for step in trace.steps]
    if steps:
        feats = np.array(
            [[s.observed, s.action.alpha, s.action.duration] for s in steps]
        )
        pred = gp_predict_batch(model, feats)
        rows.extend(
            (float(s.action.alpha), float(s.action.duration), float(np.sqrt(v)), "action")
            for s, v in zip(steps, pred.variance)
        )
    return rows


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def summarize(report: BenchReport) -> str:
    """Aligned text tables, one block per dataset size."""
    lines = []
    width = max(len(c.method) for c in report.cells) + 2
    for size in report.config.dataset_sizes:
        lines.append(f"=== {size}-point model ===")
        lines.append(f"{'method':<{width}} {'success rate [%]':>18} {'n. of actions':>16}")
        for method in report.config.methods:
            c = report.cell(size, method)
            acts = f"{c.n_actions_mean:.2f}({c.n_actions_sd:.2f})"
            lines.append(f"{c.method:<{width}} {c.success_rate:>18.1f} {acts:>16}")
        lines.append("")
    return "\n".join(lines)


def _trace_dict(record: TrialRecord) -> dict:
    out = {
        "trial": record.trial,
        "x_ref": record.x_ref,
        "success": record.success,
        "n_actions": record.n_actions,
        "stop_reason": record.stop_reason,
        "final_true_level": record.final_true_level,
    }
    if record.error is not None:
        out["error"] = record.error
    if record.trace is not None:
        out["steps"] = [
            {
                "k": s.k,
                "observed": s.observed,
                "action": {"alpha": s.action.alpha, "d": s.action.duration},
                "predicted": s.predicted,
                "mde": s.mde,
                "true_level": s.true_level,
            }
            for s in record.trace.steps
        ]
    return out


def report_to_dict(report: BenchReport) -> dict:
    return {
        "config": asdict(report.config),
        "kernel_params": {str(k): v for k, v in report.kernel_params.items()},
        "cells": [
            {
                "dataset_size": c.dataset_size,
                "method": c.method,
                "trials": c.trials,
                "successes": c.successes,
                "success_rate": c.success_rate,
                "n_actions_mean": c.n_actions_mean,
                "n_actions_sd": c.n_actions_sd,
                "trial_records": [_trace_dict(r) for r in c.records],
            }
            for c in report.cells
        ],
    }


def save_report_json(report: BenchReport, path) -> None:
    Path(path).write_text(
        json.dumps(report_to_dict(report), indent=1), encoding="utf-8"
    )


SUMMARY_HEADER = (
    "dataset_size",
    "method",
    "success_rate",
    "n_actions_mean",
    "n_actions_sd",
    "trials",
)


def save_summary_csv(report: BenchReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for c in report.cells:
            writer.writerow(
                [
                    c.dataset_size,
                    c.method,
                    repr(c.success_rate),
                    repr(c.n_actions_mean),
                    repr(c.n_actions_sd),
                    c.trials,
                ]
            )


def load_summary_csv(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                {
                    "dataset_size": int(rec["dataset_size"]),
                    "method": rec["method"],
                    "success_rate": float(rec["success_rate"]),
                    "n_actions_mean": float(rec["n_actions_mean"]),
                    "n_actions_sd": float(rec["n_actions_sd"]),
                    "trials": int(rec["trials"]),
                }
            )
    return rows


def save_scatter_csv(rows: Sequence[tuple[float, float, float, str]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "duration", "gp_std", "kind"])
        for alpha, duration, gp_std, kind in rows:
            writer.writerow([repr(alpha), repr(duration), repr(gp_std), kind])


def write_bench_outputs(report: BenchReport, out_dir) -> dict[str, Path]:
    """Write report JSON, summary CSV and one scatter CSV per cell."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    paths["report"] = out_dir / "report.json"
    save_report_json(report, paths["report"])
    paths["summary"] = out_dir / "summary.csv"
    save_summary_csv(report, paths["summary"])
    for c in report.cells:
        traces = [r.trace for r in c.records if r.trace is not None]
        rows = variance_scatter(
            report.models[c.dataset_size],
            traces,
            grid_resolution=report.config.scatter_resolution,
            grid_level=report.config.scatter_level,
        )
        name = f"scatter_{c.dataset_size}pt_{c.method}.csv"
        save_scatter_csv(rows, out_dir / name)
        paths[name] = out_dir / name
    return paths
