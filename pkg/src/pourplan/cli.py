"""Command-line surface: dataset generation, fitting, planning, benchmarks.

Every subcommand takes an optional ``--config`` JSON file; explicit flags
override file values, and the effective configuration is echoed into the
output directory so any run can be reproduced from its artifacts alone.

Exit codes: 0 on success, 1 when the experiment itself fails (failed
episode, benchmark with trial errors), 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import gp as gp_mod
from . import pouring
from .mcts import SearchConfig
from .seeding import substream, substream_seed

EXIT_OK = 0
EXIT_EXPERIMENT_FAILED = 1
EXIT_USAGE = 2


class CliError(Exception):
    """Usage/configuration problem; maps to exit code 2."""


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError(f"config file {path} must contain a JSON object")
    return cfg


def _merge_config(defaults: dict, file_cfg: dict, flag_cfg: dict) -> dict:
    """defaults < file values < explicitly passed flags."""
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise CliError(
            f"unknown config keys: {', '.join(sorted(unknown))}; "
            f"known: {', '.join(sorted(defaults))}"
        )
    merged = dict(defaults)
    merged.update(file_cfg)
    merged.update({k: v for k, v in flag_cfg.items() if v is not None})
    return merged


def _echo_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(cfg, indent=2, sort_keys=True), encoding="utf-8"
    )


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

GEN_DATA_DEFAULTS = {
    "n": 40,
    "seed": 0,
    "kappa": 25.0,
    "alpha0": 0.5,
    "obs_noise_sd": 1.0,
}


def cmd_gen_data(args) -> int:
    cfg = _merge_config(
        GEN_DATA_DEFAULTS,
        _load_config_file(args.config),
        {
            "n": args.n,
            "seed": args.seed,
            "kappa": args.kappa,
            "alpha0": args.alpha0,
            "obs_noise_sd": args.obs_noise_sd,
        },
    )
    if cfg["n"] < 1:
        raise CliError("--n must be at least 1")
    gt = pouring.GroundTruth(cfg["kappa"], cfg["alpha0"], cfg["obs_noise_sd"])
    data = pouring.gen_dataset(gt, cfg["n"], substream(cfg["seed"], 0))
    out_dir = Path(args.out)
    _echo_config(cfg, out_dir)
    path = out_dir / "dataset.csv"
    gp_mod.save_dataset_csv(data, path)
    print(f"wrote {path} ({len(data)} transitions)")
    print(
        f"levels [{data.features[:,0].min():.2f}, {data.features[:,0].max():.2f}]  "
        f"targets [{data.targets.min():.2f}, {data.targets.max():.2f}]  "
        f"target mean {data.targets.mean():.2f}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

FIT_DEFAULTS = {
    "fit_hyper": True,
    "noise_floor": 1.0,
}


def cmd_fit(args) -> int:
    cfg = _merge_config(
        FIT_DEFAULTS,
        _load_config_file(args.config),
        {"fit_hyper": args.fit_hyper, "noise_floor": args.noise_floor},
    )
    try:
        data = gp_mod.load_dataset_csv(args.data)
    except FileNotFoundError:
        raise CliError(f"dataset file not found: {args.data}") from None
    except gp_mod.DatasetFormatError as exc:
        raise CliError(str(exc)) from None
    params = None
    if cfg["fit_hyper"] and len(data) >= 2:
        space = bench_mod.BenchConfig(noise_floor=cfg["noise_floor"]).hyper_space()
        params = gp_mod.fit_hyperparams(data, space)
    model = gp_mod.gp_fit(data, params)
    out_dir = Path(args.out)
    _echo_config(cfg, out_dir)
    path = out_dir / "model.json"
    gp_mod.save_model_json(model, path)
    pred = gp_mod.gp_predict_batch(model, data.features)
    train_mse = float(np.mean((pred.raw_mean - data.targets) ** 2))
    print(f"wrote {path}")
    print(f"kernel params: {model.params}")
    print(f"train MSE: {train_mse:.4f}  (H={len(data)})")
    if args.test_data is not None:
        try:
            test = gp_mod.load_dataset_csv(args.test_data)
        except gp_mod.DatasetFormatError as exc:
            raise CliError(str(exc)) from None
        tp = gp_mod.gp_predict_batch(model, test.features)
        test_mse = float(np.mean((tp.mean - test.targets) ** 2))
        print(f"held-out MSE: {test_mse:.4f}  (n={len(test)})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# plan
# ---------------------------------------------------------------------------

PLAN_DEFAULTS = {
    "x_ref": 50.0,
    "goal_tol": 2.5,
    "method": "UA-MCTS-1",
    "seed": 0,
    "n_max": 16,
    "initial_level": 0.0,
    "iterations": 400,
    "c_uct": 0.7,
    "tau": 0.1,
    "steepness": 10.0,
    "inflation_w": 2.0,
    "kappa": 25.0,
    "alpha0": 0.5,
    "obs_noise_sd": 1.0,
    "perfect_model": False,
}


def cmd_plan(args) -> int:
    cfg = _merge_config(
        PLAN_DEFAULTS,
        _load_config_file(args.config),
        {
            "x_ref": args.x_ref,
            "goal_tol": args.goal_tol,
            "method": args.method,
            "seed": args.seed,
            "n_max": args.n_max,
            "iterations": args.iterations,
            "perfect_model": True if args.perfect_model else None,
        },
    )
    try:
        spec = bench_mod.resolve_method(cfg["method"])
    except (ValueError, NotImplementedError) as exc:
        raise CliError(str(exc)) from None
    try:
        goal = pouring.GoalSpec(cfg["x_ref"], cfg["goal_tol"])
    except ValueError as exc:
        raise CliError(str(exc)) from None

    gt = pouring.GroundTruth(cfg["kappa"], cfg["alpha0"], cfg["obs_noise_sd"])
    if cfg["perfect_model"]:
        gt = dataclasses.replace(gt, obs_noise_sd=0.0)
        predictor: pouring.Predictor = pouring.PerfectPredictor(gt)
    else:
        if args.model is None:
            raise CliError("--model is required unless --perfect-model is given")
        model = gp_mod.load_model_json(args.model)
        predictor = bench_mod.build_predictor(spec, model, cfg["inflation_w"])

    search = SearchConfig(
        variant=spec.variant,
        c_uct=cfg["c_uct"],
        tau=cfg["tau"],
        steepness=cfg["steepness"],
        inflation_w=cfg["inflation_w"],
        iteration_budget=cfg["iterations"],
    )
    ep_cfg = pouring.EpisodeConfig(
        search=search,
        n_max=cfg["n_max"],
        initial_level=cfg["initial_level"],
        seed=substream_seed(cfg["seed"], 0),
    )
    trace = pouring.run_episode(gt, predictor, goal, ep_cfg)

    print(f"goal: x_ref={goal.x_ref:.2f} band=[{goal.lower:.2f}, {goal.upper:.2f}]  method={spec.name}")
    print(f"{'k':>3} {'observed':>9} {'alpha':>6} {'dur':>5} {'predicted':>10} {'mde':>9} {'true':>8}")
    for s in trace.steps:
        print(
            f"{s.k:>3} {s.observed:>9.2f} {s.action.alpha:>6.2f} "
            f"{s.action.duration:>5.2f} {s.predicted:>10.2f} {s.mde:>9.3f} {s.true_level:>8.2f}"
        )
    print(
        f"result: {'SUCCESS' if trace.success else 'FAILURE'}  "
        f"final true level {trace.final_true_level:.2f}  "
        f"({trace.n_actions} actions, stop: {trace.stop_reason})"
    )
    if args.out is not None:
        out_dir = Path(args.out)
        _echo_config(cfg, out_dir)
        pouring.save_trace_jsonl(trace, out_dir / "trace.jsonl")
        print(f"wrote {out_dir / 'trace.jsonl'}")
    return EXIT_OK if trace.success else EXIT_EXPERIMENT_FAILED


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

BENCH_DEFAULTS = dataclasses.asdict(bench_mod.BenchConfig())


def _bench_config_from(args) -> bench_mod.BenchConfig:
    flags = {
        "master_seed": args.seed,
        "trials": args.trials,
        "dataset_sizes": _int_list(args.sizes) if args.sizes else None,
        "methods": args.methods.split(",") if args.methods else None,
        "iterations": args.iterations,
        "n_max": args.n_max,
        "mde_kind": args.mde_kind,
    }
    cfg = _merge_config(BENCH_DEFAULTS, _load_config_file(args.config), flags)
    try:
        bench_config = bench_mod.BenchConfig(
            **{
                **cfg,
                "dataset_sizes": tuple(cfg["dataset_sizes"]),
                "methods": tuple(cfg["methods"]),
            }
        )
        for name in bench_config.methods:
            bench_mod.resolve_method(name)
    except (ValueError, NotImplementedError) as exc:
        raise CliError(str(exc)) from None
    return bench_config


def cmd_bench(args) -> int:
    bench_config = _bench_config_from(args)
    out_dir = Path(args.out)
    _echo_config(dataclasses.asdict(bench_config), out_dir)
    report = bench_mod.run_bench(bench_config)
    bench_mod.write_bench_outputs(report, out_dir)
    print(bench_mod.summarize(report))
    print(f"outputs in {out_dir}")
    errored = sum(
        1 for c in report.cells for r in c.records if r.error is not None
    )
    if errored:
        print(f"WARNING: {errored} trial(s) aborted with errors; see report.json")
        return EXIT_EXPERIMENT_FAILED
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

SWEEP_PARAMS = {"h": "steepness", "tau": "tau", "w": "inflation_w"}


def cmd_sweep(args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise CliError(f"--param must be one of {', '.join(SWEEP_PARAMS)}")
    values = _float_list(args.values)
    if not values:
        raise CliError("--values must contain at least one number")
    base = _bench_config_from(args)
    out_dir = Path(args.out)
    _echo_config(
        {**dataclasses.asdict(base), "sweep_param": args.param, "sweep_values": values},
        out_dir,
    )
    field = SWEEP_PARAMS[args.param]
    rows = []
    for value in values:
        cfg = dataclasses.replace(base, **{field: value})
        report = bench_mod.run_bench(cfg)
        for c in report.cells:
            rows.append((value, c.dataset_size, c.method, c.success_rate,
                         c.n_actions_mean, c.n_actions_sd))
        print(f"{args.param}={value}:")
        print(bench_mod.summarize(report))
    path = out_dir / "sweep.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# sweep param={args.param} values={','.join(repr(v) for v in values)}\n")
        fh.write(f"{args.param},dataset_size,method,success_rate,n_actions_mean,n_actions_sd\n")
        for row in rows:
            fh.write(
                f"{row[0]!r},{row[1]},{row[2]},{row[3]!r},{row[4]!r},{row[5]!r}\n"
            )
    print(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pourplan",
        description="Uncertainty-aware tree-search planning on a simulated pouring task.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="sample a transition dataset from the simulator")
    p.add_argument("--n", type=int, default=None, help="number of transitions")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--alpha0", type=float, default=None)
    p.add_argument("--obs-noise-sd", type=float, default=None, dest="obs_noise_sd")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit", help="fit a GP model to a dataset CSV")
    p.add_argument("--data", required=True, help="dataset CSV path")
    p.add_argument("--test-data", default=None, help="held-out dataset CSV")
    p.add_argument("--fit-hyper", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--noise-floor", type=float, default=None, dest="noise_floor")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("plan", help="run one receding-horizon episode")
    p.add_argument("--model", default=None, help="model JSON path")
    p.add_argument("--x-ref", type=float, default=None, dest="x_ref")
    p.add_argument("--goal-tol", type=float, default=None, dest="goal_tol")
    p.add_argument("--method", default=None, help="planning method name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-max", type=int, default=None, dest="n_max")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--perfect-model", action="store_true")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plan)

    for name, fn in (("bench", cmd_bench), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help=f"run the benchmark grid{' per sweep value' if name == 'sweep' else ''}")
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--sizes", default=None, help="comma-separated dataset sizes")
        p.add_argument("--methods", default=None, help="comma-separated method names")
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--n-max", type=int, default=None, dest="n_max")
        p.add_argument("--mde-kind", default=None, dest="mde_kind",
                       choices=("variance", "std"))
        p.add_argument("--config", default=None)
        p.add_argument("--out", required=True)
        if name == "sweep":
            p.add_argument("--param", required=True, help="h, tau, or w")
            p.add_argument("--values", required=True, help="comma-separated values")
        p.set_defaults(func=fn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pouring.EpisodeError as exc:
        print(f"episode failed: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT_FAILED


if __name__ == "__main__":
    sys.exit(main())
