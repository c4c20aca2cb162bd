"""Simulated liquid-pouring planning domain.

The state is the output container's fill level (percent of capacity); an
action tilts the bottle to ``alpha`` radians for ``duration`` seconds.
A synthetic ground truth stands in for the physical system: the poured
amount grows with tilt beyond a threshold angle and with duration, and the
level can only be observed through additive Gaussian noise (the analogue of
a camera-based level reading).

Planning happens against a learned predictor of the next level, never the
ground truth.  Episodes follow a receding-horizon loop: search from the
observed level, execute one action on the ground truth, observe, repeat
until the observed level enters the goal region or the action limit is hit.
Success is judged on the true level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Protocol

import numpy as np

from . import gp
from .mcts import PlanningDomain, SearchConfig, search as mcts_search
from .seeding import substream, substream_seed

__all__ = [
    "PourState",
    "PourAction",
    "GoalSpec",
    "GroundTruth",
    "ActionGrid",
    "Predictor",
    "GpPredictor",
    "InflatedPredictor",
    "PerfectPredictor",
    "PouringDomain",
    "EpisodeStep",
    "EpisodeTrace",
    "EpisodeConfig",
    "EpisodeError",
    "true_step",
    "observe",
    "reward",
    "is_terminal",
    "gen_dataset",
    "subsample",
    "run_episode",
    "save_trace_jsonl",
    "load_trace_jsonl",
]

# Exponent of the tilt term in the synthetic flow model.
FLOW_EXPONENT = 1.5

DEFAULT_N_MAX = 10


@dataclass(frozen=True, slots=True)
class PourState:
    """Fill level of the output container, percent of capacity."""

    level: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.level) or not 0.0 <= self.level <= 100.0:
            raise ValueError(f"level must lie in [0, 100], got {self.level!r}")


@dataclass(frozen=True, slots=True)
class PourAction:
    """Tool tilt (radians) applied for a duration (seconds)."""

    alpha: float
    duration: float

    def __post_init__(self) -> None:
        ok = (
            math.isfinite(self.alpha)
            and math.isfinite(self.duration)
            and self.alpha >= 0.0
            and self.duration >= 0.0
        )
        if not ok:
            raise ValueError(
                f"alpha and duration must be finite and nonnegative, got "
                f"({self.alpha!r}, {self.duration!r})"
            )


@dataclass(frozen=True)
class GoalSpec:
    """Target fill level ``x_ref`` with symmetric tolerance ``c``."""

    x_ref: float
    c: float = 2.5

    def __post_init__(self) -> None:
        if not (self.x_ref - self.c > 0.0 and self.x_ref + self.c <= 100.0):
            raise ValueError(
                f"goal requires x_ref - c > 0 and x_ref + c <= 100, got "
                f"x_ref={self.x_ref}, c={self.c}"
            )

    @property
    def lower(self) -> float:
        return self.x_ref - self.c

    @property
    def upper(self) -> float:
        return self.x_ref + self.c

    def contains(self, level: float) -> bool:
        return self.lower <= level <= self.upper


@dataclass(frozen=True)
class GroundTruth:
    """Synthetic pouring dynamics and observation noise.

    The poured amount per action is ``kappa * duration * max(0, alpha -
    alpha0) ** 1.5`` percent; tilts at or below ``alpha0`` pour nothing.
    """

    kappa: float = 25.0
    alpha0: float = 0.5
    obs_noise_sd: float = 1.0

    def __post_init__(self) -> None:
        if self.kappa <= 0.0 or self.alpha0 < 0.0 or self.obs_noise_sd < 0.0:
            raise ValueError(
                "GroundTruth requires kappa > 0, alpha0 >= 0, obs_noise_sd >= 0"
            )


@dataclass(frozen=True)
class ActionGrid:
    """Discrete action set: the Cartesian grid of tilts and durations."""

    alpha_min: float = 0.25
    alpha_max: float = 2.0
    alpha_step: float = 0.25
    duration_min: float = 0.1
    duration_max: float = 1.0
    duration_step: float = 0.1

    def __post_init__(self) -> None:
        for lo, hi, step in (
            (self.alpha_min, self.alpha_max, self.alpha_step),
            (self.duration_min, self.duration_max, self.duration_step),
        ):
            if step <= 0.0 or hi < lo or lo < 0.0:
                raise ValueError(f"invalid grid axis ({lo}, {hi}, {step})")

    @cached_property
    def alphas(self) -> tuple[float, ...]:
        n = int(round((self.alpha_max - self.alpha_min) / self.alpha_step)) + 1
        return tuple(self.alpha_min + i * self.alpha_step for i in range(n))

    @cached_property
    def durations(self) -> tuple[float, ...]:
        n = int(round((self.duration_max - self.duration_min) / self.duration_step)) + 1
        return tuple(self.duration_min + i * self.duration_step for i in range(n))

    @cached_property
    def actions(self) -> tuple[PourAction, ...]:
        return tuple(
            PourAction(a, d) for a in self.alphas for d in self.durations
        )

    @cached_property
    def action_array(self) -> np.ndarray:
        """(n, 2) array of (alpha, duration) rows, same order as ``actions``."""
        arr = np.array([[a.alpha, a.duration] for a in self.actions])
        arr.setflags(write=False)
        return arr


def true_step(gt: GroundTruth, state: PourState, action: PourAction, rng=None) -> PourState:
    """Apply the synthetic dynamics; deterministic (``rng`` reserved)."""
    poured = gt.kappa * action.duration * max(0.0, action.alpha - gt.alpha0) ** FLOW_EXPONENT
    return PourState(min(100.0, state.level + poured))


def observe(gt: GroundTruth, true_level: float, rng: np.random.Generator) -> float:
    """Noisy level reading, clamped to the physical range."""
    if gt.obs_noise_sd == 0.0:
        return float(true_level)
    return float(np.clip(true_level + rng.normal(0.0, gt.obs_noise_sd), 0.0, 100.0))


class Predictor(Protocol):
    """Next-level model used for planning: prediction plus deviation estimate."""

    def predict(self, level: float, alpha: float, duration: float) -> tuple[float, float]:
        """Predicted next level (clamped to [0, 100]) and its mde value."""
        ...

    def predict_batch(
        self, level: float, action_array: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized :meth:`predict` over (alpha, duration) rows."""
        ...


class GpPredictor:
    """Plan against a fitted GP; the mde is its predictive variance (or std)."""

    def __init__(self, model: gp.GpModel, mde_kind: str = "variance") -> None:
        if mde_kind not in ("variance", "std"):
            raise ValueError(f"mde_kind must be 'variance' or 'std', got {mde_kind!r}")
        self.model = model
        self.mde_kind = mde_kind

    def predict(self, level, alpha, duration):
        pred = self.model._predict_one(level, alpha, duration)
        m = pred.variance if self.mde_kind == "variance" else math.sqrt(pred.variance)
        return pred.mean, m

    def predict_batch(self, level, action_array):
        feats = np.column_stack(
            [np.full(len(action_array), level), action_array]
        )
        pred = gp.gp_predict_batch(self.model, feats)
        m = pred.variance if self.mde_kind == "variance" else np.sqrt(pred.variance)
        return pred.mean, m


class InflatedPredictor:
    """Conservative wrapper: the prediction is shifted up by ``w * mde``.

    The shifted value is what the planner sees everywhere (propagation,
    reward, terminal checks), so large-uncertainty pours look like they
    fill the container more than the raw model says.
    """

    def __init__(self, base: Predictor, w: float) -> None:
        if w < 0.0:
            raise ValueError("inflation factor w must be nonnegative")
        self.base = base
        self.w = w

    def predict(self, level, alpha, duration):
        pred, m = self.base.predict(level, alpha, duration)
        return min(100.0, pred + self.w * m), m

    def predict_batch(self, level, action_array):
        preds, mdes = self.base.predict_batch(level, action_array)
        return np.minimum(100.0, preds + self.w * mdes), mdes


class PerfectPredictor:
    """Plan against the ground-truth dynamics with zero deviation estimate."""

    def __init__(self, gt: GroundTruth) -> None:
        self.gt = gt

    def predict(self, level, alpha, duration):
        poured = (
            self.gt.kappa * duration * max(0.0, alpha - self.gt.alpha0) ** FLOW_EXPONENT
        )
        return min(100.0, level + poured), 0.0

    def predict_batch(self, level, action_array):
        poured = (
            self.gt.kappa
            * action_array[:, 1]
            * np.maximum(0.0, action_array[:, 0] - self.gt.alpha0) ** FLOW_EXPONENT
        )
        preds = np.minimum(100.0, level + poured)
        return preds, np.zeros(len(action_array))


def _transition_outcome(
    predicted: float, depth: int, goal: GoalSpec, n_max: int
) -> tuple[float, bool]:
    """Sparse reward and terminal flag of a transition with this prediction."""
    terminal = predicted >= goal.lower or depth > n_max
    if not terminal:
        return 0.0, False
    rho = 1.0 + 1.0 / (depth + 1) if predicted <= goal.upper else 0.0
    return rho, True


def is_terminal(
    state: PourState,
    action: PourAction,
    depth: int,
    goal: GoalSpec,
    predictor: Predictor,
    n_max: int = DEFAULT_N_MAX,
) -> bool:
    """Transition ends the episode: predicted level reaches the goal band's
    lower edge, or the depth limit is exceeded."""
    predicted, _ = predictor.predict(state.level, action.alpha, action.duration)
    return _transition_outcome(predicted, depth, goal, n_max)[1]


def reward(
    state: PourState,
    action: PourAction,
    depth: int,
    goal: GoalSpec,
    predictor: Predictor,
    n_max: int = DEFAULT_N_MAX,
) -> float:
    """Sparse reward: nonzero only on terminal transitions that do not
    overshoot, and worth more the fewer actions were needed."""
    predicted, _ = predictor.predict(state.level, action.alpha, action.duration)
    return _transition_outcome(predicted, depth, goal, n_max)[0]


class PouringDomain(PlanningDomain):
    """Planning-domain adapter over a predictor and goal."""

    def __init__(
        self,
        predictor: Predictor,
        goal: GoalSpec,
        grid: ActionGrid | None = None,
        n_max: int = DEFAULT_N_MAX,
    ) -> None:
        self.predictor = predictor
        self.goal = goal
        self.grid = grid if grid is not None else ActionGrid()
        self.n_max = n_max
        self._actions = self.grid.actions
        self._action_array = self.grid.action_array

    def legal_actions(self, state, depth):
        return self._actions

    def model_step(self, state, action):
        predicted, mde_val = self.predictor.predict(
            state.level, action.alpha, action.duration
        )
        return PourState(predicted), mde_val

    def reward(self, state, action, depth):
        return reward(state, action, depth, self.goal, self.predictor, self.n_max)

    def is_terminal(self, state, action, depth):
        return is_terminal(state, action, depth, self.goal, self.predictor, self.n_max)

    def inflate_state(self, state, amount):
        return PourState(min(100.0, max(0.0, state.level + amount)))

    def step_eval(self, state, action, depth):
        predicted, mde_val = self.predictor.predict(
            state.level, action.alpha, action.duration
        )
        rho, terminal = _transition_outcome(predicted, depth, self.goal, self.n_max)
        return PourState(predicted), mde_val, rho, terminal

    def step_eval_batch(self, state, actions, depth):
        if actions is self._actions:
            action_array = self._action_array
        else:
            action_array = np.array([[a.alpha, a.duration] for a in actions])
        preds, mdes = self.predictor.predict_batch(state.level, action_array)
        out = []
        for action, predicted, mde_val in zip(actions, preds, mdes):
            predicted = float(predicted)
            rho, terminal = _transition_outcome(predicted, depth, self.goal, self.n_max)
            out.append((PourState(predicted), float(mde_val), rho, terminal))
        return out


def gen_dataset(
    gt: GroundTruth,
    n: int,
    rng: np.random.Generator,
    grid: ActionGrid | None = None,
) -> gp.Dataset:
    """Sample ``n`` random pouring transitions.

    Start levels are uniform on [0, 80]; actions are uniform over the grid.
    Both the feature level and the target next level are *observed* (noisy)
    readings, mirroring how a camera-based data collection would work.
    """
    if n < 1:
        raise ValueError("dataset size must be at least 1")
    grid = grid if grid is not None else ActionGrid()
    actions = grid.actions
    features = np.empty((n, 3))
    targets = np.empty(n)
    for i in range(n):
        level = rng.uniform(0.0, 80.0)
        action = actions[int(rng.integers(len(actions)))]
        observed_level = observe(gt, level, rng)
        next_true = true_step(gt, PourState(level), action)
        features[i] = (observed_level, action.alpha, action.duration)
        targets[i] = observe(gt, next_true.level, rng)
    return gp.Dataset(features, targets)


def subsample(dataset: gp.Dataset, m: int, rng: np.random.Generator) -> gp.Dataset:
    """Random sub-dataset of size ``m`` (without replacement, order kept)."""
    if not 1 <= m <= len(dataset):
        raise ValueError(f"subsample size must lie in [1, {len(dataset)}], got {m}")
    idx = np.sort(rng.choice(len(dataset), size=m, replace=False))
    return gp.Dataset(dataset.features[idx], dataset.targets[idx])


@dataclass
class EpisodeStep:
    """One executed action of an episode."""

    k: int
    observed: float
    action: PourAction
    predicted: float
    mde: float
    true_level: float


@dataclass
class EpisodeTrace:
    """Full record of one receding-horizon episode."""

    steps: list[EpisodeStep]
    x_ref: float
    tol: float
    initial_observed: float
    final_true_level: float
    final_observed: float
    stop_reason: str
    success: bool

    @property
    def n_actions(self) -> int:
        return len(self.steps)


class EpisodeError(RuntimeError):
    """An episode aborted; carries the partial trace for diagnostics."""

    def __init__(self, message: str, trace: EpisodeTrace) -> None:
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class EpisodeConfig:
    """How to run one episode.

    ``seed`` drives both the observation-noise stream and the per-replan
    search seeds; the search config's own seed and depth cap are overridden
    accordingly (the depth cap is set just past ``n_max`` so the domain's
    depth-exhaustion rule, not the generic rollout cap, ends rollouts).
    """

    search: SearchConfig = field(default_factory=SearchConfig)
    n_max: int = DEFAULT_N_MAX
    initial_level: float = 0.0
    grid: ActionGrid = field(default_factory=ActionGrid)
    seed: int = 0


def run_episode(
    gt: GroundTruth,
    predictor: Predictor,
    goal: GoalSpec,
    config: EpisodeConfig | None = None,
) -> EpisodeTrace:
    """Plan-execute-observe until the observed level reaches the goal band
    or the action limit is exceeded; success is judged on the true level."""
    config = config if config is not None else EpisodeConfig()
    noise_rng = substream(config.seed, 0)
    domain = PouringDomain(predictor, goal, config.grid, config.n_max)

    true_level = float(config.initial_level)
    observed = observe(gt, true_level, noise_rng)
    initial_observed = observed
    steps: list[EpisodeStep] = []

    def finish(stop_reason: str) -> EpisodeTrace:
        return EpisodeTrace(
            steps=steps,
            x_ref=goal.x_ref,
            tol=goal.c,
            initial_observed=initial_observed,
            final_true_level=true_level,
            final_observed=observed,
            stop_reason=stop_reason,
            success=goal.contains(true_level),
        )

    k = 0
    while True:
        if observed >= goal.lower:
            return finish("goal_observed")
        if k > config.n_max:
            return finish("action_limit")
        search_cfg = replace(
            config.search,
            rng_seed=substream_seed(config.seed, 1, k),
            max_depth=config.n_max + 1,
        )
        try:
            action = mcts_search(domain, PourState(observed), search_cfg)
        except Exception as exc:
            raise EpisodeError(f"search failed at step {k}: {exc}", finish("error")) from exc
        predicted, mde_val = predictor.predict(observed, action.alpha, action.duration)
        true_level = true_step(gt, PourState(true_level), action).level
        new_observed = observe(gt, true_level, noise_rng)
        steps.append(
            EpisodeStep(
                k=k,
                observed=observed,
                action=action,
                predicted=predicted,
                mde=mde_val,
                true_level=true_level,
            )
        )
        observed = new_observed
        k += 1


def save_trace_jsonl(trace: EpisodeTrace, path) -> None:
    """One JSON object per executed step."""
    with open(path, "w", encoding="utf-8") as fh:
        for step in trace.steps:
            fh.write(
                json.dumps(
                    {
                        "k": step.k,
                        "observed": step.observed,
                        "action": {"alpha": step.action.alpha, "d": step.action.duration},
                        "predicted": step.predicted,
                        "mde": step.mde,
                        "true_level": step.true_level,
                    }
                )
                + "\n"
            )


def load_trace_jsonl(path) -> list[EpisodeStep]:
    steps = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        steps.append(
            EpisodeStep(
                k=rec["k"],
                observed=rec["observed"],
                action=PourAction(rec["action"]["alpha"], rec["action"]["d"]),
                predicted=rec["predicted"],
                mde=rec["mde"],
                true_level=rec["true_level"],
            )
        )
    return steps
