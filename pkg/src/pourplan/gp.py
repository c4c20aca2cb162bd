"""Gaussian-process regression over pouring transitions.

A transition is described by a 3-dimensional feature vector
``(level, alpha, duration)`` — the current fill level of the output
container (percent), the tool tilt (radians) and the pour duration
(seconds).  The regression target is the next fill level (percent).

The covariance is the sum of a dot-product kernel (captures the global
linear trend: more pouring, higher level) and a rational-quadratic kernel
(captures local stationary structure)::

    k(z1, z2) = (sigma0_sq + z1 . z2)
                + (1 + ||z1 - z2||^2 / (2 * rq_alpha * rq_scale^2)) ** (-rq_alpha)

Features are affinely normalized per dimension (zero mean / unit variance
over the training set) before any kernel evaluation, because the three
dimensions carry incomparable units.  Targets are standardized internally
for the same reason: the kernel has unit output amplitude, so regression on
raw percent-scale targets would underfit badly; predictions and variances
are mapped back to percent units on the way out.

The predictive variance at a query is the model-deviation estimate used by
the uncertainty-aware planner: it grows as the query moves away from the
training data and is therefore a proxy for how wrong the predicted next
level is likely to be.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "Feature",
    "Dataset",
    "KernelParams",
    "FeatureScaler",
    "TargetScaler",
    "GpModel",
    "Prediction",
    "GpError",
    "GpFitError",
    "DatasetFormatError",
    "HyperSearchSpace",
    "kernel_eval",
    "kernel_matrix",
    "gp_fit",
    "gp_predict",
    "gp_predict_batch",
    "mde",
    "log_marginal_likelihood",
    "fit_hyperparams",
    "load_dataset_csv",
    "save_dataset_csv",
    "load_model_json",
    "save_model_json",
]

DATASET_CSV_HEADER = ("level", "alpha", "duration", "next_level")

# Jitter escalation for Cholesky factorization: first attempt is exact, then
# jitter grows tenfold per retry up to the hard cap.
_JITTER_START = 1e-10
_JITTER_MAX = 1e-4

# Round-off guard: predictive variances in (-1e-10, 0) are clamped to zero,
# anything more negative indicates a real numerical problem.
_NEG_VARIANCE_TOL = 1e-10


class GpError(RuntimeError):
    """Numerical failure inside the GP machinery."""


class GpFitError(GpError):
    """Gram-matrix factorization failed even after jitter escalation."""


class DatasetFormatError(ValueError):
    """A dataset file does not conform to the CSV schema."""


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class Feature:
    """A single transition feature vector ``(level, alpha, duration)``."""

    level: float
    alpha: float
    duration: float

    def __post_init__(self) -> None:
        level = _require_finite("level", self.level)
        alpha = _require_finite("alpha", self.alpha)
        duration = _require_finite("duration", self.duration)
        if not 0.0 <= level <= 100.0:
            raise ValueError(f"level must lie in [0, 100], got {level}")
        if alpha < 0.0:
            raise ValueError(f"alpha must be nonnegative, got {alpha}")
        if duration < 0.0:
            raise ValueError(f"duration must be nonnegative, got {duration}")
        object.__setattr__(self, "level", level)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "duration", duration)

    def as_array(self) -> np.ndarray:
        return np.array([self.level, self.alpha, self.duration])


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the dot-product + rational-quadratic kernel."""

    dot_sigma0_sq: float = 1.0
    rq_scale: float = 1.0
    rq_alpha: float = 1.0
    noise_var: float = 1.0

    def __post_init__(self) -> None:
        for name in ("dot_sigma0_sq", "rq_scale", "rq_alpha", "noise_var"):
            _require_finite(name, getattr(self, name))
        if self.dot_sigma0_sq < 0.0:
            raise ValueError("dot_sigma0_sq must be nonnegative")
        if self.rq_scale <= 0.0:
            raise ValueError("rq_scale must be positive")
        if self.rq_alpha <= 0.0:
            raise ValueError("rq_alpha must be positive")
        if self.noise_var < 0.0:
            raise ValueError("noise_var must be nonnegative")


class Dataset:
    """An ordered set of observed transitions.

    Parameters
    ----------
    features : array-like, shape (H, 3)
        One ``(level, alpha, duration)`` row per transition.
    targets : array-like, shape (H,)
        Observed next level (percent) per transition.
    """

    def __init__(self, features, targets) -> None:
        features = np.atleast_2d(np.asarray(features, dtype=float))
        targets = np.asarray(targets, dtype=float).reshape(-1)
        if features.ndim != 2 or features.shape[1] != 3:
            raise ValueError(f"features must have shape (H, 3), got {features.shape}")
        if features.shape[0] != targets.shape[0]:
            raise ValueError("features and targets must have the same length")
        if features.shape[0] < 1:
            raise ValueError("dataset must contain at least one transition")
        if not np.all(np.isfinite(features)) or not np.all(np.isfinite(targets)):
            raise ValueError("dataset contains non-finite values")
        if np.any(targets < 0.0) or np.any(targets > 100.0):
            raise ValueError("targets must lie in [0, 100]")
        if np.any(features[:, 0] < 0.0) or np.any(features[:, 0] > 100.0):
            raise ValueError("feature levels must lie in [0, 100]")
        if np.any(features[:, 1:] < 0.0):
            raise ValueError("alpha and duration must be nonnegative")
        self.features = features
        self.targets = targets

    @classmethod
    def from_points(cls, points: Iterable[tuple[Feature, float]]) -> "Dataset":
        points = list(points)
        features = np.array([p[0].as_array() for p in points])
        targets = np.array([p[1] for p in points], dtype=float)
        return cls(features, targets)

    @property
    def points(self) -> list[tuple[Feature, float]]:
        return [
            (Feature(*row), float(t)) for row, t in zip(self.features, self.targets)
        ]

    def __len__(self) -> int:
        return self.features.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.features, other.features) and np.array_equal(
            self.targets, other.targets
        )

    def __repr__(self) -> str:
        return f"Dataset(H={len(self)})"


@dataclass(frozen=True)
class FeatureScaler:
    """Per-dimension affine normalization ``(z - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "FeatureScaler":
        mean = features.mean(axis=0)
        scale = features.std(axis=0)
        # Constant dimensions (e.g. a single training point) pass through
        # unscaled instead of dividing by zero.
        scale = np.where(scale > 0.0, scale, 1.0)
        return cls(mean=mean, scale=scale)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.scale


@dataclass(frozen=True)
class TargetScaler:
    """Affine standardization of the regression targets.

    The kernel has unit output amplitude, so regression runs on
    standardized targets; predictions map back via ``mean + sd * y`` and
    variances via ``sd**2``.  ``noise_var`` stays in output units (percent
    squared) throughout the public surface and is rescaled internally.
    """

    mean: float
    sd: float

    @classmethod
    def fit(cls, targets: np.ndarray) -> "TargetScaler":
        sd = float(targets.std())
        return cls(mean=float(targets.mean()), sd=sd if sd > 0.0 else 1.0)

    def transform(self, targets: np.ndarray) -> np.ndarray:
        return (targets - self.mean) / self.sd


def _as_feature_array(z) -> np.ndarray:
    if isinstance(z, Feature):
        return z.as_array()
    arr = np.asarray(z, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"feature vector must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature vector contains non-finite values")
    return arr


def kernel_eval(params: KernelParams, z1, z2) -> float:
    """Evaluate the composite kernel between two feature vectors.

    ``z1`` and ``z2`` may be :class:`Feature` instances or length-3 arrays
    (e.g. already-normalized vectors).  The result is symmetric in its
    arguments and the rational-quadratic term always lies in (0, 1].
    """
    a = _as_feature_array(z1)
    b = _as_feature_array(z2)
    diff = a - b
    sq_dist = float(diff @ diff)
    dot_term = params.dot_sigma0_sq + float(a @ b)
    rq_term = (1.0 + sq_dist / (2.0 * params.rq_alpha * params.rq_scale**2)) ** (
        -params.rq_alpha
    )
    return dot_term + rq_term


def kernel_matrix(params: KernelParams, Z1: np.ndarray, Z2: np.ndarray) -> np.ndarray:
    """Kernel matrix between two sets of (already normalized) feature rows."""
    cross = Z1 @ Z2.T
    sq1 = np.einsum("ij,ij->i", Z1, Z1)
    sq2 = np.einsum("ij,ij->i", Z2, Z2)
    d2 = sq1[:, None] + sq2[None, :] - 2.0 * cross
    np.maximum(d2, 0.0, out=d2)
    rq = (1.0 + d2 / (2.0 * params.rq_alpha * params.rq_scale**2)) ** (-params.rq_alpha)
    return params.dot_sigma0_sq + cross + rq


def _kernel_self_diag(params: KernelParams, Z: np.ndarray) -> np.ndarray:
    # k(z, z) = sigma0_sq + |z|^2 + 1 (the RQ term is 1 at zero distance).
    return params.dot_sigma0_sq + np.einsum("ij,ij->i", Z, Z) + 1.0


def _factor_gram(gram: np.ndarray, noise_var: float) -> tuple[np.ndarray, float]:
    """Cholesky-factor ``gram + noise_var*I`` with jitter escalation.

    Returns the lower factor and the jitter that was finally added.  Raises
    :class:`GpFitError` with condition diagnostics if the matrix cannot be
    factored with jitter up to the cap.
    """
    n = gram.shape[0]
    eye = np.eye(n)
    jitter = 0.0
    while True:
        try:
            chol = np.linalg.cholesky(gram + (noise_var + jitter) * eye)
            return chol, jitter
        except np.linalg.LinAlgError:
            jitter = _JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > _JITTER_MAX:
                eigvals = np.linalg.eigvalsh(gram + noise_var * eye)
                raise GpFitError(
                    "Cholesky factorization failed with jitter up to "
                    f"{_JITTER_MAX:g}: H={n}, noise_var={noise_var:g}, "
                    f"eigenvalue range [{eigvals.min():.3e}, {eigvals.max():.3e}]"
                ) from None


class Prediction(NamedTuple):
    """GP posterior at a query: clamped mean, variance, and the raw mean."""

    mean: float | np.ndarray
    variance: float | np.ndarray
    raw_mean: float | np.ndarray


@dataclass(eq=False)
class GpModel:
    """A fitted Gaussian-process regressor.

    Instances are produced by :func:`gp_fit` and are immutable by
    convention; prediction is reentrant and a fitted model can be shared
    freely across threads.
    """

    dataset: Dataset
    params: KernelParams
    feature_scaler: FeatureScaler
    target_scaler: TargetScaler
    chol: np.ndarray
    alpha_vec: np.ndarray
    jitter: float

    @property
    def noise_var_normalized(self) -> float:
        """Observation-noise variance in standardized-target units."""
        return self.params.noise_var / self.target_scaler.sd**2

    @cached_property
    def _train_norm(self) -> np.ndarray:
        return self.feature_scaler.transform(self.dataset.features)

    @cached_property
    def _train_sq(self) -> np.ndarray:
        Z = self._train_norm
        return np.einsum("ij,ij->i", Z, Z)

    @cached_property
    def _chol_inv(self) -> np.ndarray:
        return scipy.linalg.solve_triangular(
            self.chol, np.eye(self.chol.shape[0]), lower=True, check_finite=False
        )

    @cached_property
    def _scalar_consts(self) -> tuple:
        # Plain-float constants for the single-query fast path.
        fs, ts, p = self.feature_scaler, self.target_scaler, self.params
        return (
            float(fs.mean[0]), float(fs.mean[1]), float(fs.mean[2]),
            float(fs.scale[0]), float(fs.scale[1]), float(fs.scale[2]),
            ts.mean, ts.sd, ts.sd**2,
            p.dot_sigma0_sq,
            1.0 / (2.0 * p.rq_alpha * p.rq_scale**2),
            -p.rq_alpha,
        )

    def _predict_one(self, level: float, alpha: float, duration: float) -> Prediction:
        """Single-query posterior; the rollout hot path.

        Same formula as the batch path, minimizing per-call overhead.
        """
        (m0, m1, m2, s0, s1, s2, y_mean, y_sd, y_var,
         sigma0, rq_inv, neg_alpha) = self._scalar_consts
        z0 = (level - m0) / s0
        z1 = (alpha - m1) / s1
        z2 = (duration - m2) / s2
        zq = np.array([z0, z1, z2])
        cross = self._train_norm @ zq
        q_sq = z0 * z0 + z1 * z1 + z2 * z2
        d2 = self._train_sq - 2.0 * cross
        d2 += q_sq
        np.maximum(d2, 0.0, out=d2)
        kstar = (1.0 + d2 * rq_inv) ** neg_alpha
        kstar += cross
        kstar += sigma0
        mean_n = float(self.alpha_vec @ kstar)
        v = self._chol_inv @ kstar
        var_n = (sigma0 + q_sq + 1.0) - float(v @ v)
        variance = var_n * y_var
        if variance < 0.0:
            if variance < -_NEG_VARIANCE_TOL:
                raise GpError(
                    f"predictive variance {variance:.3e} is more negative than "
                    f"the round-off tolerance {-_NEG_VARIANCE_TOL:g}"
                )
            variance = 0.0
        raw = y_mean + y_sd * mean_n
        return Prediction(
            mean=min(100.0, max(0.0, raw)), variance=variance, raw_mean=raw
        )


def gp_fit(
    data: Dataset,
    params: KernelParams | None = None,
    feature_scaler: FeatureScaler | None = None,
    target_scaler: TargetScaler | None = None,
) -> GpModel:
    """Fit a GP to ``data``; deterministic given identical inputs.

    The scalers are normally derived from the training set; stored scalers
    can be supplied to reproduce a serialized model exactly.
    """
    if params is None:
        params = KernelParams()
    if feature_scaler is None:
        feature_scaler = FeatureScaler.fit(data.features)
    if target_scaler is None:
        target_scaler = TargetScaler.fit(data.targets)
    if params.noise_var == 0.0:
        _check_interpolation_consistency(data)
    Z = feature_scaler.transform(data.features)
    y = target_scaler.transform(data.targets)
    gram = kernel_matrix(params, Z, Z)
    chol, jitter = _factor_gram(gram, params.noise_var / target_scaler.sd**2)
    alpha_vec = scipy.linalg.cho_solve((chol, True), y, check_finite=False)
    return GpModel(
        dataset=data,
        params=params,
        feature_scaler=feature_scaler,
        target_scaler=target_scaler,
        chol=chol,
        alpha_vec=alpha_vec,
        jitter=jitter,
    )


def _check_interpolation_consistency(data: Dataset) -> None:
    # With zero observation noise, identical features must map to identical
    # targets; otherwise the exact-interpolation model is contradictory.
    order = np.lexsort(data.features.T)
    feats = data.features[order]
    targs = data.targets[order]
    same = np.all(feats[1:] == feats[:-1], axis=1)
    if np.any(same & (targs[1:] != targs[:-1])):
        raise GpFitError(
            "duplicate features with conflicting targets are not representable "
            "with noise_var=0"
        )


def _predict_normalized(model: GpModel, Zq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance (standardized-target units) at ``Zq``."""
    params = model.params
    Zt = model._train_norm
    cross = Zt @ Zq.T
    q_sq = np.einsum("ij,ij->i", Zq, Zq)
    d2 = model._train_sq[:, None] + q_sq[None, :] - 2.0 * cross
    np.maximum(d2, 0.0, out=d2)
    kstar = params.dot_sigma0_sq + cross
    kstar += (1.0 + d2 / (2.0 * params.rq_alpha * params.rq_scale**2)) ** (
        -params.rq_alpha
    )
    mean_n = model.alpha_vec @ kstar
    v = model._chol_inv @ kstar
    var_n = (params.dot_sigma0_sq + q_sq + 1.0) - np.einsum("ij,ij->j", v, v)
    return mean_n, var_n


def _predict_raw(model: GpModel, Zq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean_n, var_n = _predict_normalized(model, Zq)
    ts = model.target_scaler
    raw_mean = ts.mean + ts.sd * mean_n
    variance = var_n * ts.sd**2
    if np.any(variance < -_NEG_VARIANCE_TOL):
        raise GpError(
            f"predictive variance {variance.min():.3e} is more negative than the "
            f"round-off tolerance {-_NEG_VARIANCE_TOL:g}"
        )
    np.maximum(variance, 0.0, out=variance)
    return raw_mean, variance


def gp_predict(model: GpModel, z) -> Prediction:
    """Posterior at one query: mean clamped to [0, 100], variance >= 0.

    The unclamped mean is returned alongside for diagnostics.
    """
    if isinstance(z, Feature):
        level, alpha, duration = z.level, z.alpha, z.duration
    else:
        try:
            level, alpha, duration = (float(v) for v in z)
        except (TypeError, ValueError):
            raise ValueError(
                "query must be a Feature or a 3-component vector"
            ) from None
        if not (
            math.isfinite(level) and math.isfinite(alpha) and math.isfinite(duration)
        ):
            raise ValueError("feature vector contains non-finite values")
    return model._predict_one(level, alpha, duration)


def gp_predict_batch(model: GpModel, features: np.ndarray) -> Prediction:
    """Vectorized posterior over query rows ``(m, 3)`` of raw features."""
    Zq = model.feature_scaler.transform(np.asarray(features, dtype=float))
    raw_mean, variance = _predict_raw(model, Zq)
    return Prediction(
        mean=np.clip(raw_mean, 0.0, 100.0), variance=variance, raw_mean=raw_mean
    )


def mde(model: GpModel, state, action, kind: str = "variance") -> float:
    """Model-deviation estimate for applying ``action`` in ``state``.

    ``state`` is anything with a ``level`` attribute (or a bare number);
    ``action`` is anything with ``alpha``/``duration`` attributes (or an
    ``(alpha, duration)`` pair).  ``kind`` selects the GP predictive
    variance (default) or its square root.
    """
    level = state.level if hasattr(state, "level") else float(state)
    try:
        alpha, duration = action.alpha, action.duration
    except AttributeError:
        alpha, duration = action
    pred = model._predict_one(level, alpha, duration)
    if kind == "variance":
        return pred.variance
    if kind == "std":
        return math.sqrt(pred.variance)
    raise ValueError(f"mde kind must be 'variance' or 'std', got {kind!r}")


def log_marginal_likelihood(data: Dataset, params: KernelParams) -> float:
    """log p(standardized targets | features, params).

    Evaluated in the same normalized units the fit uses, so values are
    comparable across parameter candidates for one dataset.
    """
    fs = FeatureScaler.fit(data.features)
    ts = TargetScaler.fit(data.targets)
    Z = fs.transform(data.features)
    y = ts.transform(data.targets)
    gram = kernel_matrix(params, Z, Z)
    chol, _ = _factor_gram(gram, params.noise_var / ts.sd**2)
    alpha_vec = scipy.linalg.cho_solve((chol, True), y, check_finite=False)
    n = len(data)
    return float(
        -0.5 * y @ alpha_vec
        - np.sum(np.log(np.diag(chol)))
        - 0.5 * n * math.log(2.0 * math.pi)
    )


GridAxis = tuple[float, float, int]


@dataclass(frozen=True)
class HyperSearchSpace:
    """Log-spaced grid bounds (low, high, points) per kernel hyperparameter.

    Bounds must be positive; an axis with ``low == high`` or a single point
    is held fixed.
    """

    dot_sigma0_sq: GridAxis = (1e-3, 1e3, 4)
    rq_scale: GridAxis = (5e-2, 5e1, 6)
    rq_alpha: GridAxis = (5e-2, 5e1, 4)
    noise_var: GridAxis = (1e-4, 1e2, 6)
    n_starts: int = 3
    refine_sweeps: int = 3

    def axes(self) -> list[GridAxis]:
        return [self.dot_sigma0_sq, self.rq_scale, self.rq_alpha, self.noise_var]


FALLBACK_PARAMS = KernelParams(
    dot_sigma0_sq=1.0, rq_scale=1.0, rq_alpha=1.0, noise_var=1.0
)


def _axis_values(axis: GridAxis) -> np.ndarray:
    lo, hi, n = axis
    if lo <= 0.0 or hi < lo:
        raise ValueError(f"grid axis must satisfy 0 < low <= high, got {axis}")
    if n <= 1 or lo == hi:
        return np.array([lo])
    return np.geomspace(lo, hi, int(n))


def _params_from_vec(vec: Sequence[float]) -> KernelParams:
    return KernelParams(
        dot_sigma0_sq=float(vec[0]),
        rq_scale=float(vec[1]),
        rq_alpha=float(vec[2]),
        noise_var=float(vec[3]),
    )


def _is_better(
    lml_a: float, p_a: KernelParams, lml_b: float, p_b: KernelParams
) -> bool:
    # Ties resolve toward the smoother/simpler model.
    if lml_a != lml_b:
        return lml_a > lml_b
    if p_a.rq_scale != p_b.rq_scale:
        return p_a.rq_scale < p_b.rq_scale
    return p_a.noise_var < p_b.noise_var


def fit_hyperparams(
    data: Dataset, search_space: HyperSearchSpace | None = None
) -> KernelParams:
    """Maximize the log marginal likelihood over a deterministic search.

    A coarse log-spaced grid is scanned first; the best few candidates are
    refined by multiplicative coordinate descent within the axis bounds.
    If every candidate fails numerically, a warning is emitted and
    :data:`FALLBACK_PARAMS` is returned.
    """
    if len(data) < 2:
        raise ValueError("hyperparameter fitting requires at least 2 points")
    space = search_space if search_space is not None else HyperSearchSpace()
    axes = space.axes()
    grids = [_axis_values(ax) for ax in axes]

    def lml(vec: np.ndarray) -> float:
        try:
            return log_marginal_likelihood(data, _params_from_vec(vec))
        except (GpFitError, FloatingPointError):
            return -math.inf

    candidates = []
    for s0 in grids[0]:
        for ell in grids[1]:
            for a_rq in grids[2]:
                for nv in grids[3]:
                    vec = np.array([s0, ell, a_rq, nv])
                    candidates.append((lml(vec), vec))
    feasible = [(v, vec) for v, vec in candidates if v > -math.inf]
    if not feasible:
        warnings.warn(
            "all hyperparameter candidates failed numerically; "
            "falling back to default kernel parameters",
            stacklevel=2,
        )
        return FALLBACK_PARAMS

    feasible.sort(key=lambda item: -item[0])
    starts = feasible[: max(1, space.n_starts)]

    bounds = [(ax[0], ax[1]) for ax in axes]
    init_steps = []
    for ax, grid in zip(axes, grids):
        if len(grid) > 1:
            init_steps.append((ax[1] / ax[0]) ** (0.5 / (len(grid) - 1)))
        else:
            init_steps.append(1.0)

    best_lml, best_vec = starts[0]
    best_params = _params_from_vec(best_vec)
    for start_lml, start_vec in starts:
        cur_vec = start_vec.copy()
        cur_lml = start_lml
        steps = list(init_steps)
        for _ in range(space.refine_sweeps):
            for i in range(4):
                step = steps[i]
                evals = 0
                while step > 1.0001 and evals < 40:
                    lo, hi = bounds[i]
                    moved = False
                    for proposal in (cur_vec[i] * step, cur_vec[i] / step):
                        trial = cur_vec.copy()
                        trial[i] = min(hi, max(lo, proposal))
                        val = lml(trial)
                        evals += 1
                        if val > cur_lml:
                            cur_lml, cur_vec = val, trial
                            moved = True
                            break
                    if not moved:
                        step = math.sqrt(step)
                steps[i] = step
        cur_params = _params_from_vec(cur_vec)
        if _is_better(cur_lml, cur_params, best_lml, best_params):
            best_lml, best_params = cur_lml, cur_params
    return best_params


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Write a dataset as CSV with the canonical transition header."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_CSV_HEADER)
        for row, target in zip(dataset.features, dataset.targets):
            writer.writerow([repr(float(v)) for v in (*row, target)])


def load_dataset_csv(path) -> Dataset:
    """Read a transition dataset written by :func:`save_dataset_csv`.

    Raises :class:`DatasetFormatError` naming the offending row and column
    on any schema or parse problem.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: file is empty") from None
        if tuple(h.strip() for h in header) != DATASET_CSV_HEADER:
            raise DatasetFormatError(
                f"{path}: expected header {','.join(DATASET_CSV_HEADER)}, "
                f"got {','.join(header)}"
            )
        features: list[list[float]] = []
        targets: list[float] = []
        for row_idx, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DatasetFormatError(
                    f"{path}: row {row_idx}: expected 4 columns, got {len(row)}"
                )
            values = []
            for col_name, cell in zip(DATASET_CSV_HEADER, row):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DatasetFormatError(
                        f"{path}: row {row_idx}, column '{col_name}': "
                        f"could not parse {cell!r} as a number"
                    ) from None
            features.append(values[:3])
            targets.append(values[3])
        if not features:
            raise DatasetFormatError(f"{path}: no data rows")
    try:
        return Dataset(np.array(features), np.array(targets))
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from None


def save_model_json(model: GpModel, path) -> None:
    """Serialize kernel parameters, scaler and dataset as JSON.

    The Cholesky factorization is intentionally not stored; it is
    recomputed on load.
    """
    payload = {
        "kernel_params": {
            "dot_sigma0_sq": model.params.dot_sigma0_sq,
            "rq_scale": model.params.rq_scale,
            "rq_alpha": model.params.rq_alpha,
            "noise_var": model.params.noise_var,
        },
        "feature_scaler": {
            "mean": model.feature_scaler.mean.tolist(),
            "scale": model.feature_scaler.scale.tolist(),
        },
        "target_scaler": {
            "mean": model.target_scaler.mean,
            "sd": model.target_scaler.sd,
        },
        "dataset": {
            "features": model.dataset.features.tolist(),
            "targets": model.dataset.targets.tolist(),
        },
    }
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_model_json(path) -> GpModel:
    """Load a model saved by :func:`save_model_json` and refit the factors."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    params = KernelParams(**payload["kernel_params"])
    scaler = FeatureScaler(
        mean=np.array(payload["feature_scaler"]["mean"], dtype=float),
        scale=np.array(payload["feature_scaler"]["scale"], dtype=float),
    )
    target_scaler = TargetScaler(**payload["target_scaler"])
    data = Dataset(
        np.array(payload["dataset"]["features"], dtype=float),
        np.array(payload["dataset"]["targets"], dtype=float),
    )
    return gp_fit(data, params, feature_scaler=scaler, target_scaler=target_scaler)
