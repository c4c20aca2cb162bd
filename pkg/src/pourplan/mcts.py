"""Monte Carlo Tree Search with pluggable uncertainty awareness.

The search operates over an abstract :class:`PlanningDomain` and comes in
three flavors selected by :class:`SearchConfig.variant`:

* ``STANDARD`` — plain UCT selection, keep-all expansion.
* ``UNCERTAINTY_AWARE`` — selection discounts each child's UCT score by a
  softmax weight over the children's model-deviation estimates, and
  expansion randomly discards children whose estimate is above the sibling
  average (a sigmoid keep-probability).  Rollout and backpropagation stay
  uncertainty-unaware.
* ``INFLATED`` — identical to ``STANDARD`` inside the search; the
  conservative bias comes from the domain itself propagating
  ``prediction + w * mde`` (see :func:`inflated_step`), so the tree,
  rewards and terminal checks all see the same inflated model.

All randomness is drawn from a generator seeded by ``rng_seed``; with the
iteration budget the search is a pure function of (domain, root state,
config).
"""

from __future__ import annotations

import json
import math
import time
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Variant",
    "PlanningDomain",
    "SearchNode",
    "SearchConfig",
    "SearchResult",
    "search",
    "run_search",
    "uct_score",
    "softmax_weights",
    "keep_probability",
    "ua_select",
    "ua_expand",
    "simulate",
    "backpropagate",
    "inflated_step",
    "dump_tree",
    "save_tree_json",
]


class Variant(str, Enum):
    """Search flavor; see the module docstring."""

    STANDARD = "standard"
    UNCERTAINTY_AWARE = "uncertainty-aware"
    INFLATED = "inflated"


class PlanningDomain(ABC):
    """Deterministic planning model consumed by the search.

    Rewards attach to transitions ``(state, action, depth)``; the depth of a
    transition is the depth of the node it starts from (the root is depth
    0).  ``model_step`` must be deterministic and reentrant, and
    ``legal_actions`` must be non-empty for non-terminal states.
    """

    @abstractmethod
    def legal_actions(self, state, depth: int) -> Sequence:
        """All actions applicable in ``state`` at tree depth ``depth``."""

    @abstractmethod
    def model_step(self, state, action) -> tuple[Any, float]:
        """Predicted next state and the model-deviation estimate."""

    @abstractmethod
    def reward(self, state, action, depth: int) -> float:
        """Reward of the transition; 0 for non-terminal ones in sparse domains."""

    @abstractmethod
    def is_terminal(self, state, action, depth: int) -> bool:
        """Whether the transition ends the episode."""

    def inflate_state(self, state, amount: float):
        """Shift ``state`` by ``amount`` and clamp to the domain's bounds.

        Only needed for conservative (inflated) propagation; domains with
        non-numeric states may leave it unimplemented.
        """
        raise NotImplementedError("this domain does not support inflated propagation")

    def step_eval(self, state, action, depth: int) -> tuple[Any, float, float, bool]:
        """Next state, mde, reward and terminal flag of one transition.

        Domains whose four primitives share expensive intermediate results
        (e.g. one model prediction) should override this.
        """
        next_state, mde_val = self.model_step(state, action)
        return (
            next_state,
            mde_val,
            self.reward(state, action, depth),
            self.is_terminal(state, action, depth),
        )

    def step_eval_batch(
        self, state, actions: Sequence, depth: int
    ) -> list[tuple[Any, float, float, bool]]:
        """Vectorization hook for evaluating all candidate children at once."""
        return [self.step_eval(state, action, depth) for action in actions]


@dataclass(slots=True)
class SearchNode:
    """One node of the search tree.

    ``mde_val`` and ``gen_reward`` describe the transition
    ``(parent.state, gen_action)`` that produced this node and are fixed at
    creation.
    """

    state: Any
    gen_action: Any = None
    depth: int = 0
    mde_val: float = 0.0
    parent: Optional["SearchNode"] = None
    gen_reward: float = 0.0
    terminal: bool = False
    N: int = 0
    Q: float = 0.0
    children: list["SearchNode"] = field(default_factory=list)
    fully_expanded: bool = False
    # position in parent.children, for O(1) stat updates
    child_index: int = -1
    # softmax weights over the children's mde values, computed lazily once
    # (the child list never changes after expansion)
    delta_cache: Optional[np.ndarray] = field(default=None, repr=False)
    # per-child visit/reward/mde arrays mirroring the children list; kept in
    # sync by backpropagate so selection can run vectorized
    child_N: Optional[np.ndarray] = field(default=None, init=False, repr=False)
    child_Q: Optional[np.ndarray] = field(default=None, init=False, repr=False)
    child_mde: Optional[np.ndarray] = field(default=None, init=False, repr=False)


@dataclass(frozen=True)
class SearchConfig:
    """Tunable knobs of the search.

    Exactly one budget governs termination: the deterministic iteration
    budget by default, or the wall-clock budget when set.
    """

    variant: Variant = Variant.STANDARD
    c_uct: float = math.sqrt(2.0)
    tau: float = 0.1
    steepness: float = 10.0
    inflation_w: float = 2.0
    iteration_budget: int = 2000
    wall_clock_budget: float | None = None
    max_depth: int = 10
    rng_seed: int = 0
    # Flip the expansion filter to favor above-average-uncertainty children
    # (the inverse orientation), exposed for ablation only.
    prefer_high_mde_expansion: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.c_uct <= 0.0:
            raise ValueError("c_uct must be positive")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.steepness < 0.0:
            raise ValueError("steepness must be nonnegative")
        if self.inflation_w < 0.0:
            raise ValueError("inflation_w must be nonnegative")
        if self.iteration_budget < 1:
            raise ValueError("iteration_budget must be a positive integer")
        if self.wall_clock_budget is not None and self.wall_clock_budget <= 0.0:
            raise ValueError("wall_clock_budget must be positive when set")
        if self.max_depth < 1:
            raise ValueError("max_depth must be a positive integer")


@dataclass
class SearchResult:
    """Outcome of one tree search."""

    best_action: Any
    root: SearchNode
    iterations: int


def uct_score(child: SearchNode, parent_n: int, c_uct: float) -> float:
    """Upper-confidence score ``Q/N + c * sqrt(ln(parent_n) / N)``."""
    if child.N < 1 or parent_n < 1:
        raise ValueError(
            f"uct_score requires visited nodes (child.N={child.N}, parent_n={parent_n})"
        )
    return child.Q / child.N + c_uct * math.sqrt(math.log(parent_n) / child.N)


def softmax_weights(mdes: Sequence[float], tau: float) -> np.ndarray:
    """Softmax of ``mdes / tau``, computed with max-subtraction."""
    if len(mdes) == 0:
        raise ValueError("softmax_weights requires a non-empty input")
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    scaled = np.asarray(mdes, dtype=float) / tau
    scaled -= scaled.max()
    weights = np.exp(scaled)
    return weights / weights.sum()


def keep_probability(mde_val: float, theta: float, steepness: float) -> float:
    """Probability of keeping a candidate child during expansion.

    Equals 0.5 at ``mde_val == theta`` and decreases as the child's
    uncertainty rises above the sibling average.
    """
    return float(expit(-steepness * (mde_val - theta)))


def ua_select(parent: SearchNode, config: SearchConfig) -> SearchNode:
    """Pick the child maximizing the (possibly discounted) UCT score.

    Requires every child to have been visited at least once.  Ties break
    toward the lowest ``mde_val``, then toward creation order.
    """
    children = parent.children
    if len(children) == 1:
        return children[0]
    ns = parent.child_N
    if ns is None:
        ns = np.array([float(c.N) for c in children])
        qs = np.array([c.Q for c in children])
    else:
        qs = parent.child_Q
    if parent.N < 1 or ns.min() < 1.0:
        raise ValueError("ua_select requires every child to have been visited")
    scores = qs / ns + config.c_uct * np.sqrt(math.log(parent.N) / ns)
    if config.variant is Variant.UNCERTAINTY_AWARE:
        if parent.delta_cache is None:
            parent.delta_cache = softmax_weights(
                [c.mde_val for c in children], config.tau
            )
        scores *= 1.0 - parent.delta_cache

    best = int(np.argmax(scores))
    ties = np.flatnonzero(scores == scores[best])
    if len(ties) > 1:
        mdes = parent.child_mde
        if mdes is None:
            mdes = np.array([c.mde_val for c in children])
        best = int(ties[np.argmin(mdes[ties])])
    return children[best]


def ua_expand(
    leaf: SearchNode,
    domain: PlanningDomain,
    config: SearchConfig,
    rng: np.random.Generator,
) -> SearchNode:
    """Create the leaf's children and return one kept child at random.

    All candidate children are generated through the domain model.  In the
    uncertainty-aware variant each candidate is kept with
    :func:`keep_probability` relative to the mean candidate mde; if every
    candidate is rejected, the minimum-mde one is kept so the search can
    progress.  Other variants keep all candidates.
    """
    actions = domain.legal_actions(leaf.state, leaf.depth)
    if len(actions) == 0:
        leaf.terminal = True
        return leaf
    evals = domain.step_eval_batch(leaf.state, actions, leaf.depth)
    candidates = [
        SearchNode(
            state=next_state,
            gen_action=action,
            depth=leaf.depth + 1,
            mde_val=mde_val,
            parent=leaf,
            gen_reward=reward,
            terminal=terminal,
        )
        for action, (next_state, mde_val, reward, terminal) in zip(actions, evals)
    ]
    if config.variant is Variant.UNCERTAINTY_AWARE:
        theta = sum(c.mde_val for c in candidates) / len(candidates)
        kept = []
        for cand in candidates:
            p_keep = keep_probability(cand.mde_val, theta, config.steepness)
            if config.prefer_high_mde_expansion:
                p_keep = 1.0 - p_keep
            if rng.random() < p_keep:
                kept.append(cand)
        if not kept:
            kept = [min(candidates, key=lambda c: c.mde_val)]
    else:
        kept = candidates
    for i, child in enumerate(kept):
        child.child_index = i
    leaf.children = kept
    leaf.child_N = np.zeros(len(kept))
    leaf.child_Q = np.zeros(len(kept))
    leaf.child_mde = np.array([c.mde_val for c in kept])
    leaf.fully_expanded = True
    return kept[int(rng.integers(len(kept)))]


def simulate(
    start: SearchNode,
    domain: PlanningDomain,
    config: SearchConfig,
    rng: np.random.Generator,
) -> float:
    """Random rollout from ``start``; returns the accumulated reward.

    A node whose generating transition was terminal contributes that
    transition's reward without stepping.  Otherwise uniformly random legal
    actions are applied through the domain model until a terminal
    transition or the depth cap.
    """
    if start.terminal:
        return start.gen_reward
    total = 0.0
    state = start.state
    depth = start.depth
    while depth <= config.max_depth:
        actions = domain.legal_actions(state, depth)
        if len(actions) == 0:
            break
        action = actions[int(rng.integers(len(actions)))]
        next_state, _, reward, terminal = domain.step_eval(state, action, depth)
        total += reward
        if terminal:
            break
        state = next_state
        depth += 1
    return total


def backpropagate(node: SearchNode, reward: float) -> None:
    """Add one visit and ``reward`` to ``node`` and every ancestor."""
    while node is not None:
        node.N += 1
        node.Q += reward
        parent = node.parent
        if parent is not None and parent.child_N is not None:
            parent.child_N[node.child_index] += 1.0
            parent.child_Q[node.child_index] += reward
        node = parent


def inflated_step(domain: PlanningDomain, state, action, w: float):
    """Conservative propagation: model prediction shifted by ``w * mde``.

    The shift is clamped to the domain's state bounds via
    ``domain.inflate_state``.
    """
    next_state, mde_val = domain.model_step(state, action)
    if w == 0.0:
        return next_state
    return domain.inflate_state(next_state, w * mde_val)


def _select_leaf(root: SearchNode, config: SearchConfig) -> SearchNode:
    node = root
    while node.fully_expanded:
        # unvisited children take priority, in creation order
        i = int(node.child_N.argmin())
        if node.child_N[i] == 0.0:
            return node.children[i]
        node = ua_select(node, config)
    return node


def _most_visited_child(root: SearchNode) -> SearchNode:
    best = None
    for child in root.children:
        if best is None:
            best = child
            continue
        if child.N > best.N:
            best = child
        elif child.N == best.N and best.N > 0:
            if child.Q / child.N > best.Q / best.N:
                best = child
    return best


def run_search(domain: PlanningDomain, root_state, config: SearchConfig) -> SearchResult:
    """Run the full search loop and return the decision with its tree."""
    if len(domain.legal_actions(root_state, 0)) == 0:
        raise ValueError("root state has no legal actions")
    rng = np.random.default_rng(config.rng_seed)
    root = SearchNode(state=root_state)
    deadline = None
    if config.wall_clock_budget is not None:
        deadline = time.monotonic() + config.wall_clock_budget

    iterations = 0
    while True:
        if deadline is None:
            if iterations >= config.iteration_budget:
                break
        elif time.monotonic() >= deadline:
            break
        node = _select_leaf(root, config)
        if not node.terminal and node.N > 0 and node.depth <= config.max_depth:
            node = ua_expand(node, domain, config, rng)
        reward = simulate(node, domain, config, rng)
        backpropagate(node, reward)
        iterations += 1

    if iterations == 0:
        raise TimeoutError("wall-clock budget expired before any search iteration")
    best = _most_visited_child(root)
    if best is None:
        raise RuntimeError(
            f"iteration budget {iterations} too small to expand the root"
        )
    return SearchResult(best_action=best.gen_action, root=root, iterations=iterations)


def search(domain: PlanningDomain, root_state, config: SearchConfig):
    """Return the action generating the most visited root child."""
    return run_search(domain, root_state, config).best_action


def _jsonable(value):
    if is_dataclass(value) and not isinstance(value, type):
        return asdict(value)
    if isinstance(value, (int, float, str, bool)) or value is None:
        return value
    if isinstance(value, np.generic):
        return value.item()
    return repr(value)


def dump_tree(root: SearchNode) -> list[dict]:
    """Flatten a search tree to one record per node (preorder)."""
    records = []
    stack = [root]
    while stack:
        node = stack.pop()
        records.append(
            {
                "depth": node.depth,
                "state": _jsonable(node.state),
                "gen_action": _jsonable(node.gen_action),
                "N": node.N,
                "Q": node.Q,
                "mde_val": node.mde_val,
            }
        )
        stack.extend(reversed(node.children))
    return records


def save_tree_json(root: SearchNode, path) -> None:
    Path(path).write_text(json.dumps(dump_tree(root)), encoding="utf-8")
