"""Bulk-synchronous label propagation over an undirected graph.

The engine runs a fixed number of fully synchronous supersteps.  Within
superstep ``k+1`` every node reads only values from the end of superstep
``k`` (double buffering), so results are deterministic for any degree of
parallelism.  Seed nodes keep their initial values forever; an unlabeled
node activates the first time it has at least one active neighbor, taking
the plain mean of those neighbors' values, and from then on blends its own
value with the active-neighbor mean.  Inactive neighbors never contribute
to sums or denominators.

Three blending strategies are supported:

* ``alpha``  - constant blend: ``y <- a*y + (1-a)*mean``.
* ``beta``   - exponentially decaying neighbor weight: at superstep ``k``
  (1-based) the blend is ``y <- (1-b^k)*y + b^k*mean``, so distant labels
  matter less and less.
* ``gamma``  - per-class accumulators: each class channel grows by
  ``g*mean`` every superstep with no damping of the node's own value, and
  the channels are normalized into a distribution once, after the final
  superstep.  For binary gender the two channels are (male, female) and
  the scalar output is the female share.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ConfigError, ValidationError
from .graph import Graph

__all__ = [
    "AGE_BUCKET_UPPER_BOUNDS",
    "LabelState",
    "NUM_AGE_BUCKETS",
    "PropagationConfig",
    "age_bucket",
    "propagate",
    "propagate_beta",
    "propagate_gamma",
    "propagate_multiclass",
    "propagate_trace",
    "read_seed_labels",
    "read_node_vectors",
    "write_label_state",
]

logger = logging.getLogger(__name__)

# Inclusive upper bound of age buckets 0..5; bucket 6 is open-ended (65+).
AGE_BUCKET_UPPER_BOUNDS = (17, 24, 34, 44, 54, 64)
NUM_AGE_BUCKETS = 7


def age_bucket(age: int) -> int:
    """Map an age in years to one of the 7 bucket indices."""
    if age < 0:
        raise ValidationError(f"age must be non-negative, got {age}")
    for bucket, upper in enumerate(AGE_BUCKET_UPPER_BOUNDS):
        if age <= upper:
            return bucket
    return NUM_AGE_BUCKETS - 1


@dataclass
class PropagationConfig:
    """Strategy choice plus its parameter and the superstep count.

    Only the parameter matching ``strategy`` is read; the others are
    ignored.  Defaults follow the production configuration (constant
    blend, 3 supersteps, own-value weight 0.3).
    """

    strategy: str = "alpha"
    alpha: float = 0.3
    beta: float = 0.8
    gamma: float = 0.9
    iterations: int = 3

    def validate(self) -> None:
        if self.strategy not in ("alpha", "beta", "gamma"):
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.strategy == "alpha" and not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.strategy == "beta" and not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.strategy == "gamma" and not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")


@dataclass
class LabelState:
    """Per-node label vectors plus seed and activation flags.

    ``values`` is ``(n, C)``: C=1 for binary gender (probability of
    female), C=7 for age buckets.  Rows of inactive nodes are zero and
    carry no meaning.  Seed rows never change during propagation.
    """

    values: np.ndarray
    is_seed: np.ndarray
    is_active: np.ndarray

    def __post_init__(self):
        self.is_seed = np.asarray(self.is_seed, dtype=bool)
        self.is_active = np.asarray(self.is_active, dtype=bool)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.values.shape[0] == 1 and self.is_seed.shape[0] != 1:
            self.values = self.values.T
        n = self.values.shape[0]
        if self.is_seed.shape != (n,) or self.is_active.shape != (n,):
            raise ValidationError("label state arrays disagree on node count")
        if (self.is_seed & ~self.is_active).any():
            raise ValidationError("seed nodes must be active")

    @property
    def node_count(self) -> int:
        return self.values.shape[0]

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]

    @property
    def coverage(self) -> float:
        """Fraction of nodes that are active."""
        return float(self.is_active.mean()) if self.node_count else 0.0

    @property
    def seed_count(self) -> int:
        return int(self.is_seed.sum())

    def copy(self) -> "LabelState":
        return LabelState(self.values.copy(), self.is_seed.copy(),
                          self.is_active.copy())

    @classmethod
    def from_seed_values(cls, node_count: int, indices: Iterable[int],
                         values: Iterable[float] | np.ndarray,
                         num_classes: int = 1) -> "LabelState":
        """State with the given nodes seeded; everyone else inactive."""
        idx = np.asarray(list(indices), dtype=np.int64)
        vals = np.zeros((node_count, num_classes))
        seed = np.zeros(node_count, dtype=bool)
        seed[idx] = True
        vals[idx] = np.asarray(values, dtype=np.float64).reshape(len(idx), -1)
        return cls(vals, seed, seed.copy())

    @classmethod
    def from_seed_classes(cls, node_count: int, indices: Iterable[int],
                          classes: Iterable[int],
                          num_classes: int = NUM_AGE_BUCKETS) -> "LabelState":
        """One-hot state for class-indexed seeds."""
        idx = np.asarray(list(indices), dtype=np.int64)
        cls_idx = np.asarray(list(classes), dtype=np.int64)
        if cls_idx.size and (cls_idx.min() < 0 or cls_idx.max() >= num_classes):
            raise ValidationError(
                f"class index out of range [0, {num_classes})")
        vals = np.zeros((node_count, num_classes))
        vals[idx, cls_idx] = 1.0
        seed = np.zeros(node_count, dtype=bool)
        seed[idx] = True
        return cls(vals, seed, seed.copy())


def _neighbor_means(g: Graph, values: np.ndarray, active: np.ndarray):
    """Mean of active neighbors' values per node.

    Returns ``(means, has_active_neighbor)``; rows without an active
    neighbor are zero.  Accumulation order is fixed by the CSR layout, so
    the result is bit-identical across runs.
    """
    n = g.node_count
    nbr = g.indices
    live = active[nbr]
    src_live = g.arc_sources[live]
    counts = np.bincount(src_live, minlength=n).astype(np.float64)
    has = counts > 0
    live_vals = values[nbr[live]]
    means = np.zeros_like(values)
    for c in range(values.shape[1]):
        sums = np.bincount(src_live, weights=live_vals[:, c], minlength=n)
        np.divide(sums, counts, out=means[:, c], where=has)
    return means, has


def _check_inputs(g: Graph, seeds: LabelState, iterations: int) -> None:
    if g.node_count == 0:
        raise ValidationError("graph has no nodes")
    if seeds.node_count != g.node_count:
        raise ValidationError(
            f"seed state covers {seeds.node_count} nodes, graph has {g.node_count}")
    if not seeds.is_seed.any():
        raise ConfigError("propagation requires at least one seed node")
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")


SuperstepHook = Callable[[int, LabelState], None]


def _run_blended(g: Graph, seeds: LabelState, weights: list[float],
                 on_superstep: SuperstepHook | None = None) -> LabelState:
    """Shared engine for the alpha and beta strategies.

    ``weights[k-1]`` is the neighbor-mean weight at superstep ``k``; the
    node keeps ``1 - w`` of its own value.  First activation always takes
    the plain neighbor mean.
    """
    values = np.where(seeds.is_active[:, None], seeds.values, 0.0)
    active = seeds.is_active.copy()
    movable = ~seeds.is_seed
    for k, w in enumerate(weights, start=1):
        means, has = _neighbor_means(g, values, active)
        blend = movable & active & has
        first = movable & ~active & has
        new_values = values.copy()
        new_values[blend] = (1.0 - w) * values[blend] + w * means[blend]
        new_values[first] = means[first]
        if logger.isEnabledFor(logging.DEBUG) and blend.any():
            delta = np.abs(new_values[blend] - values[blend]).max()
            logger.debug("superstep %d: max delta %.3e, %d newly active",
                         k, delta, int(first.sum()))
        values = new_values
        active = active | has
        if on_superstep is not None:
            on_superstep(k, LabelState(values.copy(), seeds.is_seed.copy(),
                                       active.copy()))
    return LabelState(values, seeds.is_seed.copy(), active)


def _finalize_accumulators(acc: np.ndarray, active: np.ndarray,
                           seeds: LabelState) -> LabelState:
    """Normalize accumulator rows into distributions; seeds pass through."""
    out = np.zeros_like(acc)
    mass = acc.sum(axis=1)
    rows = active & (mass > 0)
    out[rows] = acc[rows] / mass[rows, None]
    out[seeds.is_seed] = seeds.values[seeds.is_seed]
    return LabelState(out, seeds.is_seed.copy(), active.copy())


def _run_additive(g: Graph, seeds: LabelState, gamma: float, iterations: int,
                  on_superstep: SuperstepHook | None = None) -> LabelState:
    """Accumulator engine for the gamma strategy (any channel count)."""
    acc = np.where(seeds.is_active[:, None], seeds.values, 0.0)
    active = seeds.is_active.copy()
    movable = ~seeds.is_seed
    for k in range(1, iterations + 1):
        means, has = _neighbor_means(g, acc, active)
        grow = movable & has
        acc = acc.copy()
        acc[grow] += gamma * means[grow]
        active = active | (acc.sum(axis=1) > 0)
        if on_superstep is not None:
            on_superstep(k, _finalize_accumulators(acc, active, seeds))
    return _finalize_accumulators(acc, active, seeds)


def propagate(g: Graph, seeds: LabelState, cfg: PropagationConfig,
              on_superstep: SuperstepHook | None = None) -> LabelState:
    """Run ``cfg.iterations`` synchronous supersteps from the seed state.

    Returns the final state; activation coverage is available as
    ``state.coverage``.  The gamma strategy requires scalar binary seeds
    with values in {0, 1} and returns the female-share scalar.
    """
    cfg.validate()
    _check_inputs(g, seeds, cfg.iterations)
    if cfg.strategy == "alpha":
        weights = [1.0 - cfg.alpha] * cfg.iterations
        return _run_blended(g, seeds, weights, on_superstep)
    if cfg.strategy == "beta":
        weights = [cfg.beta ** k for k in range(1, cfg.iterations + 1)]
        return _run_blended(g, seeds, weights, on_superstep)
    return propagate_gamma(g, seeds, cfg.gamma, cfg.iterations, on_superstep)


def propagate_beta(g: Graph, seeds: LabelState, beta: float,
                   iterations: int) -> LabelState:
    """Exponential-decay variant: neighbor weight ``beta**k`` at superstep k."""
    cfg = PropagationConfig(strategy="beta", beta=beta, iterations=iterations)
    return propagate(g, seeds, cfg)


def propagate_gamma(g: Graph, seeds: LabelState, gamma: float, iterations: int,
                    on_superstep: SuperstepHook | None = None) -> LabelState:
    """Two-channel accumulator variant for binary gender.

    Seeds must be scalar values in {0, 1} (female = 1).  Internally each
    node carries (male, female) accumulators; seeds hold a fixed one-hot
    pair and are excluded from the final normalization.  A node becomes
    active only once it has accumulated nonzero mass, so ``gamma = 0``
    leaves every non-seed inactive.
    """
    if not 0.0 <= gamma < 1.0:
        raise ConfigError(f"gamma must lie in [0, 1), got {gamma}")
    _check_inputs(g, seeds, iterations)
    if seeds.num_classes != 1:
        raise ValidationError("gamma strategy needs scalar binary seeds")
    seed_vals = seeds.values[seeds.is_seed, 0]
    if not np.isin(seed_vals, (0.0, 1.0)).all():
        raise ValidationError("gamma strategy needs seed values in {0, 1}")
    female = seeds.values[:, 0]
    two_channel = LabelState(
        np.stack([np.where(seeds.is_active, 1.0 - female, 0.0),
                  np.where(seeds.is_active, female, 0.0)], axis=1),
        seeds.is_seed.copy(), seeds.is_active.copy())

    def scalar(state: LabelState) -> LabelState:
        return LabelState(state.values[:, 1:2].copy(), state.is_seed,
                          state.is_active)

    hook = None
    if on_superstep is not None:
        hook = lambda k, state: on_superstep(k, scalar(state))
    result = _run_additive(g, two_channel, gamma, iterations, hook)
    return scalar(result)


def propagate_multiclass(g: Graph, seed_classes: Mapping[int, int] | np.ndarray,
                         cfg: PropagationConfig,
                         num_classes: int = NUM_AGE_BUCKETS) -> LabelState:
    """Propagate one-hot class seeds over ``num_classes`` channels.

    ``seed_classes`` is either a mapping of node index to class index or a
    per-node array with -1 marking unlabeled nodes.  All channels share one
    superstep schedule, which for the blended strategies is equivalent to
    running each channel as an independent scalar propagation.  Under the
    gamma strategy the channels accumulate independently and the final
    vector is normalized to sum to 1.
    """
    cfg.validate()
    if isinstance(seed_classes, Mapping):
        idx = np.fromiter(seed_classes.keys(), dtype=np.int64,
                          count=len(seed_classes))
        classes = np.fromiter(seed_classes.values(), dtype=np.int64,
                              count=len(seed_classes))
    else:
        arr = np.asarray(seed_classes, dtype=np.int64)
        idx = np.flatnonzero(arr >= 0)
        classes = arr[idx]
    seeds = LabelState.from_seed_classes(g.node_count, idx, classes,
                                         num_classes=num_classes)
    if cfg.strategy == "gamma":
        _check_inputs(g, seeds, cfg.iterations)
        return _run_additive(g, seeds, cfg.gamma, cfg.iterations)
    return propagate(g, seeds, cfg)


def propagate_trace(g: Graph, seeds: LabelState, cfg: PropagationConfig,
                    checkpoints: Iterable[int]) -> dict[int, LabelState]:
    """Snapshot the state at several superstep counts in one pass.

    A run of K supersteps passes through the states of every shorter run
    (the update rule depends only on the superstep index), so
    ``trace[k]`` equals ``propagate`` with ``iterations=k`` exactly.
    """
    wanted = sorted(set(int(k) for k in checkpoints))
    if not wanted or wanted[0] < 1:
        raise ConfigError("checkpoints must be positive superstep counts")
    wanted_set = set(wanted)
    snapshots: dict[int, LabelState] = {}

    def keep(k: int, state: LabelState) -> None:
        if k in wanted_set:
            snapshots[k] = state

    run_cfg = PropagationConfig(strategy=cfg.strategy, alpha=cfg.alpha,
                                beta=cfg.beta, gamma=cfg.gamma,
                                iterations=wanted[-1])
    propagate(g, seeds, run_cfg, on_superstep=keep)
    return snapshots


# ---------------------------------------------------------------------------
# Text I/O: seed files and propagated-state files.
# ---------------------------------------------------------------------------

def read_seed_labels(path, g: Graph, num_classes: int = 1,
                     ages: bool = False) -> LabelState:
    """Read ``<name><TAB><value-or-class>`` seed lines into a LabelState.

    Binary mode (``num_classes=1``) accepts reals in [0, 1]; class mode
    accepts bucket indices, or raw ages when ``ages`` is set.  Names
    missing from the graph are skipped (their count is logged).
    """
    indices: list[int] = []
    scalar_values: list[float] = []
    classes: list[int] = []
    skipped = 0
    seen: set[int] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) != 2:
                raise ValidationError(
                    f"{path}:{line_no}: expected 2 tokens, got {len(tokens)}")
            name, raw = tokens
            if name not in g:
                skipped += 1
                continue
            v = g.index_of(name)
            if v in seen:
                raise ValidationError(f"{path}:{line_no}: duplicate seed {name!r}")
            seen.add(v)
            indices.append(v)
            if num_classes == 1:
                try:
                    value = float(raw)
                except ValueError as exc:
                    raise ValidationError(
                        f"{path}:{line_no}: bad label value {raw!r}") from exc
                if not 0.0 <= value <= 1.0 or math.isnan(value):
                    raise ValidationError(
                        f"{path}:{line_no}: binary label must lie in [0, 1]")
                scalar_values.append(value)
            else:
                try:
                    number = int(raw)
                except ValueError as exc:
                    raise ValidationError(
                        f"{path}:{line_no}: bad class value {raw!r}") from exc
                classes.append(age_bucket(number) if ages else number)
    if skipped:
        logger.info("skipped %d seed labels for nodes missing from the graph",
                    skipped)
    if not indices:
        raise ConfigError(f"{path}: no usable seed labels")
    if num_classes == 1:
        return LabelState.from_seed_values(g.node_count, indices, scalar_values)
    return LabelState.from_seed_classes(g.node_count, indices, classes,
                                        num_classes=num_classes)


def write_label_state(path, g: Graph, state: LabelState,
                      emit_inactive: bool = False) -> None:
    """Write ``<name><TAB><v0>[,v1..]`` rows with 17 significant digits.

    Inactive nodes are omitted unless ``emit_inactive`` is set, in which
    case they appear with ``nan`` in every channel.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for v in range(state.node_count):
            if state.is_active[v]:
                row = ",".join(f"{x:.17g}" for x in state.values[v])
            elif emit_inactive:
                row = ",".join(["nan"] * state.num_classes)
            else:
                continue
            fh.write(f"{g.names[v]}\t{row}\n")


def read_node_vectors(path) -> dict[str, np.ndarray]:
    """Read the ``write_label_state`` format back as name -> vector."""
    out: dict[str, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split("\t")
            if len(tokens) != 2:
                raise ValidationError(
                    f"{path}:{line_no}: expected 2 tab-separated fields")
            try:
                out[tokens[0]] = np.array([float(x) for x in tokens[1].split(",")])
            except ValueError as exc:
                raise ValidationError(
                    f"{path}:{line_no}: bad vector {tokens[1]!r}") from exc
    return out
