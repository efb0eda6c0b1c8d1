"""Ensemble propagation features.

The labeled nodes are split uniformly at random into N partitions and one
propagation is run per partition, seeded only by that partition's labels.
A node's feature vector collects its value from each run.  For a labeled
node the entry of its own partition would leak its true label (the run was
seeded with it), so that entry is replaced by the mean of the other runs'
values at the node.  Entries from runs that never reached the node are
masked; the leave-out mean uses only unmasked entries.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .graph import Graph
from .labelprop import LabelState, PropagationConfig, propagate

__all__ = [
    "LPFeatureBlock",
    "PartitionPlan",
    "lp_features",
    "make_partitions",
    "write_lp_csv",
]

logger = logging.getLogger(__name__)

# Imputation value for masked entries in emitted feature rows: the
# maximum-entropy label, paired with a 0/1 presence indicator column.
MASKED_FILL = 0.5


@dataclass
class PartitionPlan:
    """Assignment of every labeled node to exactly one partition."""

    n_partitions: int
    assignment: dict[int, int]
    rng_seed: int

    def members(self, i: int) -> list[int]:
        return sorted(v for v, p in self.assignment.items() if p == i)


def make_partitions(labeled, n_partitions: int, rng_seed: int) -> PartitionPlan:
    """Uniform random balanced split of the labeled nodes.

    Deterministic for a given seed and labeled set (input order is
    irrelevant); partition sizes differ by at most one.
    """
    nodes = np.unique(np.asarray(list(labeled), dtype=np.int64))
    if n_partitions < 2:
        raise ConfigError(f"need at least 2 partitions, got {n_partitions}")
    if n_partitions > len(nodes):
        raise ConfigError(
            f"{n_partitions} partitions for only {len(nodes)} labeled nodes")
    perm = np.random.default_rng(rng_seed).permutation(nodes)
    assignment = {int(v): i % n_partitions for i, v in enumerate(perm)}
    return PartitionPlan(n_partitions, assignment, rng_seed)


@dataclass
class LPFeatureBlock:
    """Per-node feature rows from N propagation runs.

    ``values`` is ``(n, N*C)``; ``present`` is ``(n, N)`` and marks which
    run contributed a real value (False entries of ``values`` are zero and
    meaningless until imputed for emission).
    """

    values: np.ndarray
    present: np.ndarray
    n_partitions: int
    n_classes: int

    @property
    def node_count(self) -> int:
        return self.values.shape[0]

    def run_values(self, i: int) -> np.ndarray:
        """The (n, C) slice contributed by run ``i``."""
        c = self.n_classes
        return self.values[:, i * c:(i + 1) * c]

    def column_names(self, prefix: str = "lp") -> list[str]:
        if self.n_classes == 1:
            return [f"{prefix}_{i}" for i in range(self.n_partitions)]
        return [f"{prefix}_{i}_{c}" for i in range(self.n_partitions)
                for c in range(self.n_classes)]

    def presence_names(self, prefix: str = "lp") -> list[str]:
        return [f"{prefix}_present_{i}" for i in range(self.n_partitions)]

    def imputed(self) -> np.ndarray:
        """Fixed-width rows with masked entries filled with 0.5."""
        out = self.values.copy()
        mask = np.repeat(self.present, self.n_classes, axis=1)
        out[~mask] = MASKED_FILL
        return out


def lp_features(g: Graph, labels: LabelState, plan: PartitionPlan,
                cfg: PropagationConfig) -> LPFeatureBlock:
    """Run one propagation per partition and assemble feature rows.

    ``plan`` must cover exactly the seed set of ``labels``.  For node u
    labeled in partition i, entry i is replaced by the mean of the other
    runs' unmasked values at u; if every other run missed u the entry
    stays masked (that is data sparsity, not an error).
    """
    cfg.validate()
    seed_idx = np.flatnonzero(labels.is_seed)
    if set(plan.assignment) != set(int(v) for v in seed_idx):
        raise ValidationError("partition plan must cover exactly the seed set")
    n, n_classes = g.node_count, labels.num_classes
    runs: list[LabelState] = []
    for i in range(plan.n_partitions):
        part = plan.members(i)
        sub = LabelState.from_seed_values(n, part, labels.values[part],
                                          num_classes=n_classes)
        runs.append(propagate(g, sub, cfg))
    raw = np.stack([r.values for r in runs], axis=1)        # (n, N, C)
    present = np.stack([r.is_active for r in runs], axis=1)  # (n, N)
    values = raw.copy()
    for u, i in plan.assignment.items():
        others = [j for j in range(plan.n_partitions) if j != i and present[u, j]]
        if others:
            values[u, i] = raw[u, others].mean(axis=0)
            present[u, i] = True
        else:
            values[u, i] = 0.0
            present[u, i] = False
    if not present.any(axis=1).all():
        logger.info("%d nodes were reached by no run and are fully masked",
                    int((~present.any(axis=1)).sum()))
    return LPFeatureBlock(values.reshape(n, plan.n_partitions * n_classes),
                          present, plan.n_partitions, n_classes)


def write_lp_csv(block: LPFeatureBlock, g: Graph, path,
                 include_presence: bool = True) -> None:
    """Emit fixed-width feature rows for every node, masked entries imputed."""
    values = block.imputed()
    header = ["node"] + block.column_names()
    if include_presence:
        header += block.presence_names()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for v in range(block.node_count):
            row = [g.names[v]] + [f"{x:.17g}" for x in values[v]]
            if include_presence:
                row += [str(int(x)) for x in block.present[v]]
            writer.writerow(row)
