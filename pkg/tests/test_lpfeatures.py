"""Partitioned propagation features and the leave-partition-out rule."""

from __future__ import annotations

import numpy as np
import pytest

from demograph.errors import ConfigError, ValidationError
from demograph.graph import Graph
from demograph.labelprop import LabelState, PropagationConfig, propagate
from demograph.lpfeatures import lp_features, make_partitions, write_lp_csv
from demograph.model import FeatureMatrix

from conftest import random_binary_seeds, random_graph


def seeded_state(n, mapping):
    return LabelState.from_seed_values(n, list(mapping), list(mapping.values()))


class TestMakePartitions:
    def test_nine_into_three_is_balanced(self):
        plan = make_partitions(range(9), 3, rng_seed=1)
        sizes = [len(plan.members(i)) for i in range(3)]
        assert sizes == [3, 3, 3]

    def test_deterministic_for_seed(self):
        a = make_partitions(range(20), 4, rng_seed=7)
        b = make_partitions(list(reversed(range(20))), 4, rng_seed=7)
        assert a.assignment == b.assignment

    def test_ten_into_three_sizes(self):
        plan = make_partitions(range(10), 3, rng_seed=3)
        sizes = sorted(len(plan.members(i)) for i in range(3))
        assert sizes == [3, 3, 4]

    def test_every_node_assigned_once(self):
        plan = make_partitions(range(17), 5, rng_seed=0)
        assert sorted(plan.assignment) == list(range(17))
        assert set(plan.assignment.values()) == set(range(5))

    def test_too_many_partitions_rejected(self):
        with pytest.raises(ConfigError):
            make_partitions(range(3), 4, rng_seed=0)

    def test_single_partition_rejected(self):
        with pytest.raises(ConfigError):
            make_partitions(range(5), 1, rng_seed=0)


class TestLPFeatures:
    def run_reference(self, g, labels, plan, cfg):
        """Independent per-partition runs used as the oracle."""
        outs = []
        for i in range(plan.n_partitions):
            part = plan.members(i)
            sub = LabelState.from_seed_values(
                g.node_count, part, labels.values[part],
                num_classes=labels.num_classes)
            outs.append(propagate(g, sub, cfg))
        return outs

    def test_unlabeled_rows_pass_through(self, rng):
        g, _ = random_graph(rng, 20, 0.25)
        seeds, _ = random_binary_seeds(rng, 20, 9)
        plan = make_partitions(np.flatnonzero(seeds.is_seed), 3, rng_seed=2)
        cfg = PropagationConfig(alpha=0.3, iterations=3)
        block = lp_features(g, seeds, plan, cfg)
        runs = self.run_reference(g, seeds, plan, cfg)
        for u in range(20):
            if seeds.is_seed[u]:
                continue
            for i, run in enumerate(runs):
                if run.is_active[u]:
                    assert block.present[u, i]
                    assert block.values[u, i] == run.values[u, 0]
                else:
                    assert not block.present[u, i]

    def test_leave_out_mean_for_labeled_rows(self, rng):
        g, _ = random_graph(rng, 20, 0.25)
        seeds, _ = random_binary_seeds(rng, 20, 9)
        plan = make_partitions(np.flatnonzero(seeds.is_seed), 3, rng_seed=2)
        cfg = PropagationConfig(alpha=0.3, iterations=3)
        block = lp_features(g, seeds, plan, cfg)
        runs = self.run_reference(g, seeds, plan, cfg)
        for u, i in plan.assignment.items():
            others = [runs[j].values[u, 0] for j in range(3)
                      if j != i and runs[j].is_active[u]]
            if others:
                assert block.values[u, i] == pytest.approx(
                    float(np.mean(others)), abs=1e-15)
            else:
                assert not block.present[u, i]

    def test_two_partitions_leave_out_is_single_run(self):
        # Path s0 - u - s1; two partitions of one seed each: the left-out
        # entry equals the single other run's value at the node.
        g = Graph.build(["s0", "u", "s1"], [(0, 1), (1, 2)])
        labels = seeded_state(3, {0: 1.0, 2: 0.0})
        plan = make_partitions([0, 2], 2, rng_seed=0)
        cfg = PropagationConfig(alpha=0.5, iterations=2)
        block = lp_features(g, labels, plan, cfg)
        runs = self.run_reference(g, labels, plan, cfg)
        for u, i in plan.assignment.items():
            other = 1 - i
            assert block.values[u, i] == runs[other].values[u, 0]

    def test_no_self_leakage_under_seed_perturbation(self, rng):
        g, _ = random_graph(rng, 24, 0.2)
        idx = rng.choice(24, size=9, replace=False)
        values = rng.random(9)
        labels = LabelState.from_seed_values(24, idx, values)
        plan = make_partitions(idx, 3, rng_seed=5)
        cfg = PropagationConfig(alpha=0.3, iterations=3)
        base = lp_features(g, labels, plan, cfg)
        u = int(idx[0])
        perturbed_values = values.copy()
        perturbed_values[0] = 1.0 - perturbed_values[0]
        perturbed = lp_features(
            g, LabelState.from_seed_values(24, idx, perturbed_values), plan, cfg)
        # Every entry of u's own row is independent of u's seed value: run
        # i never reads it for the substitution, and runs j != i never see
        # u as a seed at all.
        assert np.array_equal(base.values[u], perturbed.values[u])
        assert np.array_equal(base.present[u], perturbed.present[u])

    def test_permuting_partition_indices_permutes_columns(self, rng):
        g, _ = random_graph(rng, 18, 0.3)
        seeds, _ = random_binary_seeds(rng, 18, 6)
        plan = make_partitions(np.flatnonzero(seeds.is_seed), 3, rng_seed=1)
        cfg = PropagationConfig(alpha=0.3, iterations=2)
        block = lp_features(g, seeds, plan, cfg)
        perm = [2, 0, 1]
        from demograph.lpfeatures import PartitionPlan
        permuted_plan = PartitionPlan(
            3, {u: perm[i] for u, i in plan.assignment.items()}, plan.rng_seed)
        permuted = lp_features(g, seeds, permuted_plan, cfg)
        for old, new in enumerate(perm):
            assert np.array_equal(block.values[:, old], permuted.values[:, new])
            assert np.array_equal(block.present[:, old], permuted.present[:, new])

    def test_identical_seed_runs_make_equal_columns(self, rng):
        # Degenerate check: N runs from the same seed set agree exactly,
        # so passthrough columns are all equal.
        g, _ = random_graph(rng, 15, 0.3)
        seeds, _ = random_binary_seeds(rng, 15, 5)
        cfg = PropagationConfig(alpha=0.3, iterations=3)
        outs = [propagate(g, seeds, cfg) for _ in range(3)]
        for other in outs[1:]:
            assert np.array_equal(outs[0].values, other.values)

    def test_unreached_nodes_fully_masked(self):
        # Two components; seeds only in the first.  The second component
        # is missed by every run.
        g = Graph.build(["a", "b", "x", "y"], [(0, 1), (2, 3)])
        labels = seeded_state(4, {0: 1.0, 1: 0.0})
        plan = make_partitions([0, 1], 2, rng_seed=0)
        block = lp_features(g, labels, plan,
                            PropagationConfig(alpha=0.3, iterations=3))
        assert not block.present[2].any()
        assert not block.present[3].any()
        assert block.imputed()[2].tolist() == [0.5, 0.5]

    def test_plan_must_cover_seed_set(self, rng):
        g, _ = random_graph(rng, 10, 0.4)
        seeds, _ = random_binary_seeds(rng, 10, 4)
        wrong = make_partitions(range(3), 2, rng_seed=0)
        with pytest.raises(ValidationError):
            lp_features(g, seeds, wrong, PropagationConfig(iterations=1))

    def test_multiclass_block_shape_and_leave_out(self, rng):
        g, _ = random_graph(rng, 16, 0.3)
        idx = rng.choice(16, size=6, replace=False)
        classes = rng.integers(0, 7, size=6)
        labels = LabelState.from_seed_classes(16, idx, classes)
        plan = make_partitions(idx, 3, rng_seed=4)
        cfg = PropagationConfig(alpha=0.3, iterations=2)
        block = lp_features(g, labels, plan, cfg)
        assert block.values.shape == (16, 3 * 7)
        assert len(block.column_names()) == 21
        runs = self.run_reference(g, labels, plan, cfg)
        for u, i in plan.assignment.items():
            others = [runs[j].values[u] for j in range(3)
                      if j != i and runs[j].is_active[u]]
            if others:
                got = block.run_values(i)[u]
                assert np.allclose(got, np.mean(others, axis=0), atol=1e-15)


class TestCSV:
    def test_header_and_round_trip(self, tmp_path, rng):
        g, _ = random_graph(rng, 12, 0.3)
        seeds, _ = random_binary_seeds(rng, 12, 6)
        plan = make_partitions(np.flatnonzero(seeds.is_seed), 3, rng_seed=0)
        block = lp_features(g, seeds, plan,
                            PropagationConfig(alpha=0.3, iterations=3))
        out = tmp_path / "lp.csv"
        write_lp_csv(block, g, out)
        fm = FeatureMatrix.from_csv(out)
        assert fm.columns == ["lp_0", "lp_1", "lp_2",
                              "lp_present_0", "lp_present_1", "lp_present_2"]
        assert fm.nodes == g.names
        assert np.array_equal(fm.values[:, :3], block.imputed())
        assert np.array_equal(fm.values[:, 3:], block.present.astype(float))

    def test_presence_columns_optional(self, tmp_path, rng):
        g, _ = random_graph(rng, 10, 0.3)
        seeds, _ = random_binary_seeds(rng, 10, 4)
        plan = make_partitions(np.flatnonzero(seeds.is_seed), 2, rng_seed=0)
        block = lp_features(g, seeds, plan,
                            PropagationConfig(alpha=0.3, iterations=2))
        out = tmp_path / "lp.csv"
        write_lp_csv(block, g, out, include_presence=False)
        fm = FeatureMatrix.from_csv(out)
        assert fm.columns == ["lp_0", "lp_1"]
