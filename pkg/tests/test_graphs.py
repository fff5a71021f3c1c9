from __future__ import annotations

import numpy as np
import pytest

from mocat.data import DataError
from mocat.graphs import (
    CorrelationGraph,
    PrerequisiteGraph,
    build_correlation_graph,
    count_transitions,
    induce_prerequisite_graph,
    neighbors,
    read_edge_list,
    write_edge_list,
)

from conftest import random_logs, toy_bundle
import oracles


class TestCorrelationGraph:
    def test_neighbours_both_sides(self):
        g = build_correlation_graph([(0,), (1,), (0, 2), (2,)], 3)
        assert neighbors(g, 2, "question") == [0, 2]
        assert neighbors(g, 0, "concept") == [0, 2]
        assert neighbors(g, 2, "concept") == [2, 3]
        assert g.edges().tolist() == [[0, 0], [1, 1], [2, 0], [2, 2], [3, 2]]

    def test_isolated_concept_has_no_neighbours(self):
        g = build_correlation_graph([(0,)], 2)
        assert neighbors(g, 1, "concept") == []

    def test_errors(self):
        g = build_correlation_graph([(0,)], 1)
        with pytest.raises(DataError):
            build_correlation_graph([()], 1)
        with pytest.raises(DataError):
            build_correlation_graph([(3,)], 2)
        with pytest.raises(ValueError):
            neighbors(g, 0)
        with pytest.raises(IndexError):
            neighbors(g, 5, "question")
        with pytest.raises(TypeError):
            neighbors(object(), 0)


class TestPrerequisiteGraph:
    def test_adjacency(self):
        g = PrerequisiteGraph(4, np.array([[0, 1], [2, 1], [1, 3], [0, 1]]))
        assert len(g.edges) == 3
        assert g.out_neighbors(1).tolist() == [3]
        assert g.in_neighbors(1).tolist() == [0, 2]
        assert neighbors(g, 1) == [0, 2, 3]
        assert g.has_edge(0, 1) and not g.has_edge(1, 0)

    def test_rejects_self_loops_and_range(self):
        with pytest.raises(DataError):
            PrerequisiteGraph(2, np.array([[1, 1]]))
        with pytest.raises(DataError):
            PrerequisiteGraph(2, np.array([[0, 2]]))


class TestInduction:
    def test_counts_match_oracle_on_toy(self):
        b = toy_bundle()
        assert count_transitions(b.logs, 3).tolist() == oracles.transition_counts(b.logs, 3)

    def test_hand_computed_counts(self):
        # student 0: q0(c0)=1 -> q1(c1)=1 gives 0->1; q1 -> q2 wrong, stops
        # student 1: q0(c0)=1 -> q3(c2)=1 gives 0->2
        # student 2: q0 wrong, q1 after q0 wrong
        assert count_transitions(toy_bundle().logs, 3).tolist() == [[0, 1, 1], [0, 0, 0], [0, 0, 0]]

    @pytest.mark.parametrize("seed", range(40))
    def test_edges_match_oracle(self, seed):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(2, 7))
        logs, _ = random_logs(rng, int(rng.integers(1, 15)), int(rng.integers(3, 15)), K)
        n = count_transitions(logs, K)
        assert n.tolist() == oracles.transition_counts(logs, K)
        g, m = induce_prerequisite_graph(n)
        assert {tuple(e) for e in g.edges.tolist()} == oracles.induce_edges(n.tolist())

    def test_threshold_is_mean_of_normalised(self):
        n = np.array([[0, 3, 1], [1, 0, 0], [2, 2, 0]])
        g, m = induce_prerequisite_graph(n)
        assert m.threshold == pytest.approx(m.normalized.mean())
        assert m.normalized.min() == 0.0 and m.normalized.max() == 1.0
        assert {tuple(e) for e in g.edges.tolist()} == oracles.induce_edges(n.tolist())

    def test_entry_equal_to_threshold_is_not_above_it(self):
        # normalised entry (1, 3) equals the mean 11/20 exactly, so it is not above it and 3 -> 1 stays one-way
        n = np.array([[0, 5, 3, 3], [5, 0, 4, 3], [1, 3, 0, 3], [6, 4, 5, 0]])
        g, m = induce_prerequisite_graph(n)
        assert m.normalized[1, 3] == pytest.approx(m.threshold)
        assert {tuple(e) for e in g.edges.tolist()} == {(0, 2), (3, 1)} == oracles.induce_edges(n.tolist())

    def test_mutual_edges_dropped(self):
        n = np.array([[0, 5], [5, 0]])
        g, m = induce_prerequisite_graph(n)
        assert m.transition.tolist() == [[0, 1], [1, 0]]
        assert len(g.edges) == 0

    def test_degenerate_is_empty(self, caplog):
        g, m = induce_prerequisite_graph(np.zeros((3, 3), dtype=int))
        assert len(g.edges) == 0 and g.concept_count == 3
        assert "degenerate" in caplog.text

    def test_synthetic_world_gives_one_way_edges(self, small_world):
        b = small_world.bundle
        g, m = induce_prerequisite_graph(count_transitions(b.logs, b.concept_count))
        assert len(g.edges)
        for i, j in g.edges:
            assert m.transition[i, j] == 1 and m.transition[j, i] == 0
            assert not g.has_edge(j, i)


class TestEdgeList:
    def test_round_trip(self, tmp_path):
        qc = [(0,), (1, 2), (2,)]
        cor = build_correlation_graph(qc, 3)
        pre = PrerequisiteGraph(3, np.array([[0, 2], [1, 2]]))
        path = write_edge_list(tmp_path / "e.csv", cor, pre)
        c2, p2 = read_edge_list(path, 3, 3)
        assert isinstance(c2, CorrelationGraph)
        assert c2.edges().tolist() == cor.edges().tolist()
        assert p2.edges.tolist() == pre.edges.tolist()

    def test_bad_rows(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("src,dst,relation\n0,1,xyz\n")
        with pytest.raises(DataError):
            read_edge_list(p, 2, 2)
        p.write_text("a,b\n")
        with pytest.raises(DataError):
            read_edge_list(p, 2, 2)
