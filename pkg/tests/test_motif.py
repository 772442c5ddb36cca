"""Catalog generation, canonical typing, windowed enumeration, analysis stats."""

from itertools import permutations

import numpy as np
import pytest

from tmgad import motif
from tmgad.txgraph import build_graph

from oracles import (brute_force_instances, index_as_sets, orbit_count_focal_rooted,
                     orbit_count_unrooted, pearson_two_pass, permute_sequence,
                     random_graph)


@pytest.fixture(scope="module")
def rooted():
    return motif.build_catalog(motif.FOCAL_ROOTED)


@pytest.fixture(scope="module")
def unrooted():
    return motif.build_catalog(motif.UNROOTED)


class TestCatalog:
    def test_sizes_match_orbit_oracle(self, rooted, unrooted):
        assert unrooted.size == orbit_count_unrooted() == 32
        assert rooted.size == orbit_count_focal_rooted() == 96

    def test_every_spanning_sequence_maps(self, rooted, unrooted):
        seqs = motif.spanning_sequences()
        assert len(seqs) == 192
        for seq in seqs:
            motif.canonical_type(seq, None, motif.UNROOTED, unrooted)
            for focal in range(3):
                motif.canonical_type(seq, focal, motif.FOCAL_ROOTED, rooted)

    def test_two_node_encoding_absent(self, unrooted):
        assert ((0, 1), (0, 1), (0, 1)) not in unrooted.types

    def test_no_duplicates_and_sorted(self, rooted, unrooted):
        for cat in (rooted, unrooted):
            assert len(set(cat.types)) == len(cat.types)
            assert list(cat.types) == sorted(cat.types)

    def test_unknown_mode_rejected(self):
        with pytest.raises(motif.MotifError):
            motif.build_catalog("sideways")


class TestCanonicalType:
    def test_isomorphism_invariance(self, unrooted):
        a = motif.canonical_type(((7, 8), (8, 9), (9, 7)), None, motif.UNROOTED, unrooted)
        b = motif.canonical_type(((1, 5), (5, 3), (3, 1)), None, motif.UNROOTED, unrooted)
        assert a == b

    def test_direction_asymmetry(self, unrooted):
        cycle = motif.canonical_type(((0, 1), (1, 2), (2, 0)), None, motif.UNROOTED, unrooted)
        other = motif.canonical_type(((0, 1), (2, 1), (2, 0)), None, motif.UNROOTED, unrooted)
        assert cycle != other

    def test_relabeling_soundness(self, rooted, unrooted):
        rng = np.random.default_rng(0)
        for _ in range(40):
            seq = motif.spanning_sequences()[rng.integers(0, 192)]
            base_u = motif.canonical_type(seq, None, motif.UNROOTED, unrooted)
            for perm in permutations(range(3)):
                assert motif.canonical_type(permute_sequence(seq, perm), None,
                                            motif.UNROOTED, unrooted) == base_u
            focal = int(rng.integers(0, 3))
            base_r = motif.canonical_type(seq, focal, motif.FOCAL_ROOTED, rooted)
            for perm in permutations(range(3)):
                assert motif.canonical_type(permute_sequence(seq, perm), perm[focal],
                                            motif.FOCAL_ROOTED, rooted) == base_r

    def test_rooted_distinguishes_focal_role(self, rooted):
        seq = ((0, 1), (1, 2), (0, 2))
        ids = {motif.canonical_type(seq, f, motif.FOCAL_ROOTED, rooted) for f in range(3)}
        assert len(ids) == 3

    def test_errors(self, rooted):
        with pytest.raises(motif.MotifError, match="3 nodes"):
            motif.canonical_type(((0, 1), (1, 0), (0, 1)), 0, motif.FOCAL_ROOTED, rooted)
        with pytest.raises(motif.MotifError, match="focal"):
            motif.canonical_type(((0, 1), (1, 2), (2, 0)), 9, motif.FOCAL_ROOTED, rooted)


class TestEnumerate:
    def test_star_example(self, rooted):
        g = build_graph(3, [0, 0, 1], [1, 2, 2], [1, 2, 3])
        insts = motif.enumerate_instances(g, 0, 10.0, rooted)
        assert len(insts) == 1
        inst = insts[0]
        assert rooted.types[inst.type_id] == (((0, 1), (0, 2), (1, 2)), 0)
        assert inst.t_max == 3

    def test_window_excludes_late_edge(self, rooted):
        g = build_graph(3, [0, 0, 1], [1, 2, 2], [1, 2, 3])
        assert motif.enumerate_instances(g, 0, 1.5, rooted) == []

    def test_isolated_node_empty(self, rooted):
        g = build_graph(4, [0, 1], [1, 2], [1, 2])
        assert motif.enumerate_instances(g, 3, 5.0, rooted) == []

    def test_bad_delta(self, rooted):
        g = build_graph(3, [0], [1], [1])
        with pytest.raises(motif.MotifError):
            motif.enumerate_instances(g, 0, 0.0, rooted)

    def test_matches_bruteforce_oracle(self, rooted):
        rng = np.random.default_rng(10)
        for _ in range(20):
            g = random_graph(rng, max_nodes=9, max_edges=26, max_ts=40)
            delta = float(rng.uniform(1.0, 45.0))
            windows = {v: delta for v in range(g.n)}
            want = brute_force_instances(g, rooted, windows)
            for v in range(g.n):
                got = {(m.edges, m.type_id)
                       for m in motif.enumerate_instances(g, v, delta, rooted)}
                assert got == want[v], f"node {v} delta {delta}"

    def test_repeated_pair_instances_allowed(self, rooted):
        # two parallel 0->1 plus 1->2 spans three nodes
        g = build_graph(3, [0, 0, 1], [1, 1, 2], [1, 2, 3])
        insts = motif.enumerate_instances(g, 0, 10.0, rooted)
        assert len(insts) == 1
        assert insts[0].edges == (0, 1, 2)


class TestIndex:
    def make_graph(self):
        rng = np.random.default_rng(21)
        return random_graph(rng, max_nodes=10, max_edges=30, max_ts=40)

    def test_full_window_matches_oracle(self, rooted):
        g = self.make_graph()
        tau = float(g.tau_max)
        windows = np.full(g.n, tau)
        idx = motif.build_index(g, windows, rooted, nodes=np.arange(g.n), cap=None)
        want = brute_force_instances(g, rooted, {v: tau for v in range(g.n)})
        assert index_as_sets(idx) == want

    def test_epsilon_window_empty(self, rooted):
        g = self.make_graph()
        idx = motif.build_index(g, np.full(g.n, 1e-9), rooted, nodes=np.arange(g.n))
        assert idx.total_instances() == 0

    def test_window_monotonicity(self, rooted):
        g = self.make_graph()
        small = motif.build_index(g, np.full(g.n, 10.0), rooted,
                                  nodes=np.arange(g.n), cap=None)
        large = motif.build_index(g, np.full(g.n, 20.0), rooted,
                                  nodes=np.arange(g.n), cap=None)
        s, l = index_as_sets(small), index_as_sets(large)
        for v in s:
            assert s[v] <= l[v]

    def test_out_of_bounds_window_names_node(self, rooted):
        g = self.make_graph()
        windows = np.full(g.n, float(g.tau_max))
        windows[3] = g.tau_max * 2.0
        with pytest.raises(motif.MotifError, match="node 3"):
            motif.build_index(g, windows, rooted, nodes=np.arange(g.n))

    def test_no_duplicate_triples(self, rooted):
        g = self.make_graph()
        idx = motif.build_index(g, np.full(g.n, float(g.tau_max)), rooted,
                                nodes=np.arange(g.n), cap=None)
        for v, types in idx.per_node.items():
            triples = [m.edges for lst in types.values() for m in lst]
            assert len(triples) == len(set(triples))

    def test_serialized_index_deterministic(self, rooted, tmp_path):
        g = self.make_graph()
        windows = np.full(g.n, float(g.tau_max) / 2)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        motif.write_index_csv(motif.build_index(g, windows, rooted,
                                                nodes=np.arange(g.n)), p1)
        motif.write_index_csv(motif.build_index(g, windows, rooted,
                                                nodes=np.arange(g.n)), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_parallel_jobs_match_serial(self, rooted):
        g = self.make_graph()
        windows = np.full(g.n, float(g.tau_max))
        serial = motif.build_index(g, windows, rooted, nodes=np.arange(g.n), jobs=1)
        parallel = motif.build_index(g, windows, rooted, nodes=np.arange(g.n), jobs=2)
        assert index_as_sets(serial) == index_as_sets(parallel)

    def test_cap_keeps_most_recent(self, rooted):
        # many parallel 0->1 edges plus one 1->2: one type, many instances
        n_par = 12
        src = [0] * n_par + [1]
        dst = [1] * n_par + [2]
        ts = list(range(1, n_par + 1)) + [n_par + 1]
        g = build_graph(3, src, dst, ts)
        full = motif.build_index(g, np.full(3, float(g.tau_max)), rooted,
                                 nodes=[0], cap=None)
        capped = motif.build_index(g, np.full(3, float(g.tau_max)), rooted,
                                   nodes=[0], cap=5)
        (tid,) = capped.per_node[0].keys()
        kept = capped.per_node[0][tid]
        assert len(kept) == 5
        assert len(full.per_node[0][tid]) > 5
        all_tmax = sorted(m.t_max for m in full.per_node[0][tid])
        # every retained instance is at least as recent as every dropped one
        dropped = len(full.per_node[0][tid]) - 5
        assert min(m.t_max for m in kept) >= all_tmax[dropped - 1]


class TestAnalysis:
    def test_histogram_empty_and_single(self, rooted, tmp_path):
        g = build_graph(3, [0, 0, 1], [1, 2, 2], [1, 2, 3])
        labels = np.array([1, 0, 0], dtype=np.int8)
        idx = motif.build_index(g, np.full(3, 3.0), rooted, nodes=[0, 1, 2])
        table = motif.motif_histogram({3.0: idx}, labels)
        # node 0 is fraud and owns one instance; others own one each as members
        tid = next(iter(idx.per_node[0]))
        assert table[(3.0, tid, 1)] == 1
        empty = motif.motif_histogram({}, labels)
        assert empty == {}
        motif.write_histogram_csv(table, [3.0], rooted.size, tmp_path / "h.csv")
        lines = (tmp_path / "h.csv").read_text().splitlines()
        assert lines[0] == "delta,type_id,label,count"
        assert len(lines) == 1 + rooted.size * 2

    def test_correlation_identical_vectors(self, rooted):
        idx = motif.MotifIndex(rooted.mode, rooted.size, {}, {}, {}, None)
        insts = [motif.MotifInstance(0, (0, 1, 2), (0, 1, 2), 3, 5),
                 motif.MotifInstance(0, (0, 1, 2), (0, 1, 3), 7, 6)]
        idx.per_node = {0: {3: [insts[0]], 7: [insts[1]]},
                        1: {3: [insts[0]], 7: [insts[1]]},
                        2: {3: [], 7: []}}
        idx.per_node[2] = {3: [insts[0], insts[0]], 7: [insts[1], insts[1]]}
        corr = motif.motif_cross_correlation(idx, [0, 1, 2])
        assert corr[3, 7] == pytest.approx(1.0)
        assert corr[3, 3] == 1.0

    def test_zero_variance_sentinel(self, rooted):
        idx = motif.MotifIndex(rooted.mode, rooted.size, {}, {}, {}, None)
        i0 = motif.MotifInstance(0, (0, 1, 2), (0, 1, 2), 0, 5)
        idx.per_node = {0: {0: [i0]}, 1: {0: [i0, i0]}}
        corr = motif.motif_cross_correlation(idx, [0, 1])
        dead = 5  # type with zero counts everywhere
        assert corr[dead, dead] == 1.0
        assert np.all(corr[dead, np.arange(rooted.size) != dead] == 0.0)
        assert np.all(corr[np.arange(rooted.size) != dead, dead] == 0.0)

    def test_correlation_matches_pearson_oracle(self, rooted):
        rng = np.random.default_rng(3)
        counts = rng.integers(0, 6, size=(8, rooted.size))
        idx = motif.MotifIndex(rooted.mode, rooted.size, {}, {}, {}, None)
        inst = motif.MotifInstance(0, (0, 1, 2), (0, 1, 2), 0, 5)
        idx.per_node = {
            v: {t: [inst] * int(counts[v, t]) for t in range(rooted.size) if counts[v, t]}
            for v in range(8)}
        got = motif.motif_cross_correlation(idx, list(range(8)))
        want = pearson_two_pass(counts)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_subset_too_small(self, rooted):
        idx = motif.MotifIndex(rooted.mode, rooted.size, {0: {}}, {}, {}, None)
        with pytest.raises(motif.MotifError):
            motif.motif_cross_correlation(idx, [0])
