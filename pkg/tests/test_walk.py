import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from torcover.errors import BadOrientation, BadWeights, ModeFileError, NotGenerating, PreconditionError, StepBudgetExceeded
from torcover.rng import stream
from torcover.walk import (
    Coverage, ExitSet, FixedJumps, FixedTime, HitSet, MovingMode, TorusGeometry, cover_time, hitting_time,
    lattice_index, named_mode, parse_mode_text, simulate_until, validate_mode,
)

SRW = named_mode("srw3")


def mode(vectors, weights=None):
    weights = weights or [1.0 / len(vectors)] * len(vectors)
    return validate_mode(MovingMode(tuple(vectors), tuple(weights)))


class TestValidateMode:
    def test_canonical_basis_is_valid(self):
        m = mode([(1, 0, 0), (0, 1, 0), (0, 0, 1)])
        assert m.d == 3 and m.n_vectors == 3

    def test_doubled_vector_does_not_generate(self):
        with pytest.raises(NotGenerating, match="index 2"):
            mode([(2, 0, 0), (0, 1, 0), (0, 0, 1)])

    def test_unimodular_set_is_valid(self):
        m = mode([(1, 1, 0), (0, 1, 0), (0, 0, 1)])
        assert lattice_index(m.vectors, 3) == (3, 1)

    def test_rank_deficient(self):
        with pytest.raises(NotGenerating, match="rank"):
            mode([(1, 0, 0), (0, 1, 0)], [0.5, 0.5])

    def test_orientation(self):
        with pytest.raises(BadOrientation):
            mode([(-1, 0, 0), (0, 1, 0), (0, 0, 1)])
        with pytest.raises(BadOrientation):
            mode([(0, -1, 1), (1, 0, 0), (0, 0, 1)])

    def test_zero_and_duplicate_vectors(self):
        with pytest.raises(BadOrientation):
            mode([(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)])
        with pytest.raises(BadOrientation):
            mode([(1, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)])

    def test_weights(self):
        with pytest.raises(BadWeights):
            mode([(1, 0, 0), (0, 1, 0), (0, 0, 1)], [0.5, 0.5, 0.5])
        with pytest.raises(BadWeights):
            mode([(1, 0, 0), (0, 1, 0), (0, 0, 1)], [1.0, 0.5, -0.5])

    @given(st.lists(st.tuples(*[st.integers(-3, 3)] * 3), min_size=3, max_size=6, unique=True))
    def test_lattice_index_matches_determinant(self, vecs):
        vecs = [v for v in vecs if any(v)]
        rank, index = lattice_index(vecs, 3)
        a = np.array(vecs, dtype=float)
        assert rank == np.linalg.matrix_rank(a)
        if rank == 3 and len(vecs) == 3:
            assert index == round(abs(np.linalg.det(a)))


class TestModeFile:
    def test_round_trip(self):
        m, n = parse_mode_text("d = 3\nN = 10\nvectors = 1,0,0; 0,1,0; 0,0,1; 1,1,1\nweights = 1/4, 1/4, 1/4, 1/4\n")
        assert n == 10
        assert m.vectors == named_mode("diag3").vectors
        assert m.weights == named_mode("diag3").weights

    def test_line_diagnostics(self):
        with pytest.raises(NotGenerating) as exc:
            parse_mode_text("# header\nd = 3\nvectors = 2,0,0; 0,1,0; 0,0,1\nweights = 1/3,1/3,1/3\n")
        assert exc.value.line == 3
        with pytest.raises(BadWeights) as exc:
            parse_mode_text("d = 3\nvectors = 1,0,0; 0,1,0; 0,0,1\nweights = 0.5,0.25,0.5\n")
        assert exc.value.line == 3

    def test_malformed(self):
        with pytest.raises(ModeFileError):
            parse_mode_text("d = 3\nvectors = 1,0,0\n")
        with pytest.raises(ModeFileError):
            parse_mode_text("d = 3\nfoo = 1\n")
        with pytest.raises(ModeFileError):
            parse_mode_text("d = 2\nvectors = 1,0; 0,1\nweights = 1/2,1/2\n")


class TestGeometry:
    def test_reduce_and_index(self):
        g = TorusGeometry(3, 5)
        assert g.reduce((-1, 5, 7)) == (4, 0, 2)
        assert g.point(g.index((-1, 5, 7))) == (4, 0, 2)

    def test_rejects_small(self):
        with pytest.raises(PreconditionError):
            TorusGeometry(2, 10)
        with pytest.raises(PreconditionError):
            TorusGeometry(3, 1)

    @given(st.integers(3, 12), st.tuples(*[st.integers(-20, 20)] * 3), st.tuples(*[st.integers(-20, 20)] * 3))
    def test_dist_inf_is_a_torus_metric(self, N, x, y):
        g = TorusGeometry(3, N)
        d = g.dist_inf(x, y)
        assert d == g.dist_inf(y, x)
        assert 0 <= d <= N // 2
        assert (d == 0) == (g.reduce(x) == g.reduce(y))

    def test_ball(self):
        g = TorusGeometry(3, 10)
        b = g.ball((0, 0, 0), 2)
        assert b.size == 125
        assert all(g.dist_inf(g.point(i), (0, 0, 0)) <= 2 for i in b)
        assert g.ball((0, 0, 0), 5).size == 1000

    def test_neighbor_table_is_a_symmetric_walk(self):
        g = TorusGeometry(3, 4)
        nbr = g.neighbor_table(SRW)
        for k in range(0, nbr.shape[1], 2):
            assert np.array_equal(nbr[nbr[:, k], k + 1], np.arange(g.size))


class TestSimulation:
    geom = TorusGeometry(3, 6)

    def test_hit_of_own_start_is_immediate(self):
        traj, trace = simulate_until(SRW, self.geom, (1, 2, 3), HitSet([(1, 2, 3)]), stream(0))
        assert traj.jump_count == 0 and trace.covered_count == 1
        h = hitting_time(SRW, self.geom, (1, 2, 3), [(1, 2, 3)], stream(0))
        assert h.time == 0.0 and h.site == (1, 2, 3)

    def test_fixed_time_zero(self):
        traj, trace = simulate_until(SRW, self.geom, (0, 0, 0), FixedTime(0.0), stream(0))
        assert traj.jump_count == 0
        assert trace.first_hit_time == {(0, 0, 0): 0.0}

    def test_exit_of_full_torus_never_happens(self):
        with pytest.raises(StepBudgetExceeded):
            hitting_time(SRW, self.geom, (0, 0, 0), None, stream(0), kind="exit", budget=1000)
        with pytest.raises(StepBudgetExceeded):
            simulate_until(SRW, self.geom, (0, 0, 0), ExitSet(None), stream(0), budget=1000)

    def test_cover_of_start_is_zero(self):
        c = cover_time(SRW, self.geom, (2, 2, 2), [(2, 2, 2)], stream(0))
        assert c.time == 0.0 and c.jumps == 0

    def test_paths_are_made_of_mode_steps(self):
        traj, _ = simulate_until(named_mode("diag3"), self.geom, (0, 0, 0), FixedJumps(500), stream(3))
        pos = traj.positions(named_mode("diag3"), self.geom)
        pts = self.geom.points(pos)
        diff = (pts[1:] - pts[:-1] + 3) % 6 - 3
        allowed = {tuple(s) for s in named_mode("diag3").steps}
        assert all(tuple(d) in allowed for d in diff)

    def test_trace_matches_path(self):
        traj, trace = simulate_until(SRW, self.geom, (0, 0, 0), FixedJumps(300), stream(5))
        pos = traj.positions(SRW, self.geom)
        assert set(trace.sites.tolist()) == set(pos.tolist())
        first = {s: int(np.argmax(pos == s)) for s in set(pos.tolist())}
        assert all(first[s] == j for s, j in zip(trace.sites, trace.first_jumps))
        assert np.all(np.diff(trace.times) >= 0)

    def test_cover_time_equals_last_first_visit(self):
        F = [(0, 0, 0), (3, 3, 3), (1, 4, 2)]
        traj, trace = simulate_until(SRW, self.geom, (5, 5, 5), Coverage(F), stream(7), window=F)
        assert trace.covered_count == 3
        assert trace.times.max() == pytest.approx(traj.holding_time_sum)

    def test_determinism(self):
        a, _ = simulate_until(SRW, self.geom, "uniform", FixedTime(200.0), stream(11, 4, "t"))
        b, _ = simulate_until(SRW, self.geom, "uniform", FixedTime(200.0), stream(11, 4, "t"))
        assert a.start == b.start and np.array_equal(a.directions, b.directions)
        assert a.holding_time_sum == b.holding_time_sum

    def test_jump_count_at_fixed_time_is_poisson(self):
        T = 20.0
        counts = np.array([simulate_until(SRW, self.geom, 0, FixedTime(T), stream(1, i, "poisson"),
                                          record=False)[0].jump_count for i in range(3000)])
        assert abs(counts.mean() - T) < 3 * np.sqrt(T / counts.size)
        assert abs(counts.var() / T - 1) < 0.1

    def test_holding_time_is_gamma_given_jumps(self):
        t = np.array([simulate_until(SRW, self.geom, 0, FixedJumps(50), stream(2, i, "gamma"),
                                     record=False)[0].holding_time_sum for i in range(3000)])
        assert stats.kstest(t, stats.gamma(50).cdf).pvalue > 1e-3

    def test_uniform_start_is_uniform(self):
        g = TorusGeometry(3, 3)
        starts = [simulate_until(SRW, g, "uniform", FixedJumps(0), stream(3, i, "u"))[0].start for i in range(5400)]
        counts = np.bincount(g.indices(starts), minlength=g.size)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_jump_chain_is_symmetric(self):
        g = TorusGeometry(3, 3)
        traj, _ = simulate_until(SRW, g, 0, FixedJumps(200_000), stream(4))
        pos = traj.positions(SRW, g)
        m = np.zeros((g.size, g.size))
        np.add.at(m, (pos[:-1], pos[1:]), 1)
        diff = m - m.T
        mask = (m + m.T) > 0
        z = diff[mask] / np.sqrt((m + m.T)[mask])
        assert np.max(np.abs(z)) < 5

    def test_return_time_is_positive(self):
        h = hitting_time(SRW, self.geom, (0, 0, 0), [(0, 0, 0)], stream(8), kind="return")
        assert h.jumps >= 2 and h.site == (0, 0, 0)

    @given(st.integers(0, 10_000), st.integers(1, 6))
    def test_cover_time_monotone_in_F(self, seed, k):
        g = TorusGeometry(3, 4)
        rng = np.random.default_rng(seed)
        F2 = rng.choice(g.size, size=12, replace=False)
        F1 = F2[:k]
        _, trace = simulate_until(SRW, g, 0, Coverage(F2), stream(seed, 0, "mono"), window=F2)
        t = dict(zip(trace.sites.tolist(), trace.times))
        assert set(t) == set(F2.tolist())
        assert max(t[s] for s in F1.tolist()) <= max(t.values())
