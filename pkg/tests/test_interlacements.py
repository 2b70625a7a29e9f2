import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from torcover.errors import CapacityUnavailable, PreconditionError
from torcover.interlacements import (
    escape_radius, nested_levels, prepare_window, sample_window, two_point_sum, vacancy_batch, write_summary_json,
    write_window_csv,
)
from torcover.potential import box_points, green
from torcover.rng import stream
from torcover.walk import named_mode

SRW = named_mode("srw3")
G0 = green(SRW, (0, 0, 0), 1e-6)[0]
BALL1 = prepare_window(SRW, box_points(3, 1))


def test_level_zero_is_empty():
    s = sample_window(SRW, None, 0.0, stream(0), window=BALL1)
    assert s.trajectory_count == 0 and s.trace.size == 0


def test_negative_level():
    with pytest.raises(PreconditionError):
        sample_window(SRW, None, -1.0, stream(0), window=BALL1)


def test_capacity_unavailable():
    with pytest.raises(CapacityUnavailable):
        prepare_window(SRW, box_points(3, 1), green_tol=1e-12)
    with pytest.raises(PreconditionError):
        prepare_window(SRW, np.empty((0, 3), dtype=np.int64))


def test_sample_structure():
    s = sample_window(SRW, None, 3.0, stream(1), window=BALL1)
    assert np.all(np.diff(s.labels) >= 0) and np.all((s.labels >= 0) & (s.labels <= 3.0))
    assert s.visits.shape == (s.trajectory_count, BALL1.size)
    hit = s.visits.any(axis=0)
    assert np.array_equal(np.flatnonzero(hit), np.sort(s.trace))
    for z in s.trace:
        assert s.first_label[z] == s.labels[np.argmax(s.visits[:, z])]
    assert np.all(s.visits[np.arange(s.trajectory_count), s.starts])


def test_nested_endpoints():
    s = sample_window(SRW, None, 2.0, stream(2), window=BALL1)
    same = nested_levels(s, 2.0)
    assert np.array_equal(same.trace, s.trace) and same.trajectory_count == s.trajectory_count
    assert nested_levels(s, 0.0).trace.size == 0
    with pytest.raises(PreconditionError):
        nested_levels(s, 2.5)


@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_nested_traces_are_nested(seed, a, b):
    s = sample_window(SRW, None, 4.0, stream(seed, 0, "nest"), window=BALL1)
    lo, hi = sorted((4.0 * a, 4.0 * b))
    t_lo = set(nested_levels(s, lo).trace.tolist())
    t_hi = set(nested_levels(s, hi).trace.tolist())
    assert t_lo <= t_hi <= set(s.trace.tolist())


def test_point_vacancy_and_thinned_levels():
    w = prepare_window(SRW, [(0, 0, 0)])
    levels = [2.0, 1.0, 0.5]
    vb = vacancy_batch(w, [[(0, 0, 0)]], levels, 40_000, seed=5)
    for j, u in enumerate(levels):
        assert abs(vb["vacancy"][0, j] - math.exp(-u / G0)) <= 3 * vb["se"][0, j] + 1e-3
    assert np.all(np.diff(vb["vacancy"][0]) >= 0)


def test_pair_vacancy():
    w = prepare_window(SRW, [(0, 0, 0), (1, 0, 0), (0, 2, 0)])
    g1 = green(SRW, (1, 0, 0), 1e-6)[0]
    g2 = green(SRW, (2, 0, 0), 1e-6)[0]
    vb = vacancy_batch(w, [[(0, 0, 0), (1, 0, 0)], [(0, 0, 0), (0, 2, 0)]], [1.0], 40_000, seed=6)
    for k, g in enumerate((g1, g2)):
        assert abs(vb["vacancy"][k, 0] - math.exp(-2 / (G0 + g))) <= 3 * vb["se"][k, 0]


def test_counts_are_poisson_and_starts_follow_equilibrium():
    u, n = 1.5, 20_000
    vb = vacancy_batch(BALL1, [[(0, 0, 0)]], [u], n, seed=7)
    mean = u * BALL1.capacity
    assert abs(vb["count_mean"] - mean) <= 3 * math.sqrt(mean / n)
    assert abs(vb["count_var"] / mean - 1) <= 3 * math.sqrt(2 / n) + 0.01
    counts = vb["start_counts"]
    expected = BALL1.measure / BALL1.capacity * counts.sum()
    supp = expected > 0
    assert counts[~supp].sum() == 0
    assert stats.chisquare(counts[supp], expected[supp]).pvalue > 1e-3


def test_translation_invariance():
    K = box_points(3, 1)
    w0 = prepare_window(SRW, K)
    shift = np.array([5, -3, 2])
    w1 = prepare_window(SRW, K + shift)
    x = np.array([1, 0, 1])
    a = vacancy_batch(w0, [[tuple(x)]], [1.0], 20_000, seed=8)
    b = vacancy_batch(w1, [[tuple(x + shift)]], [1.0], 20_000, seed=9)
    assert abs(a["vacancy"][0, 0] - b["vacancy"][0, 0]) <= 3 * math.hypot(a["se"][0, 0], b["se"][0, 0])


def test_window_restriction_is_consistent():
    """Vacancy of a point does not depend on the window containing it."""
    big = vacancy_batch(BALL1, [[(1, 1, 1)]], [1.0], 20_000, seed=10)
    assert abs(big["vacancy"][0, 0] - math.exp(-1 / G0)) <= 3 * big["se"][0, 0] + 1e-3


def test_truncated_sampler_reports_its_bias():
    r = escape_radius(SRW, 0, 1 / G0, 1e-3)
    assert r > 100
    w = prepare_window(SRW, [(0, 0, 0)], method="truncate", escape_tol=0.05)
    assert 0 < w.bias <= 0.05 and w.exit_r > w.box_r
    vb = vacancy_batch(w, [[(0, 0, 0)]], [1.0], 4000, seed=11)
    assert abs(vb["vacancy"][0, 0] - math.exp(-1 / G0)) <= 3 * vb["se"][0, 0] + w.bias


def test_two_point_sum():
    K = [tuple(p) for p in box_points(3, 5) if np.any(p)]
    rows = two_point_sum(SRW, K, [0.0, 1.0, 2.0, 4.0])
    assert rows[0]["lhs"] == pytest.approx(len(K))
    for r in rows:
        assert r["lhs"] >= r["base"]
    ratios = [r["ratio"] for r in rows[1:]]
    assert ratios[0] < ratios[1] < ratios[2]


def test_two_point_sum_needs_origin_excluded():
    with pytest.raises(PreconditionError):
        two_point_sum(SRW, [(0, 0, 0), (1, 0, 0)], [1.0])


def test_outputs(tmp_path):
    s = sample_window(SRW, None, 2.0, stream(12), window=BALL1)
    write_window_csv(s, tmp_path / "w.csv")
    lines = (tmp_path / "w.csv").read_text().splitlines()
    assert lines[0] == "site,firstLabel" and len(lines) == s.trace.size + 1
    site, label = lines[1].split(",")
    assert len(site.split()) == 3 and 0 < float(label) <= 2.0
    write_summary_json({"u": 2.0, "cap": BALL1.capacity, "v": np.array([0.5])}, tmp_path / "s.json")
    assert '"cap"' in (tmp_path / "s.json").read_text()
