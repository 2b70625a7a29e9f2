import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from torcover import cover
from torcover.coupling import (
    Probe, audit, box_radius, cross_box_independence, default_probes, write_sandwich_csv,
)
from torcover.errors import PreconditionError, SeparationTooSmall
from torcover.walk import named_mode

SRW = named_mode("srw3")


def test_box_radius():
    assert box_radius(15, 0.3) == 6
    assert box_radius(15, 0.1) == 11
    assert box_radius(1000, 0.5) == 31


@given(st.lists(st.tuples(*[st.integers(-3, 3)] * 3), min_size=1, max_size=4, unique=True),
       st.tuples(*[st.integers(-5, 5)] * 3))
def test_probe_shape_is_translation_invariant(pts, w):
    a = Probe(0, tuple(pts), "x")
    b = Probe(1, tuple(tuple(p + q for p, q in zip(pt, w)) for pt in pts), "x")
    assert a.shape == b.shape and (0, 0, 0) in a.shape


def test_default_probes():
    probes = default_probes(3, 1, 2)
    assert sum(p.kind == "singleton" for p in probes) == 2 * 27
    assert sum(p.kind == "pair" for p in probes) == 2 * 3 * 18
    assert {p.kind for p in probes} == {"singleton", "pair", "L-triple", "square"}
    assert all(max(abs(c) for q in p.offsets for c in q) <= 1 for p in probes)


def test_overlapping_boxes_are_rejected():
    with pytest.raises(SeparationTooSmall):
        audit(SRW, 30, [(0, 0, 0), (15, 15, 15)], epsilon0=0.1, replicates=10)
    with pytest.raises(SeparationTooSmall):
        audit(SRW, 10, [(5, 5, 5)], radius=5, replicates=10)


def test_bad_parameters():
    with pytest.raises(PreconditionError):
        audit(SRW, 16, [(8, 8, 8)], radius=1, delta=0.0)
    with pytest.raises(PreconditionError):
        audit(SRW, 16, [(8, 8, 8)], radius=1, u=0.0)
    with pytest.raises(PreconditionError):
        audit(SRW, 16, [(8, 8, 8)], radius=1, probes=[Probe(0, ((2, 0, 0),), "singleton")])
    five = tuple((i, 0, 0) for i in range(-1, 1)) + ((0, 1, 0), (0, -1, 0), (0, 0, 1))
    with pytest.raises(PreconditionError):
        audit(SRW, 16, [(8, 8, 8)], radius=1, probes=[Probe(0, five, "big")])


@pytest.fixture(scope="module")
def small_audit():
    return audit(SRW, 16, [(8, 8, 8)], radius=1, replicates=1500, interlace_samples=20_000, seed=3)


def test_sandwich_is_ordered(small_audit):
    r = small_audit
    assert np.all(r.lower <= r.upper + 3 * np.hypot(r.lower_se, r.upper_se))
    assert np.all(r.lower_exact < r.upper_exact)
    assert np.all(np.abs(r.lower - r.lower_exact) <= 3 * r.lower_se + 1e-3)
    assert np.all(np.abs(r.upper - r.upper_exact) <= 3 * r.upper_se + 1e-3)
    assert r.violations == 0
    s = r.summary()
    assert s["probes"] == len(r.probes) and sum(v["count"] for v in s["by_kind"].values()) == len(r.probes)


def test_full_width_sandwich():
    r = audit(SRW, 16, [(8, 8, 8)], radius=1, delta=1.0, replicates=800, interlace_samples=5000, seed=4)
    assert np.all(r.upper == 1.0) and np.all(r.upper_exact == 1.0)
    assert r.violations == 0


def test_singleton_matches_vacancy_check():
    probes = [Probe(0, ((0, 0, 0),), "singleton")]
    r = audit(SRW, 16, [(8, 8, 8)], radius=0, probes=probes, replicates=20_000, interlace_samples=1000, seed=5)
    v = cover.vacancy_check(SRW, 16, [1.0], replicates=400, seed=6)["rows"][0]
    assert abs(r.walk[0] - v["walk"]) <= 3 * math.hypot(r.walk_se[0], v["se"])


def test_cross_box_independence():
    out = cross_box_independence(SRW, 16, [(0, 0, 0), (8, 8, 8)], replicates=3000, seed=7)
    assert out["corr"][0][0] == pytest.approx(1.0) and out["corr"][1][1] == pytest.approx(1.0)
    assert abs(out["corr"][0][1]) <= 3 * out["se"][0][1] + 0.03
    empty = cross_box_independence(SRW, 16, [(0, 0, 0), (8, 8, 8)], u=0.0, replicates=50, seed=7)
    assert empty["corr"][0][1] is None and empty["vacancy"] == [1.0, 1.0]
    with pytest.raises(PreconditionError):
        cross_box_independence(SRW, 16, [(0, 0, 0)])


def test_sandwich_csv(small_audit, tmp_path):
    write_sandwich_csv(small_audit, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "probe,box,lower,walk,upper,lowerSE,walkSE,upperSE,flag"
    assert len(lines) == len(small_audit.probes) + 1
    assert lines[1].split(",")[-1] in ("0", "1")
