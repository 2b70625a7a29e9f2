import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from torcover import cover
from torcover.errors import PreconditionError, SeparationViolated
from torcover.walk import TorusGeometry, named_mode

SRW = named_mode("srw3")
G0 = cover.green_zero(SRW)[0]

# P_uniform[0 not in Y(0, u N^3)] on the N = 20 SRW torus, 1 - e^{-tL} by a
# sparse matrix exponential of the killed generator
EXACT_VACANCY_20 = {0.5: 0.7078971202643299, 1.0: 0.5013595632637914, 2.0: 0.25148241305738783}
EXACT_VACANCY_8 = {0.5: 0.6884163550512232, 1.0: 0.4756777637233509, 2.0: 0.22710996552662788}


def test_gumbel_reference_values():
    assert cover.gumbel_cdf(0.0) == pytest.approx(math.exp(-1))
    assert cover.gumbel_cdf(-math.log(math.log(2))) == pytest.approx(0.5)


@pytest.mark.parametrize("k", [0, 1, 3.5])
def test_u_of_z(k):
    assert cover.u_of_z(2.0, math.exp(k), 0.0) == pytest.approx(2.0 * k)
    assert cover.u_of_z(G0, 1000, -math.log(1000)) == pytest.approx(0.0, abs=1e-12)


def test_u_of_z_clamps():
    u, clamped = cover.u_of_z(G0, 10, -5.0, clamp=True)
    assert u == 0.0 and clamped
    with pytest.raises(PreconditionError):
        cover.u_of_z(G0, 0, 0.0)


@given(st.floats(0, 1e7), st.integers(1, 10**6), st.sampled_from(list(cover.Z_GRID)))
def test_event_identity_on_grid(t, f, z):
    n = 27_000
    assert cover.level_event(t, G0, f, n, z) == cover.statistic_event(t, G0, f, n, z)


def test_event_identity_on_paths():
    geom = TorusGeometry(3, 6)
    s = cover.cover_samples(SRW, geom, None, 300, seed=4)
    for z in np.concatenate([cover.Z_GRID, np.linspace(-3.1, 5.3, 17)]):
        for t in s["times"]:
            assert cover.level_event(t, G0, s["f_size"], geom.size, z) == \
                cover.statistic_event(t, G0, s["f_size"], geom.size, z)


def test_ks_helpers():
    rng = np.random.default_rng(0)
    x = rng.gumbel(size=4000)
    assert cover.ks_distance(x) < 3 * cover.ks_se(4000)
    assert cover.ks_se(400) == pytest.approx(0.025)
    assert cover.two_sample_bar(2000, 2000) == pytest.approx((0.8687 + 2 * 0.2603) * math.sqrt(1 / 1000))


def test_gumbel_suite_report():
    out = cover.gumbel_suite(SRW, [6], replicates=200, seed=5)
    rep = out[6]
    assert set(rep) == {"green", "mean_hit"}
    g = rep["green"]
    assert g.f_size == 216 and g.replicates == 200 and g.g0 == pytest.approx(G0)
    assert np.allclose(g.normalized, g.times / (G0 * 216) - math.log(216))
    assert np.all(np.diff(g.cdf_empirical) >= 0)
    assert np.array_equal(rep["mean_hit"].times, g.times)
    assert set(g.summary()) >= {"ks", "ks_se", "g0", "g0_error", "seed", "z_grid"}
    with pytest.raises(PreconditionError):
        cover.gumbel_suite(SRW, [6], replicates=50)


def test_mean_hitting_ratio():
    r20 = cover.mean_hitting_ratio(SRW, 20, replicates=4000, seed=2)
    r4 = cover.mean_hitting_ratio(SRW, 4, replicates=4000, seed=2)
    assert r20["ratio"] > 0 and r4["ratio"] > 0
    assert abs(r20["ratio"] - 1) <= 0.1 and abs(r20["ratio"] - 1) <= 0.1 + 3 * r20["se"]
    assert abs(r4["ratio"] - 1) - abs(r20["ratio"] - 1) > 2 * math.hypot(r4["se"], r20["se"])


@pytest.mark.parametrize("N,exact", [(8, EXACT_VACANCY_8), (20, EXACT_VACANCY_20)])
def test_vacancy_matches_exact(N, exact):
    v = cover.vacancy_check(SRW, N, sorted(exact), replicates=1000, seed=3)
    for row in v["rows"]:
        assert abs(row["walk"] - exact[row["u"]]) <= 3 * row["se"] + 1e-4


def test_vacancy_monotone_on_shared_paths():
    v = cover.vacancy_check(SRW, 8, [0.1, 0.5, 1.0, 2.0, 5.0], replicates=200, seed=6)
    assert np.all(np.diff(v["fractions"], axis=1) <= 0)
    big = v["rows"][-1]
    assert big["walk"] < 0.05 and big["interlacement"] < 0.05 and not big["flag"]


def test_vacancy_agrees_with_interlacement_at_20():
    v = cover.vacancy_check(SRW, 20, [1.0], replicates=1000, seed=0, slack=0.01)
    row = v["rows"][0]
    assert not row["flag"], f"walk {row['walk']:.5f} +- {row['se']:.1e} vs {row['interlacement']:.5f}"


def test_t_of_rho():
    assert cover.t_of_rho(G0, 8000, 8000, 0.2) == pytest.approx(8000 * 0.8 * G0 * math.log(8000))


def test_uncovered_pipeline_structure():
    rhos = [0.2, 0.4, 0.6]
    reps = cover.uncovered_pipeline(SRW, 10, None, rhos, replicates=50, seed=7)
    assert [r.rho for r in reps] == rhos
    assert all(r.subset_ok for r in reps)
    assert all(a.t_rho > b.t_rho for a, b in zip(reps, reps[1:]))
    sizes = np.stack([r.sizes for r in reps])
    assert np.all(np.diff(sizes, axis=0) >= 0)
    r = reps[0]
    finite = r.sizes > 0
    assert np.allclose(r.shift[finite], np.log(r.sizes[finite] / 1000**0.2))
    assert np.all(np.isneginf(r.shift[~finite]))
    assert r.distance_bar == pytest.approx(1000 ** (1 / 6))
    with pytest.raises(PreconditionError):
        cover.uncovered_pipeline(SRW, 10, None, 1.0, replicates=5)


GRID8 = list(itertools.product((0, 15), repeat=3))


@pytest.fixture(scope="module")
def separated_center():
    return cover.separated_subset_gumbel(SRW, 30, GRID8, replicates=2000, seed=1, start=(7, 7, 7))


def test_separated_subset_gumbel(separated_center):
    assert separated_center.f_size == 8 and separated_center.ks <= 0.1


def test_separated_start_insensitivity(separated_center):
    a = separated_center
    b = cover.separated_subset_gumbel(SRW, 30, GRID8, replicates=2000, seed=1, start=(0, 0, 1))
    assert stats.ks_2samp(a.normalized, b.normalized).statistic <= cover.two_sample_bar(2000, 2000)


def test_separation_enforced():
    with pytest.raises(SeparationViolated):
        cover.separated_subset_gumbel(SRW, 10, [(0, 0, 0), (1, 0, 0)], replicates=10)


def test_single_target_is_a_hitting_time():
    r = cover.separated_subset_gumbel(SRW, 10, [(5, 5, 5)], replicates=800, seed=8, start=(0, 0, 0))
    assert r.f_size == 1
    assert np.allclose(r.normalized, r.times / (G0 * 1000))
    assert np.all(r.cdf_empirical[cover.Z_GRID < 0] == 0)
    # a far target is hit at a nearly exponential time
    m = r.normalized.mean()
    emp = np.searchsorted(np.sort(r.normalized), cover.Z_GRID, side="right") / 800
    ref = np.where(cover.Z_GRID > 0, 1 - np.exp(-np.clip(cover.Z_GRID, 0, None) / m), 0.0)
    assert np.max(np.abs(emp - ref)) <= 4 * cover.ks_se(800) + 0.05


@settings(max_examples=5)
@given(st.integers(0, 1000))
def test_reports_are_reproducible(tmp_path_factory, seed):
    d = tmp_path_factory.mktemp("cov")
    geom = TorusGeometry(3, 5)
    g0, err = cover.green_zero(SRW)
    paths = []
    for i, threads in enumerate((1, 3)):
        s = cover.cover_samples(SRW, geom, None, 40, seed=seed, threads=threads)
        rep = cover.gumbel_report(s, SRW, geom, "green", g0, err, 1e-4, seed)
        paths.append(d / f"r{i}.csv")
        cover.write_cover_csv(rep, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert paths[0].read_text().splitlines()[0] == "replicate,J,T_C,statistic"
