"""The acceptance battery, at its stated scale.

Each ``criterion_<k>`` runs one numbered criterion and returns a
:class:`CriterionResult` made of individual :class:`Check` rows. The
battery is shared by the ``suite`` command and the test suite.
"""

from __future__ import annotations

import dataclasses
import math
import time

import numpy as np

from . import cover as cv
from . import interlacements as il
from .coupling import audit
from .oracle import cover_chain, cover_start, dense_spectrum, expected_absorption, hitting_chain, restricted_matrix_dense
from .potential import box_points, capacity_extrapolated, equilibrium_infinite, green, green_mc
from .quasistationary import (
    ObstacleGeometry, capacity_duality, conditional_convergence, gap_scaling, hitting_from_sigma,
    perron_pair, restricted_matrix,
)
from .rng import stream
from .walk import TorusGeometry, _as_sites, named_mode

__all__ = ["Check", "CriterionResult", "CRITERIA", "run_battery", "CAP_BALL_WINDOW", "GAP_N2_WINDOW"]

# cap(B(0, r)) / r for SRW in d = 3, r in {1, 2, 4, 8}: 3.156, 2.925, 2.830, 2.792
CAP_BALL_WINDOW = (2.7, 3.2)
# gap N^2 for one radius-1 box, N in {6, 8, 10, 12}: 5.016, 5.590, 5.882, 6.052
GAP_N2_WINDOW = (4.5, 7.0)


@dataclasses.dataclass
class Check:
    label: str
    passed: bool
    value: object
    bar: str

    def line(self):
        return f"  [{'ok' if self.passed else 'FAIL'}] {self.label}: {_fmt(self.value)} ({self.bar})"


@dataclasses.dataclass
class CriterionResult:
    number: int
    title: str
    checks: list
    seconds: float = 0.0

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def failing(self):
        return [c for c in self.checks if not c.passed]

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        tail = "" if self.passed else " | failing: " + "; ".join(c.label for c in self.failing)
        return f"criterion {self.number} {status} {self.title} ({self.seconds:.1f}s){tail}"

    def to_dict(self):
        return {"number": self.number, "title": self.title, "passed": self.passed, "seconds": self.seconds,
                "checks": [dataclasses.asdict(c) | {"value": _plain(c.value)} for c in self.checks]}


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _plain(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _within(label, value, target, bar_value, bar_text):
    return Check(label, bool(abs(value - target) <= bar_value), float(value), bar_text)


def criterion_1(threads=None, seed=1):
    """Monte Carlo against the exact absorbing-chain values."""
    mode = named_mode("srw3")
    checks = []
    geom = TorusGeometry(3, 2)
    spec = cover_chain(mode, geom)
    exact = float(expected_absorption(spec)[cover_start(spec, 0)])
    s = cv.cover_samples(mode, geom, None, 10_000, seed, "uniform", threads, tag="acceptance/1/cover")
    mean, se = float(s["jumps"].mean()), float(s["jumps"].std(ddof=1) / 100.0)
    checks.append(_within("N=2 mean cover jumps", mean, exact, 3 * se, f"exact {exact:.6g}, 3 SE {3 * se:.3g}"))
    geom = TorusGeometry(3, 4)
    h = expected_absorption(hitting_chain(mode, geom, [0]))
    exact = float(h.mean())
    s = cv.cover_samples(mode, geom, [0], 10_000, seed, "uniform", threads, tag="acceptance/1/hit")
    mean, se = float(s["jumps"].mean()), float(s["jumps"].std(ddof=1) / 100.0)
    checks.append(_within("N=4 mean hitting jumps of {0}", mean, exact, 3 * se, f"exact {exact:.6g}, 3 SE {3 * se:.3g}"))
    return CriterionResult(1, "oracle equivalence", checks)


def criterion_2(threads=None, seed=2):
    """Green quadrature against Monte Carlo, and capacity fixtures."""
    checks = []
    for name in ("srw3", "diag3"):
        mode = named_mode(name)
        gq, eq = green(mode, (0, 0, 0), 1e-4)
        gm, sm = green_mc(mode, (0, 0, 0), walks=20_000, horizon=4_000, seed=seed)
        checks.append(_within(f"{name} g_quad(0) vs g_MC(0)", gm, gq, eq + 3 * sm,
                              f"quadrature {gq:.6g} +- {eq:.1g}, 3 SE {3 * sm:.3g}"))
    mode = named_mode("srw3")
    g0, _ = green(mode, (0, 0, 0), 1e-4)
    cap0, _, _ = capacity_extrapolated(mode, [(0, 0, 0)], tol=1e-4)
    checks.append(_within("cap({0}) g(0)", cap0 * g0, 1.0, 0.01, "1 +- 0.01"))
    lo, hi = CAP_BALL_WINDOW
    for r in (1, 2, 4, 8):
        c = equilibrium_infinite(mode, box_points(3, r)).capacity / r
        checks.append(Check(f"cap(B(0,{r}))/r", lo <= c <= hi, c, f"window [{lo}, {hi}]"))
    return CriterionResult(2, "Green/capacity consistency", checks)


def criterion_3(threads=None, seed=3, samples=100_000):
    """Interlacement vacancy of points and pairs."""
    mode = named_mode("srw3")
    g0, _ = green(mode, (0, 0, 0), 1e-6)
    g1, _ = green(mode, (1, 0, 0), 1e-6)
    g2, _ = green(mode, (2, 0, 0), 1e-6)
    window = il.prepare_window(mode, [(0, 0, 0), (1, 0, 0), (2, 0, 0)])
    levels = [0.5, 1.0, 2.0]
    probes = [[(0, 0, 0)], [(0, 0, 0), (1, 0, 0)], [(0, 0, 0), (2, 0, 0)]]
    vb = il.vacancy_batch(window, probes, levels, samples, seed, "acceptance/3")
    checks = []
    slack = 1e-3 + window.bias
    for j, u in enumerate(levels):
        v, se = float(vb["vacancy"][0, j]), float(vb["se"][0, j])
        pred = math.exp(-u / g0)
        checks.append(_within(f"point vacancy u={u}", v, pred, 3 * se + slack, f"exp(-u/g0) {pred:.5f}, 3 SE + 1e-3"))
    for k, (name, gv) in enumerate((("e1", g1), ("2e1", g2)), start=1):
        v, se = float(vb["vacancy"][k, 1]), float(vb["se"][k, 1])
        pred = math.exp(-2.0 / (g0 + gv))
        checks.append(_within(f"pair {{0,{name}}} vacancy u=1", v, pred, 3 * se, f"prediction {pred:.5f}, 3 SE"))
    return CriterionResult(3, "interlacement vacancy laws", checks)


def criterion_4(threads=None, seed=4, replicates=5000):
    """Walk vacancy inside the interlacement sandwich at N = 30."""
    rep = audit(named_mode("srw3"), 30, [(0, 0, 0), (15, 15, 15)], epsilon0=0.3, u=1.0, delta=0.3,
                replicates=replicates, interlace_samples=50_000, seed=seed, threads=threads)
    checks = [
        Check("violations over the default probe family", rep.violations == 0, rep.violations,
              f"0 of {len(rep.probes)} probes, 3 SE + 0.01"),
        Check("lower <= upper on every probe", bool(np.all(rep.lower <= rep.upper + 3 * np.hypot(rep.lower_se, rep.upper_se))),
              float(np.max(rep.lower - rep.upper)), "within 3 SE"),
    ]
    return CriterionResult(4, "torus vacancy sandwich", checks)


def criterion_5(threads=None, seed=5):
    """Quasistationary spectral data, conditional convergence and entry law."""
    mode = named_mode("srw3")
    checks = []
    geom = TorusGeometry(3, 6)
    obs = ObstacleGeometry.explicit(geom, [(3, 3, 3)], A=0, C=1)
    P, kept = restricted_matrix(mode, geom, obs)
    s = perron_pair(P, kept=kept)
    Pd, _ = restricted_matrix_dense(mode, geom, obs.removed)
    vals, _ = dense_spectrum(Pd)
    checks.append(_within("lambda1 vs dense, N=6", s.lambda1, float(vals[0]), 1e-8, f"dense {vals[0]:.12f}, 1e-8"))
    checks.append(_within("lambda2 vs dense, N=6", s.lambda2, float(vals[1]), 1e-8, f"dense {vals[1]:.12f}, 1e-8"))
    gs = gap_scaling(mode, [6, 8, 10, 12])
    lo, hi = GAP_N2_WINDOW
    for row in gs["rows"]:
        checks.append(Check(f"gap N^2 at N={row['N']}", lo <= row["gap_n2"] <= hi, row["gap_n2"], f"window [{lo}, {hi}]"))
    cc = conditional_convergence(mode, geom, obs)
    checks.append(_within("TV decay rate vs spectral prediction", cc["rate"] / cc["predicted"], 1.0, 0.1,
                          f"predicted {cc['predicted']:.6f} per unit time, 10%"))
    geom = TorusGeometry(3, 20)
    obs = ObstacleGeometry.explicit(geom, [(10, 10, 10)], A=1, C=4)
    hs = hitting_from_sigma(mode, geom, obs, walks=20_000, seed=seed)
    checks.append(Check("entry law / e-bar, N=20", hs["max_deviation"] <= 0.2, hs["max_deviation"],
                        f"max |ratio - 1| <= 0.2 over {hs['sites'].size} sites"))
    return CriterionResult(5, "quasistationary suite", checks)


def criterion_6(threads=None, seed=6, walks=10_000):
    """Capacity-hitting duality at N = 30."""
    mode = named_mode("srw3")
    geom = TorusGeometry(3, 30)
    checks = []
    for centers in ([(15, 15, 15)], [(0, 0, 0), (15, 15, 15)]):
        obs = ObstacleGeometry.explicit(geom, centers, A=0, C=4)
        r = capacity_duality(mode, geom, obs, walks=walks, seed=seed, exact=True)
        n = len(centers)
        checks.append(_within(f"N^d/(E[H_V] sum cap), n={n}", r["ratio"], 1.0, 0.15,
                              f"1 +- 0.15 (SE {r['ratio_se']:.3g})"))
        checks.append(_within(f"sup/inf E_x[H_V], n={n}", r["sup_inf_ratio"], 1.0, 0.15, "1 +- 0.15"))
    return CriterionResult(6, "capacity-hitting duality", checks)


def criterion_7(threads=None, seed=7, replicates=2000):
    """Gumbel convergence of normalised cover times."""
    checks = []
    ns = [10, 14, 20]
    suite = cv.gumbel_suite(named_mode("srw3"), ns, replicates=replicates, seed=seed, threads=threads)
    for norm in ("green", "mean_hit"):
        ks = [suite[N][norm].ks for N in ns]
        se = cv.ks_se(replicates)
        mono = all(b <= a + 2 * math.sqrt(2) * se for a, b in zip(ks, ks[1:]))
        checks.append(Check(f"KS non-increasing in N ({norm})", mono, ks, f"2 SE slack {2 * math.sqrt(2) * se:.3g}"))
        checks.append(Check(f"KS at N=20 ({norm})", ks[-1] <= 0.1, ks[-1], "<= 0.1"))
    other = cv.gumbel_suite(named_mode("diag3"), [14], replicates=replicates, seed=seed, threads=threads)
    for norm in ("green", "mean_hit"):
        ks = other[14][norm].ks
        checks.append(Check(f"diag3 KS at N=14 ({norm})", ks <= 0.15, ks, "<= 0.15"))
    return CriterionResult(7, "Gumbel convergence", checks)


def criterion_8(threads=None, seed=8, replicates=500):
    """Uncovered set at rho = 0.2, N = 20."""
    rep = cv.uncovered_pipeline(named_mode("srw3"), 20, None, 0.2, replicates, seed, threads)
    checks = [
        Check("good-event frequency", rep.good_frequency >= 0.8, rep.good_frequency,
              f">= 0.8 (size ok {rep.size_ok.mean():.3f}, spread ok {rep.spread_ok.mean():.3f})"),
        Check("F_rho inside F on every replicate", rep.subset_ok, rep.subset_ok, "exact"),
    ]
    return CriterionResult(8, "uncovered-set pipeline", checks)


def criterion_9(threads=None, seed=9):
    """Exact invariants: zero tolerance."""
    mode = named_mode("srw3")
    checks = []
    geom = TorusGeometry(3, 8)
    s = cv.cover_samples(mode, geom, None, 300, seed, "uniform", 1, tag="acceptance/9")
    g0, _ = cv.green_zero(mode)
    bad = 0
    # fixed levels; a z equal to a sample's own statistic would only probe float rounding
    z_vals = np.concatenate([cv.Z_GRID, stream(seed, 0, "acceptance/9/z").uniform(-3, 5, 60)])
    for t in s["times"]:
        for z in z_vals:
            bad += cv.level_event(t, g0, geom.size, geom.size, z) != cv.statistic_event(t, g0, geom.size, geom.size, z)
    checks.append(Check("pathwise event identity", bad == 0, int(bad), "0 mismatches"))

    window = il.prepare_window(mode, box_points(3, 1))
    bad = 0
    for i in range(200):
        sample = il.sample_window(mode, None, 2.0, stream(seed, i, "acceptance/9/nested"), window=window)
        prev = set(sample.trace.tolist())
        for v in (1.5, 1.0, 0.5, 0.0):
            cur = set(il.nested_levels(sample, v).trace.tolist())
            bad += not cur <= prev
            prev = cur
    checks.append(Check("nested levels give nested traces", bad == 0, int(bad), "0 violations"))

    bad = 0
    nbr = geom.neighbor_table(mode)
    for i in range(100):
        rng = stream(seed, i, "acceptance/9/monotone")
        pos = int(rng.integers(geom.size))
        _, first = cv._cover_run(nbr, mode.cumulative, rng, pos, _as_sites(geom, None), geom, 10**8)
        f2 = rng.choice(geom.size, size=64, replace=False)
        f1 = f2[:16]
        bad += first[f1].max() > first[f2].max()
    checks.append(Check("cover times monotone under inclusion", bad == 0, int(bad), "0 violations"))

    a = cv.cover_samples(mode, geom, None, 64, seed, "uniform", 1, tag="acceptance/9/threads")
    b = cv.cover_samples(mode, geom, None, 64, seed, "uniform", 4, tag="acceptance/9/threads")
    same = all(np.array_equal(a[k], b[k]) for k in ("jumps", "times", "mean_first"))
    checks.append(Check("bit-identical across thread counts", same, same, "1 vs 4 threads"))
    return CriterionResult(9, "exact invariants", checks)


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 10)}


def run_criterion(k, threads=None):
    t0 = time.perf_counter()
    res = CRITERIA[k](threads=threads)
    res.seconds = time.perf_counter() - t0
    return res


def run_battery(numbers=None, threads=None, echo=None):
    """Run the listed criteria (default all), optionally printing each line."""
    out = []
    for k in numbers or sorted(CRITERIA):
        res = run_criterion(k, threads)
        if echo is not None:
            echo(res.line())
            for c in res.checks:
                echo(c.line())
        out.append(res)
    return out
