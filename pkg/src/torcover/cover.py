"""Cover-time experiments on the torus.

The cover time of F, normalised as ``T_C^F / (g(0) N^d) - log|F|``, is
compared with the standard Gumbel law ``exp(-exp(-z))``; the alternative
normalisation divides by an empirical mean hitting time instead of
``g(0) N^d``. Also here: the vacancy of the walk trace against the
interlacement prediction, and the set left uncovered at time
``t(rho) = (1 - rho) g(0) log|F| N^d``.

Every replicate draws from its own stream ``stream(seed, i, tag)``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math

import numpy as np
from scipy import stats

from . import _kernels
from .errors import PreconditionError, SeparationViolated, StepBudgetExceeded
from .parallel import replicate_map
from .potential import green
from .rng import stream
from .walk import TorusGeometry, _as_sites, _bitset, _start_index, default_budget

__all__ = [
    "Z_GRID",
    "gumbel_cdf",
    "u_of_z",
    "level_event",
    "statistic_event",
    "ks_distance",
    "ks_se",
    "two_sample_bar",
    "GumbelTestReport",
    "UncoveredSetReport",
    "cover_samples",
    "gumbel_report",
    "gumbel_suite",
    "mean_hitting_ratio",
    "vacancy_check",
    "uncovered_pipeline",
    "separated_subset_gumbel",
    "write_cover_csv",
    "write_json",
]

Z_GRID = np.arange(-2.0, 4.01, 0.5)

# Kolmogorov distribution: mean and standard deviation of sqrt(n) D_n
KOLMOGOROV_MEAN = 0.8687
KOLMOGOROV_SD = 0.2603


def gumbel_cdf(z):
    """Standard Gumbel distribution function ``exp(-exp(-z))``."""
    return np.exp(-np.exp(-np.asarray(z, dtype=float)))


def u_of_z(g0, f_size, z, clamp=False):
    """Level ``g(0) (log|F| + z)``.

    With ``clamp`` the result is ``(max(u, 0), clamped)``.
    """
    if f_size < 1:
        raise PreconditionError("|F| must be at least 1")
    u = g0 * (math.log(f_size) + z)
    if clamp:
        return max(u, 0.0), u < 0
    return u


def level_event(t_cover, g0, f_size, n_sites, z):
    """``T_C^F <= u_F(z) N^d``."""
    return t_cover <= u_of_z(g0, f_size, z) * n_sites


def statistic_event(t_cover, g0, f_size, n_sites, z):
    """``T_C^F / (g(0) N^d) - log|F| <= z``."""
    return t_cover / (g0 * n_sites) - math.log(f_size) <= z


def ks_distance(samples, cdf=gumbel_cdf):
    """One-sample Kolmogorov-Smirnov distance to a continuous law."""
    return float(stats.kstest(np.asarray(samples, dtype=float), cdf).statistic)


def ks_se(n):
    """Standard error policy for a KS distance from ``n`` samples.

    ``0.5 / sqrt(n)`` bounds the standard deviation of an empirical
    distribution function at any point.
    """
    return 0.5 / math.sqrt(n)


def two_sample_bar(n1, n2):
    """Two-sample KS bar: null mean plus two null standard deviations."""
    return (KOLMOGOROV_MEAN + 2 * KOLMOGOROV_SD) * math.sqrt((n1 + n2) / (n1 * n2))


@dataclasses.dataclass
class GumbelTestReport:
    """Normalised cover times of one experiment against the Gumbel law."""

    N: int
    d: int
    mode: str
    normalization: str
    f_size: int
    replicates: int
    jumps: np.ndarray
    times: np.ndarray
    normalized: np.ndarray
    ks: float
    z_grid: np.ndarray
    cdf_empirical: np.ndarray
    g0: float
    g0_error: float
    g0_tol: float
    scale: float
    scale_se: float
    seed: int
    start: str = "uniform"
    config_hash: str | None = None

    @property
    def ks_se(self):
        return ks_se(self.replicates)

    def summary(self):
        return {
            "N": self.N, "d": self.d, "mode": self.mode, "normalization": self.normalization,
            "f_size": self.f_size, "replicates": self.replicates, "ks": self.ks,
            "ks_se": self.ks_se, "z_grid": self.z_grid.tolist(),
            "cdf_empirical": self.cdf_empirical.tolist(),
            "cdf_gumbel": gumbel_cdf(self.z_grid).tolist(), "g0": self.g0,
            "g0_error": self.g0_error, "g0_tol": self.g0_tol, "scale": self.scale,
            "scale_se": self.scale_se, "seed": self.seed, "start": self.start,
            "config_hash": self.config_hash,
        }


def _cover_run(nbr, cum, rng, pos, f_sites, geom, budget):
    """Walk until ``f_sites`` are covered; returns (jumps, first-visit jumps)."""
    first = np.full(geom.size, -1, dtype=np.int64)
    first[pos] = 0
    left = f_sites[f_sites != pos]
    target = _bitset(geom, left)
    k, _, remaining, _ = _kernels.torus_chunk(
        nbr, cum, rng, pos, budget, target, int(left.size), first, 0, np.empty(0, np.int8), True
    )
    if remaining > 0:
        raise StepBudgetExceeded(f"cover not reached after {budget} jumps")
    return int(k), first


def cover_samples(mode, geom, F=None, replicates=1000, seed=0, start="uniform", threads=None,
                  tag="cover", budget=None):
    """Cover jump counts and times of ``F`` over independent replicates.

    Returns
    -------
    dict
        ``jumps`` (J), ``times`` (Gamma(J, 1) continuous cover times) and
        ``mean_first``: per replicate, the mean first-visit jump index over
        the sites of F, whose expectation under the uniform start is the
        mean hitting time of a site of F.
    """
    f_sites = _as_sites(geom, F)
    nbr = geom.neighbor_table(mode)
    cum = mode.cumulative
    budget = default_budget(geom) if budget is None else int(budget)

    def one(i):
        rng = stream(seed, i, tag)
        pos = _start_index(geom, start, rng)
        k, first = _cover_run(nbr, cum, rng, pos, f_sites, geom, budget)
        t = float(rng.gamma(k)) if k > 0 else 0.0
        return k, t, float(first[f_sites].mean())

    out = replicate_map(one, replicates, threads)
    return {
        "jumps": np.array([o[0] for o in out], dtype=np.int64),
        "times": np.array([o[1] for o in out]),
        "mean_first": np.array([o[2] for o in out]),
        "f_size": int(f_sites.size),
    }


def green_zero(mode, tol=1e-4):
    """``(g(0), error)`` at quadrature tolerance ``tol``."""
    return green(mode, (0,) * mode.d, tol)


def gumbel_report(samples, mode, geom, normalization, g0, g0_err, g0_tol, seed, start="uniform"):
    """Build a report from :func:`cover_samples` output.

    ``normalization="green"`` uses ``T / (g(0) N^d) - log|F|``;
    ``"mean_hit"`` uses ``T / E H - log|F|`` with the empirical mean
    hitting time of the same replicates.
    """
    times = samples["times"]
    f_size = samples["f_size"]
    reps = times.size
    if normalization == "green":
        scale, scale_se = g0 * geom.size, g0_err * geom.size
    elif normalization == "mean_hit":
        mf = samples["mean_first"]
        scale, scale_se = float(mf.mean()), float(mf.std(ddof=1) / math.sqrt(reps))
    else:
        raise PreconditionError(f"unknown normalization {normalization!r}")
    z = times / scale - math.log(f_size)
    emp = np.searchsorted(np.sort(z), Z_GRID, side="right") / reps
    return GumbelTestReport(
        N=geom.N, d=geom.d, mode=mode.fingerprint, normalization=normalization, f_size=f_size,
        replicates=reps, jumps=samples["jumps"], times=times, normalized=z, ks=ks_distance(z),
        z_grid=Z_GRID.copy(), cdf_empirical=emp, g0=g0, g0_error=g0_err, g0_tol=g0_tol,
        scale=scale, scale_se=scale_se, seed=seed, start=str(start),
    )


def gumbel_suite(mode, n_values, F=None, replicates=2000, seed=0, threads=None, g0_tol=1e-4):
    """Cover-time Gumbel test over several torus sizes, uniform start.

    Returns
    -------
    dict
        ``N -> {"green": GumbelTestReport, "mean_hit": GumbelTestReport}``.
    """
    if replicates < 100:
        raise PreconditionError("the Gumbel suite needs at least 100 replicates")
    g0, g0_err = green_zero(mode, g0_tol)
    out = {}
    for N in n_values:
        geom = TorusGeometry(mode.d, int(N))
        s = cover_samples(mode, geom, F, replicates, seed, "uniform", threads, tag=f"gumbel/{N}")
        out[int(N)] = {
            norm: gumbel_report(s, mode, geom, norm, g0, g0_err, g0_tol, seed)
            for norm in ("green", "mean_hit")
        }
    return out


def mean_hitting_ratio(mode, N, replicates=10_000, seed=0, threads=None, g0_tol=1e-4, budget=None):
    """Monte Carlo ``E[H_0] / (g(0) N^d)`` under the uniform start.

    The mean continuous hitting time equals the mean jump count.
    """
    geom = TorusGeometry(mode.d, int(N))
    g0, _ = green_zero(mode, g0_tol)
    nbr = geom.neighbor_table(mode)
    target = np.zeros(geom.size, dtype=np.bool_)
    target[0] = True
    budget = default_budget(geom) if budget is None else int(budget)

    def one(i):
        rng = stream(seed, i, f"meanhit/{N}")
        k, _ = _kernels.torus_hit_entry(nbr, mode.cumulative, rng, int(rng.integers(geom.size)), target, budget)
        if k < 0:
            raise StepBudgetExceeded("hitting walk exceeded its budget")
        return k

    h = np.array(replicate_map(one, replicates, threads), dtype=float)
    scale = g0 * geom.size
    return {
        "N": int(N), "ratio": float(h.mean() / scale),
        "se": float(h.std(ddof=1) / math.sqrt(replicates) / scale),
        "mean_hit": float(h.mean()), "g0": g0, "replicates": replicates,
    }


def _first_visit_times(nbr, cum, rng, pos, size, horizon):
    """Continuous first-visit time of every site up to ``horizon`` (inf if none)."""
    n = int(rng.poisson(horizon)) if horizon > 0 else 0
    first = np.full(size, -1, dtype=np.int64)
    first[pos] = 0
    _kernels.torus_chunk(nbr, cum, rng, pos, n, np.zeros(1, np.uint64), 0, first, 0,
                         np.empty(0, np.int8), False)
    jump_times = np.concatenate([[0.0], np.sort(rng.uniform(0.0, horizon, size=n))])
    out = np.full(size, np.inf)
    seen = first >= 0
    out[seen] = jump_times[first[seen]]
    return out


def vacancy_check(mode, N, u_grid=(0.5, 1.0, 2.0), replicates=1000, seed=0, threads=None,
                  slack=0.01, g0_tol=1e-4):
    """Walk vacancy ``P[x not in Y(0, u N^d)]`` against ``exp(-u / g(0))``.

    One path per replicate, run to the largest level, serves every ``u``.
    By translation invariance the vacancy of a fixed site equals the
    expected vacant fraction of the torus, which is what each replicate
    records.
    """
    u_grid = np.asarray(sorted(float(u) for u in u_grid))
    if np.any(u_grid < 0):
        raise PreconditionError("levels must be nonnegative")
    geom = TorusGeometry(mode.d, int(N))
    g0, _ = green_zero(mode, g0_tol)
    nbr = geom.neighbor_table(mode)
    horizon = float(u_grid.max()) * geom.size

    def one(i):
        rng = stream(seed, i, f"vacancy/{N}")
        t = _first_visit_times(nbr, mode.cumulative, rng, int(rng.integers(geom.size)), geom.size, horizon)
        return np.array([(t > u * geom.size).mean() for u in u_grid])

    frac = np.array(replicate_map(one, replicates, threads))
    rows = []
    for j, u in enumerate(u_grid):
        emp = float(frac[:, j].mean())
        se = float(frac[:, j].std(ddof=1) / math.sqrt(replicates))
        pred = math.exp(-u / g0)
        rows.append({"u": float(u), "walk": emp, "se": se, "interlacement": pred,
                     "flag": abs(emp - pred) > 3 * se + slack})
    return {"N": int(N), "g0": g0, "replicates": replicates, "slack": slack, "rows": rows,
            "fractions": frac}


@dataclasses.dataclass
class UncoveredSetReport:
    """Sites of F left unvisited at time ``t(rho)``, per replicate."""

    N: int
    rho: float
    t_rho: float
    f_size: int
    sizes: np.ndarray
    min_distance: np.ndarray
    size_ok: np.ndarray
    spread_ok: np.ndarray
    shift: np.ndarray
    subset_ok: bool
    distance_bar: float

    @property
    def good(self):
        return self.size_ok & self.spread_ok

    @property
    def good_frequency(self):
        return float(self.good.mean())

    def summary(self):
        return {
            "N": self.N, "rho": self.rho, "t_rho": self.t_rho, "f_size": self.f_size,
            "replicates": int(self.sizes.size), "mean_size": float(self.sizes.mean()),
            "size_window": [self.f_size**self.rho - self.f_size ** (2 * self.rho / 3),
                            self.f_size**self.rho + self.f_size ** (2 * self.rho / 3)],
            "distance_bar": self.distance_bar,
            "size_ok": float(self.size_ok.mean()), "spread_ok": float(self.spread_ok.mean()),
            "good_frequency": self.good_frequency, "subset_ok": self.subset_ok,
        }


def _min_torus_distance(geom, sites):
    if sites.size < 2:
        return math.inf
    pts = geom.points(sites)
    diff = np.abs(pts[:, None, :] - pts[None, :, :])
    dist = np.minimum(diff, geom.N - diff).max(axis=2)
    dist[np.diag_indices(sites.size)] = np.iinfo(np.int64).max
    return float(dist.min())


def t_of_rho(g0, n_sites, f_size, rho):
    """``t(rho) = N^d (1 - rho) g(0) log|F|``."""
    return n_sites * (1.0 - rho) * g0 * math.log(f_size)


def uncovered_pipeline(mode, N, F=None, rho=0.2, replicates=500, seed=0, threads=None, g0_tol=1e-4):
    """Uncovered part ``F_rho`` of F at time ``t(rho)`` and the good event.

    ``rho`` may be a sequence; all values share each replicate's path.
    The good event asks ``||F_rho| - |F|^rho| <= |F|^(2 rho / 3)`` and a
    pairwise torus distance of at least ``|F|^(1 / (2d))`` inside F_rho.
    The shift is ``h = log(|F_rho| / |F|^rho)`` (``-inf`` when empty).

    Returns
    -------
    UncoveredSetReport or list of them (one per rho)
    """
    rhos = np.atleast_1d(np.asarray(rho, dtype=float))
    if np.any((rhos <= 0) | (rhos >= 1)):
        raise PreconditionError("rho must lie in (0, 1)")
    geom = TorusGeometry(mode.d, int(N))
    f_sites = _as_sites(geom, F)
    if f_sites.size == 0:
        raise PreconditionError("F is empty")
    fsz = int(f_sites.size)
    g0, _ = green_zero(mode, g0_tol)
    t_r = np.array([t_of_rho(g0, geom.size, fsz, r) for r in rhos])
    nbr = geom.neighbor_table(mode)
    in_f = np.zeros(geom.size, dtype=bool)
    in_f[f_sites] = True
    bar = fsz ** (1.0 / (2 * mode.d))

    def one(i):
        rng = stream(seed, i, f"uncovered/{N}")
        t = _first_visit_times(nbr, mode.cumulative, rng, int(rng.integers(geom.size)), geom.size,
                               float(t_r.max()))
        rows = []
        for tr in t_r:
            left = f_sites[t[f_sites] > tr]
            rows.append((left.size, _min_torus_distance(geom, left), bool(in_f[left].all())))
        return rows

    res = replicate_map(one, replicates, threads)
    reports = []
    for j, r in enumerate(rhos):
        sizes = np.array([row[j][0] for row in res], dtype=np.int64)
        mind = np.array([row[j][1] for row in res])
        target = fsz**r
        size_ok = np.abs(sizes - target) <= fsz ** (2 * r / 3)
        spread_ok = mind >= bar
        with np.errstate(divide="ignore"):
            shift = np.log(sizes / target)
        reports.append(UncoveredSetReport(
            N=int(N), rho=float(r), t_rho=float(t_r[j]), f_size=fsz, sizes=sizes, min_distance=mind,
            size_ok=size_ok, spread_ok=spread_ok, shift=shift,
            subset_ok=all(row[j][2] for row in res), distance_bar=bar,
        ))
    return reports if np.ndim(rho) else reports[0]


def separated_subset_gumbel(mode, N, F, replicates=2000, seed=0, start=None, threads=None,
                            g0_tol=1e-4, c8=None, tag=None):
    """Gumbel test for a well separated target set from a fixed start.

    Raises
    ------
    SeparationViolated
        If two points of F are closer than ``|F|^c8`` (``c8 = 1 / (2d)``
        by default).
    """
    geom = TorusGeometry(mode.d, int(N))
    f_sites = _as_sites(geom, F)
    c8 = 1.0 / (2 * mode.d) if c8 is None else c8
    need = f_sites.size**c8
    if f_sites.size > 1 and _min_torus_distance(geom, f_sites) < need:
        raise SeparationViolated(f"points of F are closer than {need:.3g}")
    start = (0,) * mode.d if start is None else tuple(start)
    g0, g0_err = green_zero(mode, g0_tol)
    tag = tag or f"separated/{N}/{geom.index(start)}"
    s = cover_samples(mode, geom, f_sites, replicates, seed, start, threads, tag=tag)
    return gumbel_report(s, mode, geom, "green", g0, g0_err, g0_tol, seed, start=start)


def write_cover_csv(report, path):
    """``replicate,J,T_C,statistic`` rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "J", "T_C", "statistic"])
        for i, (j, t, z) in enumerate(zip(report.jumps, report.times, report.normalized)):
            w.writerow([i, int(j), repr(float(t)), repr(float(z))])


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    raise TypeError(type(x))
