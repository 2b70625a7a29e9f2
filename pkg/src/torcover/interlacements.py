"""Random interlacements seen through a finite window.

Inside a finite set K the interlacement at level u is a Poisson number,
with mean ``u cap(K)``, of walks started from the normalised equilibrium
measure ``e_K / cap(K)``, each carrying an independent uniform label on
``[0, u]``. Restricting to labels ``<= v`` gives the interlacement at
level ``v``, so one sample serves every lower level.

Two ways of following the infinite walks are offered:

``"resample"`` (default)
    Exact. Each time a walk leaves a small box around K it decides
    whether it ever returns (probability ``sum_z g(y - z) e_K(z)``) and,
    if so, jumps straight to its entry point, drawn from the harmonic
    measure.
``"truncate"``
    Walks stop on leaving a box ``B(0, R_esc)`` chosen so the chance of a
    further visit to K is at most ``escape_tol``.
"""

from __future__ import annotations

import dataclasses
import json
import math

import numpy as np

from . import _kernels
from .errors import CapacityUnavailable, PreconditionError, StepBudgetExceeded, ToleranceUnreachable
from .potential import _as_points, equilibrium_infinite, green_table
from .rng import stream

__all__ = [
    "InterlacementWindow",
    "InterlacementSample",
    "prepare_window",
    "escape_radius",
    "sample_window",
    "nested_levels",
    "vacancy_batch",
    "two_point_sum",
    "write_window_csv",
    "write_summary_json",
]

DEFAULT_BUDGET = 10**9


def escape_radius(mode, r_k, capacity, tol):
    """Smallest exit radius after which K is revisited with chance <= ``tol``.

    Uses the asymptotic Green's function: from a point at l-infinity
    distance ``rho`` of K the return probability is at most about
    ``cap(K) c_d (rho^2 / lambda_max)^(1 - d/2)``, ``lambda_max`` being the
    largest eigenvalue of the jump covariance.
    """
    d = mode.d
    cov = mode.covariance
    lam = float(np.linalg.eigvalsh(cov).max())
    c = math.gamma(d / 2.0 - 1.0) / (2.0 * math.pi ** (d / 2.0) * math.sqrt(np.linalg.det(cov)))
    rho = math.sqrt(lam) * (capacity * c / tol) ** (1.0 / (d - 2))
    return int(r_k + math.ceil(rho))


@dataclasses.dataclass(frozen=True, eq=False)
class InterlacementWindow:
    """Everything needed to sample interlacements on one window.

    Attributes
    ----------
    points : ndarray, shape (n, d)
        Window points, lexicographic, relative to the origin.
    measure, capacity
        Equilibrium measure and capacity of the window.
    method : {"resample", "truncate"}
    bias : float
        Bound on the probability that a truncated walk would have
        revisited the window (0 for ``"resample"``).
    """

    mode: object
    points: np.ndarray
    measure: np.ndarray
    capacity: float
    method: str
    bias: float
    box_r: int
    exit_r: int
    k_index: np.ndarray
    ginv: np.ndarray
    gtab: np.ndarray
    gtab_r: int
    start_cum: np.ndarray

    @property
    def size(self):
        return self.points.shape[0]

    def index_of(self, pts):
        """Window indices of the given points."""
        pts = np.asarray(pts, dtype=np.int64).reshape(-1, self.mode.d)
        side = 2 * self.box_r + 1
        out = []
        for p in pts:
            if np.max(np.abs(p)) > self.box_r:
                raise PreconditionError(f"{tuple(p)} is not in the window")
            flat = int(np.ravel_multi_index(tuple(p + self.box_r), (side,) * self.mode.d))
            w = int(self.k_index[flat])
            if w < 0:
                raise PreconditionError(f"{tuple(p)} is not in the window")
            out.append(w)
        return np.asarray(out, dtype=np.int64)


def prepare_window(mode, K, method="resample", escape_tol=1e-3, green_tol=1e-6):
    """Equilibrium data and lookup tables for the window ``K``.

    Raises
    ------
    CapacityUnavailable
        When the equilibrium measure cannot be computed.
    """
    if method not in ("resample", "truncate"):
        raise PreconditionError(f"unknown interlacement method {method!r}")
    d = mode.d
    K = _as_points(K, d)
    if K.shape[0] == 0:
        raise PreconditionError("the window must not be empty")
    r_k = int(np.max(np.abs(K)))
    box_r = r_k + mode.range
    gtab_r = box_r + mode.range + r_k
    try:
        table = green_table(mode, gtab_r, green_tol)
        eq = equilibrium_infinite(mode, K, table=table)
    except (ToleranceUnreachable, np.linalg.LinAlgError) as exc:
        raise CapacityUnavailable(f"no equilibrium measure for the window: {exc}") from exc
    if not np.isfinite(eq.capacity) or eq.capacity <= 0 or np.any(eq.measure < -1e-12):
        raise CapacityUnavailable("equilibrium solve produced an invalid measure")
    measure = np.clip(eq.measure, 0.0, None)
    side = 2 * box_r + 1
    k_index = np.full(side**d, -1, dtype=np.int64)
    k_index[np.ravel_multi_index(tuple((K + box_r).T), (side,) * d)] = np.arange(K.shape[0])
    G = table.values[tuple((K[:, None, :] - K[None, :, :] + gtab_r).transpose(2, 0, 1))]
    ginv = np.ascontiguousarray(np.linalg.inv(G))
    if method == "resample":
        exit_r, bias = box_r, 0.0
    else:
        exit_r = max(box_r, escape_radius(mode, r_k, eq.capacity, escape_tol))
        bias = float(escape_tol)
    cum = np.cumsum(measure) / measure.sum()
    cum[-1] = 1.0
    return InterlacementWindow(
        mode=mode, points=K, measure=measure, capacity=float(measure.sum()), method=method,
        bias=bias, box_r=box_r, exit_r=exit_r, k_index=k_index, ginv=ginv,
        gtab=table.flat(), gtab_r=gtab_r, start_cum=cum,
    )


@dataclasses.dataclass(frozen=True, eq=False)
class InterlacementSample:
    """Interlacement trajectories meeting a window, up to level ``u``.

    Attributes
    ----------
    window : InterlacementWindow
    u : float
    labels : ndarray
        Ascending trajectory labels in ``[0, u]``.
    starts : ndarray
        Window index of each trajectory's first point.
    visits : ndarray of uint8, shape (trajectories, window size)
    first_label : ndarray
        Smallest label visiting each window point, ``inf`` if none.
    jumps : int
    """

    window: InterlacementWindow
    u: float
    labels: np.ndarray
    starts: np.ndarray
    visits: np.ndarray
    first_label: np.ndarray
    jumps: int = 0

    @property
    def trajectory_count(self):
        return int(self.labels.size)

    @property
    def trace(self):
        """Window indices visited by some trajectory."""
        return np.flatnonzero(self.first_label <= self.u)

    @property
    def trace_points(self):
        return self.window.points[self.trace]

    def vacant(self, idx, level=None):
        """Is the set of window indices ``idx`` missed up to ``level``?"""
        level = self.u if level is None else level
        return bool(np.min(self.first_label[np.asarray(idx, dtype=np.int64)]) > level)


def _draw(window, u, rng, budget):
    m = int(rng.poisson(u * window.capacity)) if u > 0 else 0
    labels = np.sort(rng.uniform(0.0, u, size=m))
    starts = np.searchsorted(window.start_cum, rng.random(m), side="right").astype(np.int64)
    np.minimum(starts, window.size - 1, out=starts)
    visits = np.zeros((m, window.size), dtype=np.uint8)
    first = np.full(window.size, np.inf)
    mode = window.mode
    jumps = _kernels.interlacement_window(
        mode.steps, mode.cumulative, rng, starts, labels, window.k_index, window.box_r,
        window.exit_r, window.points, window.ginv, window.gtab, window.gtab_r,
        window.method == "resample", budget, first, visits,
    )
    if jumps < 0:
        raise StepBudgetExceeded(f"an interlacement trajectory exceeded {budget} jumps")
    return labels, starts, visits, first, int(jumps)


def sample_window(mode, K, u, rng, *, method="resample", escape_tol=1e-3, window=None,
                  budget=DEFAULT_BUDGET):
    """Sample the interlacement trace on ``K`` at level ``u``.

    Parameters
    ----------
    mode : MovingMode
    K : array_like
        Window points in Z^d. Ignored when ``window`` is given.
    u : float
        Level, ``u >= 0``.
    rng : numpy.random.Generator
    method : {"resample", "truncate"}
    window : InterlacementWindow, optional
        Reuse precomputed tables across many samples.

    Returns
    -------
    InterlacementSample
    """
    if u < 0:
        raise PreconditionError("level u must be nonnegative")
    if window is None:
        window = prepare_window(mode, K, method, escape_tol)
    labels, starts, visits, first, jumps = _draw(window, float(u), rng, budget)
    return InterlacementSample(window, float(u), labels, starts, visits, first, jumps)


def nested_levels(sample, v):
    """The same sample seen at level ``v <= u``: trajectories with label <= v."""
    if not 0 <= v <= sample.u:
        raise PreconditionError(f"level {v} outside [0, {sample.u}]")
    m = int(np.searchsorted(sample.labels, v, side="right"))
    first = np.where(sample.first_label <= v, sample.first_label, np.inf)
    return InterlacementSample(sample.window, float(v), sample.labels[:m], sample.starts[:m],
                               sample.visits[:m], first, sample.jumps)


def vacancy_batch(window, probes, levels, samples, seed=0, tag="interlace", replicate0=0):
    """Vacancy frequencies of probe sets at several levels.

    One sample per replicate is drawn at the top level and thinned to the
    others, so the estimates are monotone in the level on every replicate.

    Parameters
    ----------
    window : InterlacementWindow
    probes : list of array_like
        Each probe is a list of window points.
    levels : sequence of float
    samples : int

    Returns
    -------
    dict
        ``vacancy`` and ``se`` arrays of shape (probes, levels), the
        ``count_mean`` and ``count_var`` of trajectory numbers at the top
        level, and ``start_counts`` per window point.
    """
    levels = np.asarray(levels, dtype=float)
    top = float(levels.max()) if levels.size else 0.0
    idx = [window.index_of(p) for p in probes]
    hits = np.zeros((len(idx), levels.size))
    counts = np.empty(samples)
    start_counts = np.zeros(window.size, dtype=np.int64)
    for i in range(samples):
        rng = stream(seed, replicate0 + i, tag)
        _, starts, _, first, _ = _draw(window, top, rng, DEFAULT_BUDGET)
        counts[i] = starts.size
        start_counts += np.bincount(starts, minlength=window.size)
        for a, ix in enumerate(idx):
            hits[a] += np.min(first[ix]) > levels
    vac = hits / samples
    se = np.sqrt(np.maximum(vac * (1 - vac), 0.0) / samples)
    return {
        "vacancy": vac, "se": se, "levels": levels, "samples": samples,
        "count_mean": float(counts.mean()),
        "count_var": float(counts.var(ddof=1)) if samples > 1 else 0.0,
        "start_counts": start_counts,
    }


def two_point_sum(mode, K, u, tol=1e-6):
    """Exact two-point vacancy sum over ``K`` from the Green table.

    For each level returns ``lhs = sum_v exp(-2u / (g(0) + g(v)))``, the
    constant-free term ``|K| exp(-2u / g(0))`` and their ratio.

    Raises
    ------
    CapacityUnavailable
        When Green's values cannot be tabulated.
    PreconditionError
        If ``0`` belongs to ``K``.
    """
    K = _as_points(K, mode.d)
    if np.any(np.all(K == 0, axis=1)):
        raise PreconditionError("the origin must not belong to K")
    r = int(np.max(np.abs(K)))
    try:
        tab = green_table(mode, max(r, 2), tol)
    except ToleranceUnreachable as exc:
        raise CapacityUnavailable(str(exc)) from exc
    g0 = tab.g0
    gv = np.array([tab(v) for v in K])
    rows = []
    for level in np.atleast_1d(np.asarray(u, dtype=float)):
        lhs = float(np.exp(-2.0 * level / (g0 + gv)).sum())
        base = float(K.shape[0] * math.exp(-2.0 * level / g0))
        rows.append({"u": float(level), "lhs": lhs, "base": base, "ratio": lhs / base})
    return rows


def write_window_csv(sample, path):
    """One ``site,firstLabel`` row per visited window point."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("site,firstLabel\n")
        for z in sample.trace:
            site = " ".join(str(int(c)) for c in sample.window.points[z])
            fh.write(f"{site},{float(sample.first_label[z])!r}\n")


def write_summary_json(summary, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x))
