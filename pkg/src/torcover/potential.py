"""Discrete potential theory on Z^d for a moving mode.

Green's function by Fourier quadrature, equilibrium measures and
capacities (absolute and relative to a box), and Monte Carlo estimates of
hitting probabilities. All walks here live on Z^d.

Green's function
----------------
``g(x) = (2 pi)^-d  int_{[-pi, pi]^d} cos(x.theta) / (1 - phi(theta)) dtheta``
with ``phi(theta) = sum_v kappa(v) cos(v.theta)``. The integrand blows up
like ``1 / Q(theta)`` at the origin, where ``Q(theta) = 1/2 sum_v kappa(v)
(v.theta)^2``. We subtract ``chi(theta) / Q(theta)`` with ``chi`` a smooth
bump equal to one near 0 and supported inside the cube. The remainder is
bounded and periodic, and a midpoint rule evaluates it for every lattice
offset at once through an FFT. The subtracted term is integrated exactly
after the linear change of variables that turns ``Q`` into ``|w|^2``: it
becomes a radial Fourier transform, done by Gauss-Legendre quadrature.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import math

import numba as nb
import numpy as np
import scipy.sparse.linalg as spla
from scipy import special

from . import _kernels
from .errors import (
    KEqualsA,
    KNotInA,
    PreconditionError,
    SolveFailed,
    StepBudgetExceeded,
    ToleranceUnreachable,
)
from .rng import stream

__all__ = [
    "PotentialTable",
    "EquilibriumResult",
    "green_table",
    "green",
    "green_asymptotic",
    "green_mc",
    "hit_probability_mc",
    "equilibrium",
    "equilibrium_infinite",
    "capacity_extrapolated",
    "hit_probability_scaling",
    "box_points",
]

MAX_GRID_POINTS = 1 << 22


# ---------------------------------------------------------------------------
# Green's function


@dataclasses.dataclass(frozen=True)
class PotentialTable:
    """Green's function on the box B(0, radius).

    ``values`` has shape ``(2 radius + 1,) * d`` and is indexed by
    ``x + radius``. ``error`` is an absolute bound valid for every entry.
    """

    mode: object
    radius: int
    values: np.ndarray
    error: float
    method: str = "quadrature"
    grid: int = 0

    def __call__(self, x):
        x = np.asarray(x, dtype=np.int64)
        if np.max(np.abs(x)) > self.radius:
            raise PreconditionError(f"{tuple(x)} outside the tabulated box of radius {self.radius}")
        return float(self.values[tuple(x + self.radius)])

    @property
    def g0(self):
        return self(np.zeros(self.mode.d, dtype=np.int64))

    def flat(self):
        return np.ascontiguousarray(self.values.ravel())

    def to_rows(self):
        r = self.radius
        for idx in np.ndindex(self.values.shape):
            yield tuple(i - r for i in idx), float(self.values[idx]), self.error


def _smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def _cutoff_radii(mode):
    lam_min = float(np.linalg.eigvalsh(mode.covariance)[0])
    r1 = 0.95 * math.pi * math.sqrt(lam_min / 2.0)
    return 0.5 * r1, r1


def _bump(r, r0, r1):
    return _smooth_step((r1 - r) / (r1 - r0))


def _radial_part(mode, offsets, n_nodes):
    """(2 pi)^-d int chi(theta) cos(x.theta) / Q(theta) dtheta for each offset."""
    d = mode.d
    r0, r1 = _cutoff_radii(mode)
    cov = mode.covariance
    jac = 2.0 ** (d / 2.0) / math.sqrt(np.linalg.det(cov))
    inv = np.linalg.inv(cov)
    k = np.sqrt(np.maximum(2.0 * np.einsum("...i,ij,...j->...", offsets, inv, offsets), 0.0))
    nodes, wts = np.polynomial.legendre.leggauss(n_nodes)
    r = 0.5 * r1 * (nodes + 1.0)
    w = 0.5 * r1 * wts * _bump(r, r0, r1)
    nu = d / 2.0 - 1.0
    uk, inverse = np.unique(np.round(k.ravel(), 12), return_inverse=True)
    out = np.empty(uk.shape)
    zero = uk == 0
    sphere = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
    out[zero] = sphere * np.sum(w * r ** (d - 3))
    kk = uk[~zero][:, None]
    integrand = special.jv(nu, kk * r[None, :]) * r[None, :] ** (d / 2.0 - 2.0)
    out[~zero] = (2.0 * math.pi) ** (d / 2.0) * kk[:, 0] ** (-nu) * (integrand @ w)
    return (jac * out / (2.0 * math.pi) ** d)[inverse].reshape(k.shape)


def _fft_part(mode, M, radius):
    """Midpoint-rule values of the regularised integral on B(0, radius)."""
    d = mode.d
    h = 2.0 * math.pi / M
    theta1 = -math.pi + h * (np.arange(M) + 0.5)
    grids = np.meshgrid(*([theta1] * d), indexing="ij", sparse=True)
    phi = np.zeros((M,) * d)
    quad = np.zeros((M,) * d)
    for v, w in zip(mode.vectors, mode.weights):
        dot = sum(c * g for c, g in zip(v, grids) if c != 0)
        phi += w * np.cos(dot)
        quad += 0.5 * w * dot**2
    r0, r1 = _cutoff_radii(mode)
    chi = _bump(np.sqrt(quad), r0, r1)
    A = 1.0 / (1.0 - phi) - chi / quad
    del phi, quad, chi
    spec = np.fft.ifftn(A)
    offs = np.arange(-radius, radius + 1)
    sel = np.ix_(*([offs % M] * d))
    vals = spec[sel]
    phase = np.zeros((2 * radius + 1,) * d)
    for axis in range(d):
        shape = [1] * d
        shape[axis] = -1
        phase = phase + (offs * (h / 2.0 - math.pi)).reshape(shape)
    return np.real(vals * np.exp(1j * phase))


def _box_offsets(d, radius):
    offs = np.arange(-radius, radius + 1)
    grids = np.meshgrid(*([offs] * d), indexing="ij")
    return np.stack(grids, axis=-1).astype(float)


@functools.lru_cache(maxsize=32)
def _table_cached(mode, radius, tol, max_points):
    d = mode.d
    offsets = _box_offsets(d, radius)
    radial = _radial_part(mode, offsets, 400)
    radial_check = _radial_part(mode, offsets, 800)
    rad_err = float(np.max(np.abs(radial - radial_check)))
    M = 16
    while M < 2 * (radius + 1):
        M *= 2
    prev = _fft_part(mode, M, radius)
    err = math.inf
    while True:
        M2 = 2 * M
        if M2**d > max_points:
            raise ToleranceUnreachable(
                f"Green quadrature stopped at grid {M} with error {err:.3g} > tol {tol:g}"
            )
        cur = _fft_part(mode, M2, radius)
        # midpoint error decays like M^-d; the step difference bounds the
        # error of the finer grid after one Richardson correction
        step = cur - prev
        err = float(np.max(np.abs(step))) / (2**d - 1) + rad_err
        M = M2
        if err <= tol:
            break
        prev = cur
    values = cur + step / (2**d - 1) + radial_check
    values = 0.5 * (values + values[(slice(None, None, -1),) * d])
    return PotentialTable(mode=mode, radius=radius, values=values, error=err, method="quadrature", grid=M)


def green_table(mode, radius, tol=1e-4, max_points=MAX_GRID_POINTS):
    """Tabulate Green's function on B(0, radius) to absolute accuracy ``tol``.

    The quadrature grid doubles until the estimated error on the box is at
    most ``tol``. The estimate is the change between two successive grids
    scaled by the ``M^-d`` convergence rate of the midpoint rule.

    Raises
    ------
    ToleranceUnreachable
        If the grid would exceed ``max_points`` nodes first.
    """
    if mode.d < 3:
        raise PreconditionError("Green's function requires d >= 3")
    if tol <= 0:
        raise PreconditionError("tol must be positive")
    return _table_cached(mode, int(radius), float(tol), int(max_points))


def green(mode, x, tol=1e-4):
    """Green's function at one lattice point: ``(value, error)``."""
    x = tuple(int(c) for c in x)
    r = max(2, max(abs(c) for c in x))
    tab = green_table(mode, r, tol)
    return tab(x), tab.error


def green_asymptotic(mode, x):
    """Leading large-|x| behaviour of Green's function (local CLT)."""
    d = mode.d
    cov = mode.covariance
    x = np.asarray(x, dtype=float)
    q = np.einsum("...i,ij,...j->...", x, np.linalg.inv(cov), x)
    c = math.gamma(d / 2.0 - 1.0) / (2.0 * math.pi ** (d / 2.0) * math.sqrt(np.linalg.det(cov)))
    return c * q ** (1.0 - d / 2.0)


def _tail_visits(mode, x, n):
    """Expected visits to x after jump n (local CLT approximation)."""
    d = mode.d
    cov = mode.covariance
    a = d / 2.0
    c = float(np.asarray(x, float) @ np.linalg.inv(cov) @ np.asarray(x, float))
    pref = (2.0 * math.pi) ** (-a) / math.sqrt(np.linalg.det(cov))
    if c == 0:
        return pref * n ** (1.0 - a) / (a - 1.0)
    return pref * (c / 2.0) ** (1.0 - a) * math.gamma(a - 1.0) * special.gammainc(a - 1.0, c / (2.0 * n))


def green_mc(mode, x, walks=20_000, horizon=2_000, seed=0):
    """Monte Carlo Green's function: mean visits to 0 of walks from x
    over ``horizon`` jumps, plus a local-CLT tail correction.

    Returns ``(value, standard error)``.
    """
    x = np.asarray(x, dtype=np.int64)
    counts = np.empty(walks)
    for i in range(walks):
        rng = stream(seed, i, "green_mc")
        counts[i] = _kernels.zd_visits(mode.steps, mode.cumulative, rng, x, horizon)
    counts += 1.0 if not x.any() else 0.0
    tail = _tail_visits(mode, x, horizon)
    return float(counts.mean() + tail), float(counts.std(ddof=1) / math.sqrt(walks))


def hit_probability_mc(mode, x, walks=20_000, horizon=2_000, seed=0, g0=None):
    """Monte Carlo ``P_x[H_0 < infinity]`` with a tail correction.

    The walk is followed for ``horizon`` jumps; hits after that are
    accounted for by expected late visits divided by ``g(0)``.
    """
    x = np.asarray(x, dtype=np.int64)
    if not x.any():
        return 1.0, 0.0
    g0 = green(mode, np.zeros(mode.d, dtype=int))[0] if g0 is None else g0
    hits = np.empty(walks)
    for i in range(walks):
        rng = stream(seed, i, "hit_mc")
        status, _, _ = _kernels.zd_hit_or_exit(
            mode.steps, mode.cumulative, rng, x, 0, 1 << 40, horizon
        )
        hits[i] = status == 1
    tail = _tail_visits(mode, x, horizon) / g0
    return float(hits.mean() + tail), float(hits.std(ddof=1) / math.sqrt(walks))


# ---------------------------------------------------------------------------
# equilibrium measures


@dataclasses.dataclass
class EquilibriumResult:
    """Equilibrium measure of ``K`` (absolute if ``box_radius`` is None,
    else relative to B(0, box_radius))."""

    K: np.ndarray
    box_radius: int | None
    measure: np.ndarray
    capacity: float
    error: float
    method: str

    def normalized(self):
        return self.measure / self.capacity

    def to_rows(self):
        for pt, m in zip(self.K, self.measure):
            yield tuple(int(c) for c in pt), float(m)


def box_points(d, r, center=None):
    """Points of B(center, r) in Z^d, lexicographic order."""
    pts = _box_offsets(d, r).reshape(-1, d).astype(np.int64)
    if center is not None:
        pts = pts + np.asarray(center, dtype=np.int64)
    return pts


@nb.njit(nogil=True, cache=True)
def _masked_matvec(x, free, offs, probs, out):
    n = x.shape[0]
    for i in range(n):
        if free[i]:
            s = x[i]
            for k in range(offs.shape[0]):
                s -= probs[k] * x[i + offs[k]]
            out[i] = s
        else:
            out[i] = 0.0
    return out


def _escape_system(mode, K, R):
    """Padded grid description of the harmonic problem on B(0, R) minus K."""
    d = mode.d
    pad = mode.range
    side = 2 * (R + pad) + 1
    strides = np.array([side ** (d - 1 - j) for j in range(d)], dtype=np.int64)
    offs = mode.steps @ strides
    center = (R + pad) * strides.sum()
    inbox = np.zeros((side,) * d, dtype=np.bool_)
    inbox[(slice(pad, pad + 2 * R + 1),) * d] = True
    inbox = inbox.ravel()
    kflat = center + K @ strides
    free = inbox.copy()
    free[kflat] = False
    probs = mode.step_probs
    b = np.zeros(side**d)
    fi = np.flatnonzero(free)
    for k in range(offs.shape[0]):
        b[fi] += probs[k] * (~inbox[fi + offs[k]])
    return free, offs, probs, b, kflat, inbox


def _cg_escape(mode, K, R, rtol=1e-10):
    free, offs, probs, b, kflat, inbox = _escape_system(mode, K, R)
    n = b.shape[0]
    buf = np.empty(n)

    def mv(v):
        return _masked_matvec(np.ascontiguousarray(v, dtype=float).ravel(), free, offs, probs, buf).copy()

    # self-loops are impossible (vectors are nonzero), so the Jacobi
    # preconditioner is the identity on free sites
    op = spla.LinearOperator((n, n), matvec=mv, dtype=float)
    x, info = spla.cg(op, b, rtol=rtol, atol=0.0, maxiter=20 * (2 * R + 1) * mode.d + 1000)
    res = np.linalg.norm(b - mv(x)) / max(np.linalg.norm(b), 1e-300)
    if info != 0 or res > rtol * 10:
        raise SolveFailed(f"escape solve on B(0,{R}) stopped at residual {res:.2e}")
    # K and padding sites stay at 0 through CG, so jumps into K add nothing
    acc = np.zeros(kflat.size)
    for k in range(offs.shape[0]):
        nb_idx = kflat + offs[k]
        acc += probs[k] * np.where(inbox[nb_idx], x[nb_idx], 1.0)
    return acc, res


def _as_points(K, d):
    K = np.asarray(K, dtype=np.int64).reshape(-1, d)
    return np.unique(K, axis=0)


def equilibrium(mode, K, box_radius, rtol=1e-10):
    """Equilibrium measure of ``K`` relative to the box B(0, box_radius).

    ``e_{K,A}(x) = P_x[walk leaves A before returning to K]``: the escape
    probabilities are harmonic on A minus K and solved by conjugate
    gradients to relative residual ``rtol``; e_{K,A}(x) then averages them
    over the first jump from x.

    Raises
    ------
    KNotInA, KEqualsA, SolveFailed
    """
    d = mode.d
    K = _as_points(K, d)
    R = int(box_radius)
    if np.max(np.abs(K)) > R:
        raise KNotInA(f"K is not inside B(0, {R})")
    if K.shape[0] >= (2 * R + 1) ** d:
        raise KEqualsA("K fills the whole box")
    meas, res = _cg_escape(mode, K, R, rtol)
    return EquilibriumResult(K=K, box_radius=R, measure=meas, capacity=float(meas.sum()),
                             error=float(res), method="solve")


def _escape_support(mode, K):
    """Points of K with at least one jump leaving K."""
    keys = {tuple(p) for p in K.tolist()}
    keep = []
    for i, p in enumerate(K.tolist()):
        for s in mode.steps.tolist():
            if tuple(a + b for a, b in zip(p, s)) not in keys:
                keep.append(i)
                break
    return np.asarray(keep, dtype=np.int64)


def equilibrium_infinite(mode, K, tol=1e-6, table=None):
    """Equilibrium measure of a finite set from Green's function.

    Solves ``sum_y g(x - y) e_K(y) = 1`` for ``x`` in the part of ``K``
    that can be left in one jump (elsewhere ``e_K`` vanishes).
    """
    d = mode.d
    K = _as_points(K, d)
    supp = _escape_support(mode, K)
    S = K[supp]
    span = int(np.max(S.max(axis=0) - S.min(axis=0))) if S.shape[0] > 1 else 0
    if table is None or table.radius < span:
        table = green_table(mode, max(span, 2), tol)
    G = table.values[tuple((S[:, None, :] - S[None, :, :] + table.radius).transpose(2, 0, 1))]
    e = np.linalg.solve(G, np.ones(S.shape[0]))
    meas = np.zeros(K.shape[0])
    meas[supp] = e
    # propagate the Green error through the solve
    err = float(table.error * np.abs(np.linalg.solve(G, np.abs(G) @ np.abs(e))).sum() / max(np.abs(G).max(), 1e-300))
    return EquilibriumResult(K=K, box_radius=None, measure=meas, capacity=float(meas.sum()),
                             error=err, method="green")


def capacity_extrapolated(mode, K, tol=1e-3, max_radius=64, rtol=1e-10, max_order=3):
    """Capacity of ``K`` from relative capacities on a ladder of boxes.

    Boxes ``B(0, r 2^j)`` with ``r`` the radius of K. Relative capacities
    decrease to cap(K) with an error expanding in powers of ``1 / R``, so
    the ladder feeds a Richardson table (up to ``max_order`` terms); it
    stops once the two most recent extrapolants agree within relative
    ``tol``. The returned error is that last increment.

    Returns
    -------
    (capacity, error, ladder)
        ``ladder`` lists ``(R, relative capacity)``.

    Raises
    ------
    ToleranceUnreachable
        If ``max_radius`` is reached first.
    """
    d = mode.d
    K = _as_points(K, d)
    r = max(1, int(np.max(np.abs(K))))
    ladder = []
    table = []
    R = 2 * r
    while R <= max_radius:
        c = equilibrium(mode, K, R, rtol).capacity
        ladder.append((R, c))
        row = [c]
        if table:
            prev = table[-1]
            for k in range(1, min(len(prev), max_order) + 1):
                f = 2.0 ** k
                row.append((f * row[k - 1] - prev[k - 1]) / (f - 1.0))
        table.append(row)
        if len(table) >= 3:
            best, last = table[-1][-1], table[-2][-1]
            err = abs(best - last)
            if err <= tol * abs(best):
                return best, err, ladder
        R *= 2
    raise ToleranceUnreachable(
        f"capacity ladder reached radius {max_radius} without two extrapolants within {tol:g}: {ladder}"
    )


# ---------------------------------------------------------------------------
# hitting probability scaling


def _loglog_slope(xs, ys):
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    slope, intercept = np.polyfit(lx, ly, 1)
    return float(slope), float(intercept)


def hit_probability_scaling(mode, r1, r2_list, trials=20_000, seed=0, far_factor=2,
                            torus_n=None, horizon=None, budget=10**8):
    """Scaling of hitting and escape probabilities between two boxes.

    For each ``r2`` three estimates are formed from the start ``(r2+1) e_1``
    (and ``(r1+1) e_1`` for the escape probability):

    * ``hit``: P[H_{B(0,r1)} < infinity]. Walks stopped on leaving
      ``B(0, far_factor r2)`` are credited with the asymptotic return
      probability cap(B(0,r1)) g(y) from their exit point.
    * ``escape``: P[T_{B(0,r2)} < H_{B(0,r1)}].
    * ``torus_hit`` (when ``torus_n`` and ``horizon`` are given):
      P[H_{B(0,r1)} < horizon] on the torus of side ``torus_n``.

    Returns a JSON-ready report with log-log slopes: hit probability against
    ``r1 / r2`` (compare with ``d - 2``) and escape probability against
    ``r2 - r1`` (the lower bound ``1 / (r2 - r1 + c)`` is checked by the
    caller with a frozen constant).
    """
    d = mode.d
    r2_list = [int(r) for r in r2_list]
    if any(r2 < r1 for r2 in r2_list) or r1 < 1:
        raise PreconditionError("need 1 <= r1 <= r2")
    cap_inner = equilibrium_infinite(mode, box_points(d, r1)).capacity
    rows = []
    for r2 in r2_list:
        start = np.zeros(d, dtype=np.int64)
        start[0] = r2 + 1
        far = far_factor * r2 + 1
        vals = np.empty(trials)
        for i in range(trials):
            rng = stream(seed, i, f"hitscale/{r1}/{r2}")
            status, _, y = _kernels.zd_hit_or_exit(mode.steps, mode.cumulative, rng, start, r1, far, budget)
            if status < 0:
                raise StepBudgetExceeded("hit-probability walk exceeded its budget")
            vals[i] = 1.0 if status == 1 else min(1.0, cap_inner * float(green_asymptotic(mode, y)))
        inner = np.zeros(d, dtype=np.int64)
        inner[0] = r1 + 1
        esc = np.empty(trials)
        for i in range(trials):
            rng = stream(seed, i, f"escape/{r1}/{r2}")
            status, _, _ = _kernels.zd_hit_or_exit(mode.steps, mode.cumulative, rng, inner, r1, r2, budget)
            esc[i] = status == 0
        row = {
            "r1": r1, "r2": r2,
            "hit": float(vals.mean()), "hit_se": float(vals.std(ddof=1) / math.sqrt(trials)),
            "escape": float(esc.mean()), "escape_se": float(esc.std(ddof=1) / math.sqrt(trials)),
        }
        if torus_n is not None and horizon is not None:
            th = np.empty(trials)
            for i in range(trials):
                rng = stream(seed, i, f"torushit/{r1}/{r2}")
                th[i] = _kernels.zd_torus_hit_before(mode.steps, mode.cumulative, rng, start, r1,
                                                     int(torus_n), int(horizon))
            row["torus_hit"] = float(th.mean())
            row["torus_hit_se"] = float(th.std(ddof=1) / math.sqrt(trials))
        rows.append(row)
    ratios = [r1 / row["r2"] for row in rows]
    report = {"mode": mode.fingerprint, "d": d, "trials": trials, "seed": seed, "rows": rows}
    if len(rows) >= 2:
        report["hit_slope"], _ = _loglog_slope(ratios, [row["hit"] for row in rows])
        gaps = [row["r2"] - r1 for row in rows]
        if min(gaps) > 0 and min(row["escape"] for row in rows) > 0:
            report["escape_slope"], _ = _loglog_slope(gaps, [row["escape"] for row in rows])
    return report


def dump_report(report, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
