"""The walk killed on obstacle boxes and its quasistationary distribution.

Obstacles are l-infinity boxes around centres ``x_1, ..., x_n`` of the
torus. The walk restricted to the complement of the union of the boxes
``Xi^C`` has a symmetric substochastic jump matrix; its Perron vector,
normalised to a probability, is the quasistationary distribution sigma.

Box radii either follow the scale ladder ``s^(1 - eps0 / 2^k)`` in the
separation ``s`` of the centres, or are given explicitly, which is the
practical choice at desk scale where the ladder collapses.
"""

from __future__ import annotations

import csv
import dataclasses
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import DegenerateScale, Disconnected, NoConvergence, PreconditionError, StepBudgetExceeded
from .oracle import conditional_law, expected_absorption, hitting_chain
from .potential import box_points, equilibrium_infinite
from .rng import stream
from .walk import default_budget

__all__ = [
    "BOXES",
    "ObstacleGeometry",
    "SpectralSummary",
    "restricted_matrix",
    "perron_pair",
    "gap_scaling",
    "conditional_convergence",
    "hitting_from_sigma",
    "capacity_duality",
    "write_spectral_csv",
]

BOXES = "ABCDEF"


def _separation(geom, centers):
    if len(centers) == 1:
        return geom.N
    return min(geom.dist_inf(a, b) for i, a in enumerate(centers) for b in centers[i + 1:])


@dataclasses.dataclass(frozen=True)
class ObstacleGeometry:
    """Obstacle centres on a torus with their nested boxes.

    Attributes
    ----------
    geom : TorusGeometry
    centers : tuple of tuple
    radii : dict
        Box name (``"A"`` ... ``"F"``) to integer radius; at least ``"A"``
        and ``"C"`` are present.
    epsilon0 : float or None
        Scale exponent when the radii come from the ladder.
    separation : int
        Minimal pairwise torus distance of the centres, ``N`` for one centre.
    """

    geom: object
    centers: tuple
    radii: dict
    epsilon0: float | None
    separation: int

    @classmethod
    def from_epsilon(cls, geom, centers, epsilon0=0.1):
        """Radii ``floor(s^(1 - eps0 / 2^k))`` for the boxes A to F."""
        if not 0 < epsilon0 < 1:
            raise PreconditionError("epsilon0 must lie in (0, 1)")
        centers = _centers(geom, centers)
        s = _separation(geom, centers)
        radii = {b: int(math.floor(s ** (1.0 - epsilon0 / 2**k) + 1e-12)) for k, b in enumerate(BOXES)}
        return cls._checked(geom, centers, radii, epsilon0, s)

    @classmethod
    def explicit(cls, geom, centers, **radii):
        """Radii given by hand, e.g. ``explicit(geom, [(0, 0, 0)], A=0, C=4)``."""
        centers = _centers(geom, centers)
        bad = set(radii) - set(BOXES)
        if bad:
            raise PreconditionError(f"unknown boxes {sorted(bad)}")
        if "A" not in radii or "C" not in radii:
            raise PreconditionError("radii for boxes A and C are required")
        radii = {b: int(radii[b]) for b in BOXES if b in radii}
        return cls._checked(geom, centers, radii, None, _separation(geom, centers))

    @classmethod
    def _checked(cls, geom, centers, radii, epsilon0, s):
        seq = [radii[b] for b in BOXES if b in radii]
        if min(seq) < 0 or any(a >= b for a, b in zip(seq, seq[1:])):
            raise DegenerateScale(f"box radii {radii} are not strictly increasing")
        rc = radii["C"]
        if len(centers) > 1 and s <= 2 * rc:
            raise DegenerateScale(f"C boxes of radius {rc} overlap at separation {s}")
        if 2 * rc + 1 >= geom.N:
            raise DegenerateScale(f"a C box of radius {rc} covers the torus of side {geom.N}")
        return cls(geom, centers, radii, epsilon0, s)

    @property
    def n(self):
        return len(self.centers)

    def box(self, name):
        """Sorted site indices of the union of the ``name`` boxes."""
        r = self.radii[name]
        return np.unique(np.concatenate([self.geom.ball(c, r) for c in self.centers]))

    @property
    def removed(self):
        return self.box("C")


def _centers(geom, centers):
    cs = tuple(geom.reduce(c) for c in centers)
    if not cs:
        raise PreconditionError("no obstacle centres: the quasistationary law is undefined")
    if len(set(cs)) != len(cs):
        raise PreconditionError("obstacle centres must be distinct")
    return cs


def restricted_matrix(mode, geom, obstacles):
    """Jump matrix of the walk killed on entering the obstacles.

    Parameters
    ----------
    obstacles : ObstacleGeometry or array_like of site indices
        With an ObstacleGeometry the removed set is the union of C boxes.

    Returns
    -------
    (matrix, kept)
        CSR matrix on the remaining sites and their torus indices.

    Raises
    ------
    PreconditionError
        When nothing is removed.
    Disconnected
        When the remaining sites split into several classes.
    """
    removed = obstacles.removed if isinstance(obstacles, ObstacleGeometry) else np.asarray(obstacles, dtype=np.int64)
    if removed.size == 0:
        raise PreconditionError("empty obstacle: the quasistationary law is undefined")
    keep = np.ones(geom.size, dtype=bool)
    keep[removed] = False
    kept = np.flatnonzero(keep)
    pos = np.full(geom.size, -1, dtype=np.int64)
    pos[kept] = np.arange(kept.size)
    nbr = geom.neighbor_table(mode)[kept]
    rows = np.repeat(np.arange(kept.size), nbr.shape[1])
    cols = pos[nbr.ravel()]
    vals = np.tile(mode.step_probs, kept.size)
    ok = cols >= 0
    P = sp.csr_matrix((vals[ok], (rows[ok], cols[ok])), shape=(kept.size, kept.size))
    P.sum_duplicates()
    ncomp, _ = csgraph.connected_components(P, directed=False)
    if ncomp != 1:
        raise Disconnected(f"the complement of the obstacles has {ncomp} components")
    return P, kept


@dataclasses.dataclass(frozen=True, eq=False)
class SpectralSummary:
    """Top of the spectrum of a restricted chain.

    ``sigma`` is indexed like ``kept`` (torus site indices).
    """

    lambda1: float
    lambda2: float
    sigma: np.ndarray
    kept: np.ndarray
    iterations: int
    residual: float

    @property
    def gap(self):
        return self.lambda1 - self.lambda2


def perron_pair(matrix, tol=1e-10, kept=None):
    """Two largest eigenvalues and the quasistationary distribution.

    Uses implicitly restarted Lanczos (ARPACK) for large matrices and a
    dense solve below 64 states. ``iterations`` counts matrix-vector
    products.

    Raises
    ------
    NoConvergence
        If Lanczos stops early or the residual exceeds ``tol``.
    """
    n = matrix.shape[0]
    if n < 2:
        raise PreconditionError("need at least two states")
    count = [0]
    if n < 64:
        vals, vecs = np.linalg.eigh(matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix))
        order = np.argsort(vals)[::-1]
        lam, v = vals[order[:2]], vecs[:, order[0]]
    else:
        A = sp.csr_matrix(matrix)

        def mv(x):
            count[0] += 1
            return A @ x

        op = spla.LinearOperator((n, n), matvec=mv, dtype=float)
        # a generic start vector: a symmetric one would hide eigenvalues
        # of the other symmetry classes
        v0 = np.random.default_rng(12345).random(n) + 0.5
        try:
            vals, vecs = spla.eigsh(op, k=2, which="LA", tol=tol * 1e-3, v0=v0, maxiter=100 * n)
        except spla.ArpackNoConvergence as exc:
            raise NoConvergence(str(exc)) from exc
        order = np.argsort(vals)[::-1]
        lam, v = vals[order], vecs[:, order[0]]
    v = v * np.sign(v.sum())
    res = float(np.max(np.abs(matrix @ v - lam[0] * v)))
    if res > tol:
        raise NoConvergence(f"Perron residual {res:.2e} above {tol:g}")
    if np.any(v <= 0):
        raise NoConvergence("Perron vector is not strictly positive")
    sigma = v / v.sum()
    sigma = sigma / sigma.sum()
    kept = np.arange(n) if kept is None else np.asarray(kept)
    return SpectralSummary(float(lam[0]), float(lam[1]), sigma, kept, count[0], res)


def _central_box(geom, radius=1):
    return ObstacleGeometry.explicit(geom, [(geom.N // 2,) * geom.d], A=0, C=radius)


def gap_scaling(mode, n_values, template=None):
    """Spectral gap of the restricted chain across torus sizes.

    Parameters
    ----------
    n_values : sequence of int
        At least three side lengths.
    template : callable, optional
        ``template(geom) -> ObstacleGeometry``; by default one box of
        radius 1 at the centre.

    Returns
    -------
    dict
        ``rows`` with ``N, n, lambda1, lambda2, gap, gap_n2, min_sigma`` and
        the log-log ``exponent`` of the gap against N.
    """
    from .walk import TorusGeometry

    n_values = [int(v) for v in n_values]
    if len(n_values) < 3:
        raise PreconditionError("gap scaling needs at least three values of N")
    template = template or _central_box
    rows = []
    for N in n_values:
        geom = TorusGeometry(mode.d, N)
        obs = template(geom)
        P, kept = restricted_matrix(mode, geom, obs)
        s = perron_pair(P, kept=kept)
        rows.append({
            "N": N, "n": obs.n, "lambda1": s.lambda1, "lambda2": s.lambda2, "gap": s.gap,
            "gap_n2": s.gap * N**2, "min_sigma": float(s.sigma.min()),
        })
    slope = float(np.polyfit(np.log(n_values), np.log([r["gap"] for r in rows]), 1)[0])
    return {"rows": rows, "exponent": slope}


def conditional_convergence(mode, geom, obstacles, t_grid=None, time="continuous", floor=1e-10):
    """Distance of the conditioned law to sigma along a time grid.

    The conditioned law ``P_x[Y_t = . | no obstacle hit by t]`` is computed
    exactly by the oracle; the distance is the worst total variation over
    starting sites. The default grid is ``t_k = k ceil(N^2)``, k = 0..20.

    With ``time="continuous"`` (the default) the predicted decay factor
    per unit time is ``exp(-(lambda1 - lambda2))``; with ``time="jumps"``
    it is ``lambda2 / lambda1``, which requires an aperiodic jump chain.

    Returns
    -------
    dict
        ``t``, ``tv``, the measured per-unit ``rate`` between successive
        grid points whose TV exceeds ``floor``, the ``predicted`` rate and
        the spectral data.
    """
    P, kept = restricted_matrix(mode, geom, obstacles)
    summ = perron_pair(P, kept=kept)
    if t_grid is None:
        step = int(math.ceil(geom.N**2))
        t_grid = [k * step for k in range(21)]
    removed = np.setdiff1d(np.arange(geom.size), kept)
    spec = hitting_chain(mode, geom, removed)
    tv = []
    for t in t_grid:
        law = conditional_law(spec, t, time=time)
        if not np.array_equal(law.states, kept):
            raise PreconditionError("state order mismatch between oracle and restricted chain")
        tv.append(float(0.5 * np.abs(law.law - summ.sigma[None, :]).sum(axis=1).max()))
    rates = []
    for (t0, a), (t1, b) in zip(zip(t_grid, tv), zip(t_grid[1:], tv[1:])):
        if a > floor and b > floor and t1 > t0:
            rates.append((b / a) ** (1.0 / (t1 - t0)))
    if time == "continuous":
        predicted = math.exp(-(summ.lambda1 - summ.lambda2))
    else:
        predicted = summ.lambda2 / summ.lambda1
    return {
        "t": list(t_grid), "tv": tv, "rates": rates, "rate": rates[-1] if rates else float("nan"),
        "predicted": predicted, "lambda1": summ.lambda1, "lambda2": summ.lambda2,
        "ratio": summ.lambda2 / summ.lambda1, "time": time,
    }


def _normalized_equilibrium(mode, obstacles):
    """Sites of the A boxes with mass ``e(x - x_i) / (n cap)``."""
    geom = obstacles.geom
    pts = box_points(mode.d, obstacles.radii["A"])
    eq = equilibrium_infinite(mode, pts)
    ebar = np.zeros(geom.size)
    for c in obstacles.centers:
        ebar[geom.indices(eq.K + np.asarray(c))] += eq.measure / (obstacles.n * eq.capacity)
    return ebar, eq.capacity


def hitting_from_sigma(mode, geom, obstacles, walks=20_000, seed=0, min_expected=30, budget=None):
    """Entry law into the A boxes for walks started from sigma.

    Returns
    -------
    dict
        Entry ``counts`` per torus site, ``ebar`` (normalised equilibrium
        measure transported to the boxes), per-site ``ratio`` of empirical
        to predicted mass for sites with at least ``min_expected``
        expected hits, and ``max_deviation = max |ratio - 1|``.
    """
    P, kept = restricted_matrix(mode, geom, obstacles)
    summ = perron_pair(P, kept=kept)
    ebar, cap = _normalized_equilibrium(mode, obstacles)
    target = np.zeros(geom.size, dtype=np.bool_)
    target[obstacles.box("A")] = True
    nbr = geom.neighbor_table(mode)
    cum = np.cumsum(summ.sigma)
    cum[-1] = 1.0
    budget = default_budget(geom) if budget is None else budget
    counts = np.zeros(geom.size, dtype=np.int64)
    for i in range(walks):
        rng = stream(seed, i, "qsd/entry")
        start = kept[min(int(np.searchsorted(cum, rng.random(), side="right")), kept.size - 1)]
        k, site = _kernels.torus_hit_entry(nbr, mode.cumulative, rng, start, target, budget)
        if k < 0:
            raise StepBudgetExceeded("walk from sigma never entered the A boxes")
        counts[site] += 1
    expected = walks * ebar
    sites = np.flatnonzero(expected >= min_expected)
    ratio = counts[sites] / expected[sites]
    return {
        "walks": walks, "counts": counts, "ebar": ebar, "sites": sites, "ratio": ratio,
        "max_deviation": float(np.max(np.abs(ratio - 1.0))) if sites.size else float("nan"),
        "total": float(counts.sum() / walks), "capacity": cap,
    }


def capacity_duality(mode, geom, obstacles, walks=10_000, seed=0, exact=True, budget=None):
    """Mean hitting time of the A boxes against their total capacity.

    ``E[H_V]`` (uniform start, V the union of A boxes) is estimated by the
    mean jump count, which equals the mean continuous time under unit
    holding rate. The ratio ``N^d / (E[H_V] sum_i cap(V_i))`` is reported
    with its delta-method SE. With ``exact`` the full vector ``E_x[H_V]``
    also comes from the sparse oracle solve, giving the exact ratio and
    ``sup_x E_x[H_V] / inf_{x outside the C boxes} E_x[H_V]``.
    """
    V = obstacles.box("A")
    target = np.zeros(geom.size, dtype=np.bool_)
    target[V] = True
    nbr = geom.neighbor_table(mode)
    budget = default_budget(geom) if budget is None else budget
    cap = equilibrium_infinite(mode, box_points(mode.d, obstacles.radii["A"])).capacity
    total_cap = obstacles.n * cap
    h = np.empty(walks)
    for i in range(walks):
        rng = stream(seed, i, "qsd/duality")
        start = int(rng.integers(geom.size))
        k, _ = _kernels.torus_hit_entry(nbr, mode.cumulative, rng, start, target, budget)
        if k < 0:
            raise StepBudgetExceeded("hitting walk exceeded its budget")
        h[i] = k
    mean = float(h.mean())
    se = float(h.std(ddof=1) / math.sqrt(walks))
    ratio = geom.size / (mean * total_cap)
    out = {
        "N": geom.N, "n": obstacles.n, "capacity": cap, "mean_hit": mean, "mean_hit_se": se,
        "ratio": ratio, "ratio_se": ratio * se / mean, "walks": walks,
    }
    if exact:
        hx = expected_absorption(hitting_chain(mode, geom, V))
        outside = np.ones(geom.size, dtype=bool)
        outside[obstacles.removed] = False
        out["exact_mean_hit"] = float(hx.mean())
        out["exact_ratio"] = geom.size / (float(hx.mean()) * total_cap)
        out["sup_inf_ratio"] = float(hx.max() / hx[outside].min())
    return out


def write_spectral_csv(rows, path):
    """``N,n,lambda1,lambda2,gap,minSigma`` rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "n", "lambda1", "lambda2", "gap", "minSigma"])
        for r in rows:
            w.writerow([r["N"], r["n"], repr(float(r["lambda1"])), repr(float(r["lambda2"])),
                        repr(float(r["gap"])), repr(float(r["min_sigma"]))])
