"""Vacancy sandwich between the torus walk and random interlacements.

Around well separated centres ``x_i`` the trace of the walk run up to
time ``u N^d`` should look like independent interlacements: for every
small probe set S inside the box ``Xi^A``

    Q[S misses I^{u(1+delta)}] <~ P[S misses Y(0, u N^d) - x_i] <~ Q[S misses I^{u(1-delta)}].

The audit estimates the middle term by simulation and the two bounds
from one interlacement sample per replicate at level ``u(1+delta)``,
thinned to ``u(1-delta)``. Interlacement vacancies only depend on the
shape of S, so they are sampled once per shape on a small window.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math

import numpy as np

from . import _kernels
from .errors import PreconditionError, SeparationTooSmall
from .interlacements import prepare_window, vacancy_batch
from .parallel import replicate_map
from .potential import box_points, equilibrium_infinite
from .rng import stream
from .walk import TorusGeometry

__all__ = [
    "Probe",
    "SandwichReport",
    "box_radius",
    "default_probes",
    "audit",
    "cross_box_independence",
    "write_sandwich_csv",
]

AXIS_PAIR = "pair"


@dataclasses.dataclass(frozen=True)
class Probe:
    """A probe set: offsets from its box centre, and the box index."""

    box: int
    offsets: tuple
    kind: str

    @property
    def shape(self):
        """Offsets translated so that their lexicographic minimum is 0."""
        pts = np.asarray(self.offsets, dtype=np.int64)
        base = pts[np.lexsort(pts.T[::-1])[0]]
        return tuple(sorted(tuple(int(c) for c in p - base) for p in pts))


def box_radius(separation, epsilon0):
    """Radius ``floor(s^(1 - eps0))`` of the inner box."""
    return int(math.floor(separation ** (1.0 - epsilon0) + 1e-12))


def default_probes(d, radius, n_boxes):
    """Per box: every singleton and axis nearest-neighbour pair inside
    B(0, radius), one L-shaped triple and one 2x2 square (the latter two
    at the centre)."""
    pts = box_points(d, radius)
    probes = []
    e = np.eye(d, dtype=np.int64)
    for b in range(n_boxes):
        probes += [Probe(b, (tuple(int(c) for c in p),), "singleton") for p in pts]
        for j in range(d):
            for p in pts:
                q = p + e[j]
                if np.max(np.abs(q)) <= radius:
                    probes.append(Probe(b, (tuple(int(c) for c in p), tuple(int(c) for c in q)), AXIS_PAIR))
        if radius >= 1:
            o = np.zeros(d, dtype=np.int64)
            probes.append(Probe(b, tuple(tuple(int(c) for c in v) for v in (o, e[0], e[0] + e[1])), "L-triple"))
            probes.append(Probe(b, tuple(tuple(int(c) for c in v) for v in (o, e[0], e[1], e[0] + e[1])), "square"))
    return probes


@dataclasses.dataclass
class SandwichReport:
    """Per-probe walk vacancy with its interlacement bounds.

    ``lower`` comes from level ``u(1+delta)``, ``upper`` from ``u(1-delta)``;
    ``*_exact`` are ``exp(-level cap(S))``.
    """

    geometry: dict
    probes: list
    walk: np.ndarray
    walk_se: np.ndarray
    lower: np.ndarray
    lower_se: np.ndarray
    upper: np.ndarray
    upper_se: np.ndarray
    lower_exact: np.ndarray
    upper_exact: np.ndarray
    flags: np.ndarray
    slack: float

    @property
    def violations(self):
        return int(self.flags.sum())

    def summary(self):
        kinds = sorted({p.kind for p in self.probes})
        by_kind = {}
        for k in kinds:
            sel = np.array([p.kind == k for p in self.probes])
            by_kind[k] = {
                "count": int(sel.sum()), "walk_mean": float(self.walk[sel].mean()),
                "lower": float(self.lower[sel].mean()), "upper": float(self.upper[sel].mean()),
                "violations": int(self.flags[sel].sum()),
            }
        return {"geometry": self.geometry, "slack": self.slack, "probes": len(self.probes),
                "violations": self.violations, "by_kind": by_kind}


def _probe_matrix(geom, centers, probes):
    width = max(len(p.offsets) for p in probes)
    mat = np.empty((len(probes), width), dtype=np.int64)
    for i, p in enumerate(probes):
        idx = geom.indices(np.asarray(p.offsets) + np.asarray(centers[p.box]))
        mat[i, : idx.size] = idx
        mat[i, idx.size:] = idx[0]
    return mat


def _walk_vacancies(mode, geom, u, mat, replicates, seed, threads, tag):
    """Per-replicate vacancy indicators of each probe row of ``mat``."""
    nbr = geom.neighbor_table(mode)
    horizon = u * geom.size

    def one(i):
        rng = stream(seed, i, tag)
        pos = int(rng.integers(geom.size))
        n = int(rng.poisson(horizon)) if horizon > 0 else 0
        visited = np.zeros(geom.size, dtype=np.uint8)
        _kernels.torus_visit_marks(nbr, mode.cumulative, rng, pos, n, visited)
        return ~visited[mat].any(axis=1)

    return np.array(replicate_map(one, replicates, threads))


def _check_boxes(geom, centers, radius):
    if len(centers) > 1:
        s = min(geom.dist_inf(a, b) for i, a in enumerate(centers) for b in centers[i + 1:])
        if s <= 2 * radius:
            raise SeparationTooSmall(f"boxes of radius {radius} overlap at separation {s}")
    else:
        s = geom.N
    if 2 * radius + 1 > geom.N:
        raise SeparationTooSmall(f"a box of radius {radius} wraps the torus of side {geom.N}")
    return s


def _separation(geom, centers):
    if len(centers) == 1:
        return geom.N
    return min(geom.dist_inf(a, b) for i, a in enumerate(centers) for b in centers[i + 1:])


def audit(mode, N, centers, epsilon0=0.3, u=1.0, delta=0.3, probes=None, replicates=5000,
          interlace_samples=50_000, seed=0, threads=None, slack=0.01, radius=None):
    """Check the vacancy sandwich on every probe set.

    Parameters
    ----------
    centers : list of points
    epsilon0 : float
        Sets the inner box radius ``floor(s^(1 - eps0))`` unless ``radius``
        is given.
    probes : list of Probe, optional
        Default :func:`default_probes`.

    Returns
    -------
    SandwichReport

    Raises
    ------
    SeparationTooSmall
        When the boxes around different centres overlap.
    """
    if not 0 < delta <= 1:
        raise PreconditionError("delta must lie in (0, 1]")
    if u <= 0:
        raise PreconditionError("u must be positive")
    geom = TorusGeometry(mode.d, int(N))
    centers = [geom.reduce(c) for c in centers]
    s = _separation(geom, centers)
    r = box_radius(s, epsilon0) if radius is None else int(radius)
    _check_boxes(geom, centers, r)
    probes = default_probes(mode.d, r, len(centers)) if probes is None else list(probes)
    for p in probes:
        if np.max(np.abs(np.asarray(p.offsets))) > r:
            raise PreconditionError(f"probe {p.offsets} leaves the box of radius {r}")
        if len(p.offsets) > 4:
            raise PreconditionError("probes have at most four points")

    mat = _probe_matrix(geom, centers, probes)
    ind = _walk_vacancies(mode, geom, u, mat, replicates, seed, threads, "couple/walk")
    walk = ind.mean(axis=0)
    walk_se = np.sqrt(walk * (1 - walk) / replicates)

    shapes = sorted({p.shape for p in probes})
    span = max(max(max(abs(c) for c in q) for q in sh) for sh in shapes)
    window = prepare_window(mode, box_points(mode.d, max(span, 1)))
    hi, lo = u * (1 + delta), u * (1 - delta)
    vb = vacancy_batch(window, [list(sh) for sh in shapes], [hi, lo], interlace_samples, seed, "couple/interlace")
    caps = [equilibrium_infinite(mode, np.asarray(sh)).capacity for sh in shapes]
    pos = {sh: i for i, sh in enumerate(shapes)}
    k = np.array([pos[p.shape] for p in probes])
    lower, lower_se = vb["vacancy"][k, 0], vb["se"][k, 0]
    upper, upper_se = vb["vacancy"][k, 1], vb["se"][k, 1]
    caps = np.asarray(caps)[k]
    tol = slack + window.bias
    flags = (walk < lower - 3 * np.hypot(walk_se, lower_se) - tol) | (walk > upper + 3 * np.hypot(walk_se, upper_se) + tol)
    geometry = {"N": int(N), "d": mode.d, "n": len(centers), "centers": centers, "separation": s,
                "epsilon0": epsilon0 if radius is None else None, "radius": r, "u": u, "delta": delta,
                "replicates": replicates, "interlace_samples": interlace_samples, "seed": seed}
    return SandwichReport(
        geometry=geometry, probes=probes, walk=walk, walk_se=walk_se, lower=lower, lower_se=lower_se,
        upper=upper, upper_se=upper_se, lower_exact=np.exp(-hi * caps), upper_exact=np.exp(-lo * caps),
        flags=flags, slack=tol,
    )


def cross_box_independence(mode, N, centers, u=1.0, replicates=5000, seed=0, threads=None, probes=None):
    """Correlation of vacancy indicators of probes in different boxes.

    By default the probe of box i is the single centre ``x_i``. Returns the
    correlation matrix with standard errors ``(1 - r^2) / sqrt(n - 1)``;
    entries are ``None`` when an indicator is constant (e.g. ``u = 0``).
    """
    geom = TorusGeometry(mode.d, int(N))
    centers = [geom.reduce(c) for c in centers]
    if len(centers) < 2:
        raise PreconditionError("need at least two centres")
    s = _separation(geom, centers)
    if s == 0:
        raise SeparationTooSmall("centres coincide")
    if probes is None:
        probes = [Probe(b, ((0,) * mode.d,), "singleton") for b in range(len(centers))]
    mat = _probe_matrix(geom, centers, probes)
    ind = _walk_vacancies(mode, geom, u, mat, replicates, seed, threads, "couple/independence").astype(float)
    m = len(probes)
    corr = [[None] * m for _ in range(m)]
    se = [[None] * m for _ in range(m)]
    sd = ind.std(axis=0)
    for a in range(m):
        for b in range(m):
            if sd[a] > 0 and sd[b] > 0:
                r = float(np.corrcoef(ind[:, a], ind[:, b])[0, 1])
                corr[a][b] = r
                se[a][b] = (1 - r * r) / math.sqrt(replicates - 1)
    return {"N": int(N), "u": u, "separation": s, "replicates": replicates,
            "probes": [(p.box, p.offsets) for p in probes], "vacancy": ind.mean(axis=0).tolist(),
            "corr": corr, "se": se}


def write_sandwich_csv(report, path):
    """``probe,box,lower,walk,upper,lowerSE,walkSE,upperSE,flag`` rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["probe", "box", "lower", "walk", "upper", "lowerSE", "walkSE", "upperSE", "flag"])
        for i, p in enumerate(report.probes):
            w.writerow([i, p.box] + [repr(float(x)) for x in (
                report.lower[i], report.walk[i], report.upper[i],
                report.lower_se[i], report.walk_se[i], report.upper_se[i])] + [int(report.flags[i])])


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=lambda x: x.tolist() if hasattr(x, "tolist") else str(x))
