"""Moving modes, torus geometry and exact simulation of the torus walk.

The walk jumps by ``+v`` or ``-v`` with probability ``kappa(v) / 2`` each.
Rates sum to one, so every holding time is an independent Exp(1) variable
and the continuous-time process is the embedded jump chain run on a Poisson
clock. Simulations therefore only draw jumps; elapsed time is attached
afterwards as Gamma variates over blocks of jumps.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from fractions import Fraction
from functools import cached_property

import numpy as np

from . import _kernels
from .errors import (
    BadOrientation,
    BadWeights,
    ModeFileError,
    NotGenerating,
    PreconditionError,
    StepBudgetExceeded,
)

__all__ = [
    "MovingMode",
    "TorusGeometry",
    "Trajectory",
    "TraceSet",
    "HitResult",
    "CoverResult",
    "FixedTime",
    "FixedJumps",
    "HitSet",
    "Coverage",
    "ExitSet",
    "validate_mode",
    "lattice_index",
    "named_mode",
    "parse_mode_text",
    "load_mode_file",
    "simulate_until",
    "hitting_time",
    "cover_time",
    "default_budget",
]

_CHUNK = 1 << 20


# ---------------------------------------------------------------------------
# moving mode


@dataclasses.dataclass(frozen=True)
class MovingMode:
    """Generating set ``V`` of jump vectors with their rates ``kappa``.

    Construct through :func:`validate_mode`, :func:`named_mode` or
    :func:`parse_mode_text`; the bare constructor only normalises types.
    """

    vectors: tuple
    weights: tuple

    def __post_init__(self):
        vecs = tuple(tuple(int(c) for c in v) for v in self.vectors)
        object.__setattr__(self, "vectors", vecs)
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def d(self):
        return len(self.vectors[0])

    @property
    def n_vectors(self):
        return len(self.vectors)

    @cached_property
    def steps(self):
        """(2m, d) int64 array; row ``2i`` is ``+v_i`` and row ``2i+1`` is ``-v_i``."""
        out = np.empty((2 * self.n_vectors, self.d), dtype=np.int64)
        for i, v in enumerate(self.vectors):
            out[2 * i] = v
            out[2 * i + 1] = [-c for c in v]
        return out

    @cached_property
    def step_probs(self):
        return np.repeat(np.asarray(self.weights) / 2.0, 2)

    @cached_property
    def cumulative(self):
        c = np.cumsum(self.step_probs)
        c[-1] = 1.0
        return c

    @cached_property
    def covariance(self):
        """Per-jump covariance ``sum_v kappa(v) v v^T``."""
        v = np.asarray(self.vectors, dtype=float)
        return (v.T * np.asarray(self.weights)) @ v

    @property
    def range(self):
        return max(max(abs(c) for c in v) for v in self.vectors)

    @cached_property
    def fingerprint(self):
        h = hashlib.sha256(repr((self.vectors, self.weights)).encode()).hexdigest()
        return h[:16]

    def describe(self):
        return {"vectors": [list(v) for v in self.vectors], "weights": list(self.weights)}


def lattice_index(vectors, d):
    """Rank and index of the integer lattice spanned by ``vectors``.

    Row-reduces the integer matrix to Hermite normal form. The index is the
    product of the absolute pivots, so ``(d, 1)`` means the vectors generate
    all of Z^d.
    """
    rows = [list(v) for v in vectors]
    r = 0
    pivots = []
    for col in range(d):
        while True:
            nz = [i for i in range(r, len(rows)) if rows[i][col] != 0]
            if not nz:
                break
            piv = min(nz, key=lambda i: abs(rows[i][col]))
            rows[r], rows[piv] = rows[piv], rows[r]
            clean = True
            for i in range(r + 1, len(rows)):
                q = rows[i][col] // rows[r][col]
                if q:
                    rows[i] = [a - q * b for a, b in zip(rows[i], rows[r])]
                if rows[i][col] != 0:
                    clean = False
            if clean:
                break
        if r < len(rows) and rows[r][col] != 0:
            pivots.append(abs(rows[r][col]))
            r += 1
    rank = len(pivots)
    index = math.prod(pivots) if rank == d else 0
    return rank, index


def validate_mode(mode, line=None):
    """Return ``mode`` unchanged if it satisfies every invariant.

    Raises
    ------
    BadOrientation
        A vector is zero or its first nonzero component is negative.
    BadWeights
        A rate is nonpositive or the rates do not sum to one.
    NotGenerating
        The vectors span a proper sublattice of Z^d, or have rank < d.
    """
    if not mode.vectors:
        raise NotGenerating("empty set of jump vectors", line)
    d = mode.d
    seen = set()
    for v in mode.vectors:
        if len(v) != d:
            raise BadOrientation(f"vector {v} has dimension {len(v)}, expected {d}", line)
        nz = [c for c in v if c != 0]
        if not nz:
            raise BadOrientation("zero vector in generating set", line)
        if nz[0] < 0:
            raise BadOrientation(f"first nonzero component of {v} is negative", line)
        if v in seen:
            raise BadOrientation(f"duplicate vector {v}", line)
        seen.add(v)
    if len(mode.weights) != len(mode.vectors):
        raise BadWeights("number of weights differs from number of vectors", line)
    if any(not (w > 0) for w in mode.weights):
        raise BadWeights("weights must be strictly positive", line)
    if abs(sum(mode.weights) - 1.0) > 1e-12:
        raise BadWeights(f"weights sum to {sum(mode.weights)!r}, expected 1", line)
    rank, index = lattice_index(mode.vectors, d)
    if rank < d:
        raise NotGenerating(f"vectors have rank {rank} < {d}", line)
    if index != 1:
        raise NotGenerating(f"vectors generate a sublattice of index {index}", line)
    return mode


def _basis(d, i):
    return tuple(1 if j == i else 0 for j in range(d))


def named_mode(name):
    """Built-in modes: ``srw<d>`` (nearest neighbour) and ``diag<d>``
    (canonical basis plus the all-ones vector, equal rates)."""
    if name.startswith("srw"):
        d = int(name[3:])
        vecs = [_basis(d, i) for i in range(d)]
    elif name.startswith("diag"):
        d = int(name[4:])
        vecs = [_basis(d, i) for i in range(d)] + [tuple([1] * d)]
    else:
        raise ModeFileError(f"unknown mode name {name!r}")
    w = [1.0 / len(vecs)] * len(vecs)
    w[-1] = 1.0 - sum(w[:-1])
    return validate_mode(MovingMode(tuple(vecs), tuple(w)))


def _parse_weight(tok, line):
    try:
        return Fraction(tok.strip())
    except (ValueError, ZeroDivisionError):
        raise ModeFileError(f"cannot parse weight {tok!r}", line) from None


def parse_mode_text(text):
    """Parse the key-value text of a mode file.

    Keys: ``d``, ``N`` (optional), ``vectors`` (``;``-separated,
    components comma-separated) and ``weights`` (comma-separated decimals or
    fractions such as ``1/3``). ``#`` starts a comment.

    Returns
    -------
    (MovingMode, int or None)
        The validated mode and the torus side if given.
    """
    fields = {}
    lines = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise ModeFileError(f"expected 'key = value', got {s!r}", no)
        key, val = (t.strip() for t in s.split("=", 1))
        if key not in ("d", "N", "vectors", "weights"):
            raise ModeFileError(f"unknown key {key!r}", no)
        if key in fields:
            raise ModeFileError(f"duplicate key {key!r}", no)
        fields[key] = val
        lines[key] = no
    for key in ("d", "vectors", "weights"):
        if key not in fields:
            raise ModeFileError(f"missing required key {key!r}")
    try:
        d = int(fields["d"])
    except ValueError:
        raise ModeFileError(f"d must be an integer, got {fields['d']!r}", lines["d"]) from None
    if d < 3:
        raise ModeFileError(f"d must be at least 3, got {d}", lines["d"])
    n_side = None
    if "N" in fields:
        try:
            n_side = int(fields["N"])
        except ValueError:
            raise ModeFileError(f"N must be an integer, got {fields['N']!r}", lines["N"]) from None
        if n_side < 3:
            raise ModeFileError(f"N must be at least 3, got {n_side}", lines["N"])
    vecs = []
    for chunk in fields["vectors"].split(";"):
        try:
            v = tuple(int(c) for c in chunk.split(","))
        except ValueError:
            raise ModeFileError(f"cannot parse vector {chunk.strip()!r}", lines["vectors"]) from None
        if len(v) != d:
            raise ModeFileError(f"vector {v} does not have {d} components", lines["vectors"])
        vecs.append(v)
    weights = [_parse_weight(t, lines["weights"]) for t in fields["weights"].split(",")]
    if len(weights) != len(vecs):
        raise BadWeights(f"{len(weights)} weights for {len(vecs)} vectors", lines["weights"])
    if sum(weights) != 1 and abs(float(sum(weights)) - 1.0) > 1e-12:
        raise BadWeights(f"weights sum to {float(sum(weights))!r}, expected 1", lines["weights"])
    if any(w <= 0 for w in weights):
        raise BadWeights("weights must be strictly positive", lines["weights"])
    fw = [float(w) for w in weights]
    # exact rationals summing to one may round to 1 +- ulp; absorb into the last rate
    fw[-1] = float(1 - sum(weights[:-1])) if sum(weights) == 1 else fw[-1]
    mode = MovingMode(tuple(vecs), tuple(fw))
    validate_mode(mode, line=lines["vectors"])
    return mode, n_side


def load_mode_file(path):
    with open(path, encoding="utf-8") as fh:
        return parse_mode_text(fh.read())


# ---------------------------------------------------------------------------
# torus


@dataclasses.dataclass(frozen=True)
class TorusGeometry:
    """The discrete torus (Z / N Z)^d with lexicographic site numbering.

    ``N = 2`` is accepted so that tiny instances can be solved exactly.
    """

    d: int
    N: int

    def __post_init__(self):
        if self.d < 3:
            raise PreconditionError(f"dimension must be at least 3, got {self.d}")
        if self.N < 2:
            raise PreconditionError(f"side length must be at least 2, got {self.N}")

    @property
    def shape(self):
        return (self.N,) * self.d

    @property
    def size(self):
        return self.N**self.d

    def reduce(self, point):
        return tuple(int(c) % self.N for c in point)

    def index(self, point):
        return int(np.ravel_multi_index(self.reduce(point), self.shape))

    def indices(self, points):
        pts = np.asarray(points, dtype=np.int64).reshape(-1, self.d) % self.N
        return np.ravel_multi_index(tuple(pts.T), self.shape).astype(np.int64)

    def point(self, index):
        return tuple(int(c) for c in np.unravel_index(int(index), self.shape))

    def points(self, indices):
        return np.stack(np.unravel_index(np.asarray(indices, dtype=np.int64), self.shape), axis=-1)

    def dist_inf(self, x, y):
        diff = np.abs(np.asarray(self.reduce(x)) - np.asarray(self.reduce(y)))
        return int(np.max(np.minimum(diff, self.N - diff)))

    def ball(self, center, r):
        """Sorted site indices of the closed l-infinity ball B(center, r)."""
        r = int(r)
        if 2 * r + 1 >= self.N:
            return np.arange(self.size, dtype=np.int64)
        offs = np.arange(-r, r + 1)
        grids = np.meshgrid(*([offs] * self.d), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1) + np.asarray(center)
        return np.unique(self.indices(pts))

    def neighbor_table(self, mode):
        """(N^d, 2m) int64 table: entry ``[x, k]`` is the site reached from
        ``x`` by direction ``k`` of ``mode``."""
        return _neighbor_table(self, mode)


_NBR_CACHE = {}


def _neighbor_table(geom, mode):
    key = (geom, mode)
    tab = _NBR_CACHE.get(key)
    if tab is None:
        coords = geom.points(np.arange(geom.size))
        tab = np.empty((geom.size, mode.steps.shape[0]), dtype=np.int64)
        for k, s in enumerate(mode.steps):
            tab[:, k] = geom.indices(coords + s)
        if len(_NBR_CACHE) > 16:
            _NBR_CACHE.clear()
        _NBR_CACHE[key] = tab
    return tab


def default_budget(geom):
    """Safety cap on jumps: 10^4 N^d (1 + log N^d)."""
    n = geom.size
    return int(1e4 * n * (1.0 + math.log(n)))


# ---------------------------------------------------------------------------
# trajectories and traces


@dataclasses.dataclass
class Trajectory:
    """A torus path: start site and the direction index of every jump.

    Direction ``k`` stands for vector ``k // 2`` with sign ``+`` for even
    ``k``. ``holding_time_sum`` is the continuous time of the last jump.
    """

    start: tuple
    directions: np.ndarray | None
    jump_count: int
    holding_time_sum: float

    @property
    def jumps(self):
        if self.directions is None:
            return None
        return [(int(k) // 2, 1 if k % 2 == 0 else -1) for k in self.directions]

    def positions(self, mode, geom):
        """Site indices after 0, 1, ..., jump_count jumps."""
        if self.directions is None:
            raise PreconditionError("trajectory was simulated without recording jumps")
        disp = mode.steps[self.directions.astype(np.int64)]
        pts = np.cumsum(np.vstack([np.asarray(self.start)[None, :], disp]), axis=0)
        return geom.indices(pts)


@dataclasses.dataclass
class TraceSet:
    """Sites of a window visited by a path, with their first-hit times.

    ``sites`` and ``times`` are parallel arrays ordered by first visit.
    """

    geom: TorusGeometry
    window: np.ndarray | None
    sites: np.ndarray
    times: np.ndarray
    first_jumps: np.ndarray

    @property
    def covered_count(self):
        return int(self.sites.shape[0])

    @cached_property
    def first_hit_time(self):
        return {self.geom.point(s): float(t) for s, t in zip(self.sites, self.times)}

    def __contains__(self, point):
        return self.geom.index(point) in set(self.sites.tolist())


@dataclasses.dataclass(frozen=True)
class HitResult:
    time: float
    site: tuple
    jumps: int


@dataclasses.dataclass(frozen=True)
class CoverResult:
    time: float
    jumps: int
    last_site: tuple


# stopping rules


@dataclasses.dataclass(frozen=True)
class FixedTime:
    T: float


@dataclasses.dataclass(frozen=True)
class FixedJumps:
    n: int


@dataclasses.dataclass(frozen=True)
class HitSet:
    """Stop on entering ``K``; ``variant="return"`` ignores time 0."""

    K: object
    variant: str = "entrance"


@dataclasses.dataclass(frozen=True)
class Coverage:
    F: object


@dataclasses.dataclass(frozen=True)
class ExitSet:
    A: object


def _as_sites(geom, sites):
    """Normalise points or site indices to a sorted unique index array."""
    if sites is None:
        return np.arange(geom.size, dtype=np.int64)
    arr = np.asarray(sites, dtype=np.int64)
    if arr.ndim == 2 or (arr.ndim == 1 and isinstance(sites, tuple) and len(sites) == geom.d
                         and not isinstance(sites[0], (tuple, list, np.ndarray))):
        arr = geom.indices(arr.reshape(-1, geom.d))
    return np.unique(arr)


def _bitset(geom, sites):
    bits = np.zeros((geom.size + 63) // 64, dtype=np.uint64)
    if sites.size:
        np.bitwise_or.at(bits, sites >> 6, np.left_shift(np.uint64(1), (sites & 63).astype(np.uint64)))
    return bits


def _start_index(geom, start, rng):
    if isinstance(start, str):
        if start != "uniform":
            raise PreconditionError(f"unknown start distribution {start!r}")
        return int(rng.integers(geom.size))
    if isinstance(start, (int, np.integer)):
        return int(start) % geom.size
    return geom.index(start)


def _block_times(rng, first_jumps, total_jumps, horizon=None):
    """Continuous times of the jumps listed in ``first_jumps`` (sorted).

    Increments between consecutive listed jump indices are independent
    Gamma variates. For a fixed horizon ``T`` the jump times are the order
    statistics of a Poisson process given ``total_jumps`` points in
    ``[0, T]``: the Gamma partial sums are rescaled by ``T / S_{J+1}``.

    Returns the times and the time of the final jump.
    """
    idx = np.asarray(first_jumps, dtype=np.int64)
    pos = idx[idx > 0]
    last = int(pos[-1]) if pos.size else 0
    shapes = np.diff(np.concatenate([[0], pos]))
    extra = [total_jumps - last] + ([1] if horizon is not None else [])
    shapes = np.concatenate([shapes, extra]).astype(float)
    partial = np.cumsum(rng.gamma(shapes))
    if horizon is not None:
        partial *= horizon / partial[-1]
        last_t = float(partial[-2])
    else:
        last_t = float(partial[-1])
    times = np.zeros(idx.shape[0])
    times[idx > 0] = partial[: pos.size]
    return times, last_t


def simulate_until(mode, geom, start, stop, rng, *, window=None, record=True, budget=None):
    """Simulate the torus walk until ``stop`` and return its path and trace.

    Parameters
    ----------
    mode : MovingMode
    geom : TorusGeometry
    start : point, site index or ``"uniform"``
    stop : FixedTime, FixedJumps, HitSet, Coverage or ExitSet
    rng : numpy.random.Generator
    window : iterable of points or site indices, optional
        Sites whose first visits are recorded; default is the whole torus.
    record : bool
        Keep the direction of every jump in the returned Trajectory.
    budget : int, optional
        Maximum number of jumps (default :func:`default_budget`).

    Returns
    -------
    (Trajectory, TraceSet)

    Raises
    ------
    StepBudgetExceeded
        If the stopping rule is not met within the budget.
    """
    budget = default_budget(geom) if budget is None else int(budget)
    nbr = geom.neighbor_table(mode)
    cum = mode.cumulative
    pos = _start_index(geom, start, rng)
    start_pt = geom.point(pos)

    horizon = None
    n_fixed = None
    needed = 0
    target_sites = np.empty(0, dtype=np.int64)
    if isinstance(stop, FixedTime):
        if stop.T < 0:
            raise PreconditionError("horizon must be nonnegative")
        horizon = float(stop.T)
        n_fixed = int(rng.poisson(horizon)) if horizon > 0 else 0
    elif isinstance(stop, FixedJumps):
        n_fixed = int(stop.n)
    elif isinstance(stop, HitSet):
        target_sites = _as_sites(geom, stop.K)
        if target_sites.size == 0:
            raise PreconditionError("target set is empty")
        if stop.variant not in ("entrance", "return"):
            raise PreconditionError(f"unknown hitting variant {stop.variant!r}")
        if stop.variant == "entrance" and pos in set(target_sites.tolist()):
            n_fixed = 0
        needed = 1
    elif isinstance(stop, Coverage):
        target_sites = _as_sites(geom, stop.F)
        if target_sites.size == 0:
            raise PreconditionError("target set is empty")
        target_sites = target_sites[target_sites != pos]
        needed = int(target_sites.size)
        if needed == 0:
            n_fixed = 0
    elif isinstance(stop, ExitSet):
        inside = np.zeros(geom.size, dtype=bool)
        inside[_as_sites(geom, stop.A)] = True
        target_sites = np.flatnonzero(~inside)
        if not inside[pos]:
            n_fixed = 0
        needed = 1
    else:
        raise PreconditionError(f"unknown stopping rule {stop!r}")

    target = _bitset(geom, target_sites)
    win = _as_sites(geom, window)
    first = np.full(geom.size, -2, dtype=np.int64)
    first[win] = -1
    if first[pos] == -1:
        first[pos] = 0

    chunks = []
    total = 0
    last_hit = -1
    limit = n_fixed if n_fixed is not None else budget
    hit_mode = n_fixed is None
    while total < limit:
        n = min(_CHUNK, limit - total)
        dirs = np.empty(n if record else 0, dtype=np.int8)
        k, pos, needed, lh = _kernels.torus_chunk(
            nbr, cum, rng, pos, n, target, needed, first, total, dirs, hit_mode
        )
        if lh >= 0:
            last_hit = lh
        if record:
            chunks.append(dirs[:k])
        total += k
        if hit_mode and needed == 0:
            break
    if hit_mode and needed > 0:
        raise StepBudgetExceeded(f"stopping rule not met after {budget} jumps")

    directions = np.concatenate(chunks) if record and chunks else (np.empty(0, dtype=np.int8) if record else None)
    visited = np.flatnonzero(first >= 0)
    fj = first[visited]
    order = np.argsort(fj, kind="stable")
    sites = visited[order]
    fj = fj[order]
    times, last_t = _block_times(rng, fj, total, horizon)
    traj = Trajectory(start=start_pt, directions=directions, jump_count=total, holding_time_sum=last_t)
    trace = TraceSet(geom=geom, window=None if window is None else win, sites=sites, times=times, first_jumps=fj)
    traj.final_site = pos
    traj.last_target_site = last_hit
    return traj, trace


def hitting_time(mode, geom, start, K, rng, *, kind="entrance", budget=None):
    """First entrance (or return, or exit) time of a set.

    ``kind`` is ``"entrance"`` (H_K), ``"return"`` (first visit after the
    first jump) or ``"exit"`` (T_K, first time outside K).

    Returns
    -------
    HitResult
        Continuous time, the site where the walk stops and the jump count.
    """
    budget = default_budget(geom) if budget is None else int(budget)
    pos = _start_index(geom, start, rng)
    sites = _as_sites(geom, K)
    if sites.size == 0:
        raise PreconditionError("target set is empty")
    mask = np.zeros(geom.size, dtype=np.bool_)
    mask[sites] = True
    if kind == "exit":
        mask = ~mask
    elif kind not in ("entrance", "return"):
        raise PreconditionError(f"unknown hitting kind {kind!r}")
    nbr = geom.neighbor_table(mode)
    cum = mode.cumulative
    if kind == "return":
        first_step = int(np.searchsorted(cum, rng.random(), side="right"))
        pos = int(nbr[pos, min(first_step, cum.shape[0] - 1)])
        j, site = _kernels.torus_hit_entry(nbr, cum, rng, pos, mask, budget - 1)
        j = j + 1 if j >= 0 else -1
    else:
        if not mask.any():
            # T_A of the full torus (or H of nothing) is infinite
            raise StepBudgetExceeded(f"set is never reached; gave up after {budget} jumps")
        j, site = _kernels.torus_hit_entry(nbr, cum, rng, pos, mask, budget)
    if j < 0:
        raise StepBudgetExceeded(f"no hit after {budget} jumps")
    t = float(rng.gamma(j)) if j > 0 else 0.0
    return HitResult(time=t, site=geom.point(site), jumps=int(j))


def cover_time(mode, geom, start, F, rng, *, budget=None):
    """Cover time of ``F``: the first time every site of ``F`` has been visited.

    Returns
    -------
    CoverResult
        ``time`` is Gamma(J, 1) for the jump count ``J`` at coverage;
        ``last_site`` is the site whose visit completed the cover.
    """
    budget = default_budget(geom) if budget is None else int(budget)
    pos = _start_index(geom, start, rng)
    sites = _as_sites(geom, F)
    if sites.size == 0:
        raise PreconditionError("target set is empty")
    sites_left = sites[sites != pos]
    if sites_left.size == 0:
        return CoverResult(time=0.0, jumps=0, last_site=geom.point(pos))
    target = _bitset(geom, sites_left)
    j, last = _kernels.torus_cover_count(
        geom.neighbor_table(mode), mode.cumulative, rng, pos, target, int(sites_left.size), budget
    )
    if j < 0:
        raise StepBudgetExceeded(f"cover not reached after {budget} jumps")
    return CoverResult(time=float(rng.gamma(j)), jumps=int(j), last_site=geom.point(last))
