"""Exact linear algebra on tiny instances.

These routines are the referee for the Monte Carlo code: absorbing-chain
solves for expected hitting and cover times, exact conditional laws by
matrix powers, and dense spectra. Time is counted in jumps of the embedded
chain throughout; with unit holding rate, expected continuous times equal
expected jump counts.
"""

import csv
import dataclasses

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CapExceeded, NotAbsorbing, PreconditionError

__all__ = [
    "AbsorbingChainSpec",
    "hitting_chain",
    "cover_chain",
    "cover_start",
    "expected_absorption",
    "conditional_law",
    "restricted_matrix_dense",
    "dense_spectrum",
    "export_csv",
]

DEFAULT_CAP = 2_000_000


@dataclasses.dataclass
class AbsorbingChainSpec:
    """Embedded jump chain with an absorbing set.

    Attributes
    ----------
    n_states : int
    transition : scipy.sparse.csr_matrix
        Row-stochastic on transient states, zero rows on absorbing ones.
    absorbing : ndarray of bool
    labels : callable, optional
        Maps a state number to a human-readable label for CSV export.
    """

    n_states: int
    transition: sp.csr_matrix
    absorbing: np.ndarray
    labels: object = None

    def check(self, tol=1e-12):
        rows = np.asarray(self.transition.sum(axis=1)).ravel()
        trans = ~self.absorbing
        if np.any(np.abs(rows[trans] - 1.0) > tol):
            raise PreconditionError("transient rows must sum to one")
        if np.any(rows[self.absorbing] != 0):
            raise PreconditionError("absorbing states must have no outgoing mass")
        return self


def _check_cap(n, cap):
    if n > cap:
        raise CapExceeded(f"{n} states exceed the cap of {cap}")


def hitting_chain(mode, geom, K, cap=DEFAULT_CAP):
    """Torus jump chain absorbed on the site set ``K`` (points or indices)."""
    n = geom.size
    _check_cap(n, cap)
    nbr = geom.neighbor_table(mode)
    absorbing = np.zeros(n, dtype=bool)
    ks = np.asarray(K, dtype=np.int64)
    if ks.ndim == 2:
        ks = geom.indices(ks)
    absorbing[ks] = True
    rows = np.repeat(np.arange(n), nbr.shape[1])
    cols = nbr.ravel()
    vals = np.tile(mode.step_probs, n)
    keep = ~absorbing[rows]
    P = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n))
    P.sum_duplicates()
    return AbsorbingChainSpec(n, P, absorbing, labels=geom.point)


def cover_chain(mode, geom, F=None, cap=DEFAULT_CAP):
    """Chain on (position, visited subset of F), absorbed once F is covered.

    State number is ``site * 2**|F| + mask`` with bit ``j`` of ``mask``
    marking the j-th site of F (in index order). Use :func:`cover_start` to
    get the initial state for a given start site.
    """
    fs = np.arange(geom.size) if F is None else np.unique(np.asarray(F, dtype=np.int64))
    m = fs.size
    n = geom.size * (1 << m)
    _check_cap(n, cap)
    nbr = geom.neighbor_table(mode)
    bit = np.zeros(geom.size, dtype=np.int64)
    bit[fs] = 1 << np.arange(m, dtype=np.int64)
    full = (1 << m) - 1
    states = np.arange(n, dtype=np.int64)
    site = states >> m
    mask = states & full
    absorbing = mask == full
    rows, cols, vals = [], [], []
    for k in range(nbr.shape[1]):
        q = nbr[site, k]
        nxt = (q << m) | (mask | bit[q])
        rows.append(states[~absorbing])
        cols.append(nxt[~absorbing])
        vals.append(np.full(int((~absorbing).sum()), mode.step_probs[k]))
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    P.sum_duplicates()
    spec = AbsorbingChainSpec(n, P, absorbing, labels=lambda s: (geom.point(s >> m), int(s & full)))
    spec.f_sites = fs
    spec.bit = bit
    return spec


def cover_start(spec, site):
    """Initial cover-chain state for a walk started at ``site``."""
    m = spec.f_sites.size
    return (int(site) << m) | int(spec.bit[site])


def _reaches_absorption(spec):
    reach = spec.absorbing.copy()
    P = spec.transition.tocsr()
    while True:
        into = np.asarray(P @ reach.astype(float)).ravel() > 0
        new = reach | into
        if new.sum() == reach.sum():
            return reach
        reach = new


def expected_absorption(spec, rtol=1e-10):
    """Expected number of jumps to absorption from every state.

    Solves ``(I - P_TT) h = 1`` with a sparse LU factorisation, refining
    iteratively until the relative residual is at most ``rtol``.

    Raises
    ------
    NotAbsorbing
        If some state cannot reach the absorbing set.
    """
    reach = _reaches_absorption(spec)
    if not reach.all():
        bad = int(np.flatnonzero(~reach)[0])
        raise NotAbsorbing(f"state {bad} never reaches the absorbing set")
    trans = np.flatnonzero(~spec.absorbing)
    h = np.zeros(spec.n_states)
    if trans.size == 0:
        return h
    A = (sp.identity(trans.size, format="csc") - spec.transition[trans][:, trans]).tocsc()
    b = np.ones(trans.size)
    lu = spla.splu(A)
    x = lu.solve(b)
    for _ in range(5):
        r = b - A @ x
        if np.linalg.norm(r) <= rtol * np.linalg.norm(b):
            break
        x += lu.solve(r)
    h[trans] = x
    return h


@dataclasses.dataclass
class ConditionalLaw:
    """Row ``i`` is the law at the horizon of the chain started at
    ``states[i]``, conditioned on not being absorbed yet."""

    states: np.ndarray
    law: np.ndarray
    survival: np.ndarray


def conditional_law(spec, t, cap=20_000, time="jumps"):
    """Exact ``P_x[X_t = y | no absorption by t]`` over transient states.

    With ``time="jumps"`` the horizon ``t`` is a number of jumps of the
    embedded chain (dense repeated squaring). With ``time="continuous"``
    it is a continuous time for the unit-rate walk, and the law is the
    Poisson mixture of jump-chain powers, ``expm(-t (I - P_TT))``. The
    continuous version converges even when the jump chain is periodic.
    """
    trans = np.flatnonzero(~spec.absorbing)
    _check_cap(trans.size, cap)
    Q = spec.transition[trans][:, trans].toarray()
    if time == "jumps":
        M = np.linalg.matrix_power(Q, int(t)) if t > 0 else np.eye(trans.size)
    elif time == "continuous":
        M = scipy.linalg.expm(-float(t) * (np.eye(trans.size) - Q))
    else:
        raise PreconditionError(f"unknown time scale {time!r}")
    surv = M.sum(axis=1)
    return ConditionalLaw(trans, M / surv[:, None], surv)


def restricted_matrix_dense(mode, geom, removed):
    """Dense jump matrix of the walk restricted to the torus minus ``removed``.

    Built coordinate-wise, independently of the neighbour tables used by the
    simulators: entry ``(x, y)`` sums ``kappa(v) / 2`` over signed vectors
    with ``x + v = y`` modulo N, for ``x, y`` both outside ``removed``.
    Returns ``(matrix, kept site indices)``.
    """
    removed = set(int(r) for r in np.asarray(removed).ravel())
    kept = [s for s in range(geom.size) if s not in removed]
    pos = {s: i for i, s in enumerate(kept)}
    Pm = np.zeros((len(kept), len(kept)))
    for s in kept:
        x = geom.point(s)
        for v, w in zip(mode.vectors, mode.weights):
            for sign in (1, -1):
                y = tuple((a + sign * b) % geom.N for a, b in zip(x, v))
                t = geom.index(y)
                if t in pos:
                    Pm[pos[s], pos[t]] += w / 2.0
    return Pm, np.asarray(kept, dtype=np.int64)


def dense_spectrum(matrix):
    """Eigenvalues (descending) and eigenvectors of a symmetric matrix."""
    vals, vecs = np.linalg.eigh(np.asarray(matrix))
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def export_csv(path, states, values, labels=None, header=("state", "value")):
    """Write one ``state,value`` row per entry."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for s, v in zip(states, values):
            lab = labels(int(s)) if labels is not None else int(s)
            w.writerow([lab, repr(float(v))])
