import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from torcover.errors import CapExceeded, NotAbsorbing, PreconditionError
from torcover.oracle import (
    AbsorbingChainSpec, conditional_law, cover_chain, cover_start, dense_spectrum, expected_absorption,
    export_csv, hitting_chain, restricted_matrix_dense,
)
from torcover.walk import TorusGeometry, named_mode

SRW = named_mode("srw3")

# frozen from the absorbing-chain solves below
N2_COVER_JUMPS = 1996 / 95
N4_HIT_FROM_222 = 83.2
N4_HIT_UNIFORM = 75.85


def test_single_transient_state():
    P = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
    spec = AbsorbingChainSpec(2, P, np.array([False, True])).check()
    assert expected_absorption(spec)[0] == pytest.approx(1.0, abs=1e-12)


def test_not_absorbing():
    P = sp.csr_matrix(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    with pytest.raises(NotAbsorbing):
        expected_absorption(AbsorbingChainSpec(3, P, np.array([False, False, True])))


def test_cap():
    with pytest.raises(CapExceeded):
        cover_chain(SRW, TorusGeometry(3, 3))
    with pytest.raises(CapExceeded):
        hitting_chain(SRW, TorusGeometry(3, 4), [0], cap=10)


def test_rows_are_stochastic():
    g = TorusGeometry(3, 4)
    for spec in (hitting_chain(SRW, g, [0, 5]), cover_chain(SRW, TorusGeometry(3, 2)),
                 hitting_chain(named_mode("diag3"), g, [0])):
        spec.check(1e-12)


def test_cover_chain_n2():
    g = TorusGeometry(3, 2)
    spec = cover_chain(SRW, g)
    assert spec.n_states == 8 * 2**8
    h = expected_absorption(spec)
    vals = [h[cover_start(spec, s)] for s in range(8)]
    assert vals[0] == pytest.approx(N2_COVER_JUMPS, rel=1e-12)
    assert np.allclose(vals, vals[0], rtol=1e-12)


def test_hitting_n4():
    g = TorusGeometry(3, 4)
    h = expected_absorption(hitting_chain(SRW, g, [0]))
    assert h[g.index((2, 2, 2))] == pytest.approx(N4_HIT_FROM_222, rel=1e-10)
    assert h.mean() == pytest.approx(N4_HIT_UNIFORM, rel=1e-10)
    assert h[0] == 0.0


def test_hitting_symmetric_under_coordinate_permutations():
    g = TorusGeometry(3, 2)
    h = expected_absorption(hitting_chain(SRW, g, [0]))
    for x in itertools.product(range(2), repeat=3):
        for perm in itertools.permutations(range(3)):
            assert h[g.index(x)] == pytest.approx(h[g.index(tuple(x[p] for p in perm))], rel=1e-12)


def test_conditional_law_time_zero_is_point_mass():
    g = TorusGeometry(3, 4)
    law = conditional_law(hitting_chain(SRW, g, [0]), 0)
    assert np.array_equal(law.law, np.eye(law.states.size))


def test_unconditioned_law_goes_uniform():
    g = TorusGeometry(3, 3)
    spec = hitting_chain(SRW, g, np.empty(0, dtype=np.int64))
    law = conditional_law(spec, 400)
    assert np.allclose(law.law, 1.0 / g.size, atol=1e-10)
    law = conditional_law(hitting_chain(SRW, TorusGeometry(3, 4), np.empty(0, dtype=np.int64)), 300, time="continuous")
    assert np.allclose(law.law, 1.0 / 64, atol=1e-10)


def test_conditional_law_unknown_clock():
    with pytest.raises(PreconditionError):
        conditional_law(hitting_chain(SRW, TorusGeometry(3, 3), [0]), 1, time="days")


def test_restricted_dense_matches_hitting_chain():
    g = TorusGeometry(3, 5)
    removed = g.ball((0, 0, 0), 1)
    Pm, kept = restricted_matrix_dense(named_mode("diag3"), g, removed)
    spec = hitting_chain(named_mode("diag3"), g, removed)
    assert np.allclose(Pm, spec.transition[kept][:, kept].toarray(), atol=1e-15)
    vals, vecs = dense_spectrum(Pm)
    assert np.all(np.diff(vals) <= 0)
    assert np.allclose(Pm @ vecs[:, 0], vals[0] * vecs[:, 0])


def test_export_csv(tmp_path):
    g = TorusGeometry(3, 2)
    h = expected_absorption(hitting_chain(SRW, g, [0]))
    path = tmp_path / "h.csv"
    export_csv(path, range(8), h, labels=lambda s: " ".join(map(str, g.point(s))))
    lines = path.read_text().splitlines()
    assert lines[0] == "state,value" and lines[1] == "0 0 0,0.0" and len(lines) == 9
