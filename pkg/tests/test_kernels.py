import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from demixer.cmps import CmpsSingle, assemble, transfer_generator
from demixer.errors import GaugeViolation, NonInjectiveState, SpectralError
from demixer.kernels import (RefinedFixedPoint, apply_transfer,
                             apply_transfer_adjoint, eig, hermitian_part, kron,
                             stationary_pair, transfer_matrix, unvec, vec)


def crandn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def random_single(rng, D, scale=0.7):
    K = crandn(rng, D, D)
    return CmpsSingle(0.5 * scale * (K + K.conj().T), scale * crandn(rng, D, D))


def test_kron_identity_and_scalar():
    assert np.array_equal(kron(np.eye(2), np.eye(3)), np.eye(6))
    b = crandn(np.random.default_rng(0), 3, 2)
    assert np.allclose(kron([[2.0]], b), 2 * b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kron_mixed_product(seed):
    rng = np.random.default_rng(seed)
    a, b, c, d = (crandn(rng, 2, 2) for _ in range(4))
    lhs = kron(a, b) @ kron(c, d)
    assert np.max(np.abs(lhs - kron(a @ c, b @ d))) < 1e-12 * max(1.0, np.abs(lhs).max())


def test_kron_matches_row_major_vec():
    rng = np.random.default_rng(1)
    a, b, x = crandn(rng, 3, 3), crandn(rng, 3, 3), crandn(rng, 3, 3)
    assert np.allclose(kron(a, b) @ vec(x), vec(a @ x @ b.T))
    assert np.array_equal(unvec(vec(x), 3), x)


def test_eig_diagonal():
    sp = eig(np.diag([1.0, 2.0, 3.0]))
    assert np.allclose(np.sort(sp.eigenvalues.real), [1, 2, 3])


def test_eig_hermitian_real_spectrum():
    rng = np.random.default_rng(2)
    h = hermitian_part(crandn(rng, 5, 5))
    assert np.max(np.abs(eig(h).eigenvalues.imag)) < 1e-10


def test_eig_reconstruction_and_biorthogonality():
    rng = np.random.default_rng(3)
    a = crandn(rng, 6, 6)
    sp = eig(a)
    assert sp.residual < 1e-8
    assert np.allclose(sp.left_vectors @ sp.right_vectors, np.eye(6), atol=1e-8)


def test_eig_rejects_defective():
    with pytest.raises(SpectralError) as err:
        eig(np.array([[0.0, 1.0], [0.0, 0.0]]))
    assert err.value.dim == 2


def test_eig_large_transfer_generator():
    # 625 x 625, the pair size at D = 5
    rng = np.random.default_rng(4)
    t = transfer_generator(assemble(random_single(rng, 25, scale=0.3)))
    assert eig(t).residual < 1e-8


def test_stationary_pair_scalar():
    l, r = stationary_pair(np.array([[0.0]]))
    assert np.allclose(l, [[1.0]]) and np.allclose(r, [[1.0]])


@pytest.mark.parametrize("D", [2, 3, 4])
def test_stationary_pair_gauge_fixed(D):
    rng = np.random.default_rng(10 + D)
    t = transfer_generator(assemble(random_single(rng, D)))
    l, r = stationary_pair(t)
    tn = np.linalg.norm(t, 2)
    assert np.allclose(l / l[0, 0], np.eye(D), atol=1e-10)
    assert np.linalg.norm(vec(l.T) @ t) <= 1e-10 * tn
    assert np.linalg.norm(t @ vec(r)) <= 1e-10 * tn
    assert np.trace(l @ r) == pytest.approx(1.0, abs=1e-14)
    assert np.linalg.eigvalsh(r)[0] >= -1e-10


def test_stationary_pair_errors():
    with pytest.raises(GaugeViolation):
        stationary_pair(np.diag([0.5, -1.0, -1.0, -2.0]))
    with pytest.raises(NonInjectiveState):
        stationary_pair(np.diag([0.0, 0.0, -1.0, -2.0]))
    with pytest.raises(ValueError):
        stationary_pair(np.zeros((3, 3)))


def test_matrix_free_transfer_matches_dense():
    rng = np.random.default_rng(5)
    a = assemble(random_single(rng, 3))
    x = crandn(rng, 3, 3)
    t = transfer_matrix(a.Q, a.Rs)
    assert np.allclose(vec(apply_transfer(a.Q, a.Rs, x)), t @ vec(x))
    assert np.allclose(vec(apply_transfer_adjoint(a.Q, a.Rs, x)), t.conj().T @ vec(x))


def test_refined_solver_matches_dense_solve():
    rng = np.random.default_rng(6)
    a = assemble(random_single(rng, 4))
    e = vec(np.eye(4, dtype=complex))
    shifted = transfer_matrix(a.Q, a.Rs) + np.outer(e, e)
    r0 = unvec(np.linalg.solve(shifted, e), 4)
    refined = RefinedFixedPoint()
    r1, ok = refined.right(a.Q, a.Rs)
    assert ok
    assert np.allclose(r0, r1, atol=1e-12)
    assert np.trace(r1).real == pytest.approx(1.0, abs=1e-12)
    b = hermitian_part(crandn(rng, 4, 4))
    b -= np.trace(b @ r1) * np.eye(4)
    x0 = unvec(np.linalg.solve(shifted.conj().T, vec(b)), 4)
    x1, ok = refined.adjoint(a.Q, a.Rs, b)
    assert ok and np.allclose(x0, x1, atol=1e-10)


def test_refined_solver_reuses_factors():
    rng = np.random.default_rng(7)
    s = random_single(rng, 4)
    solver = RefinedFixedPoint()
    for k in range(5):
        K = s.K + 1e-4 * k * np.eye(4)
        a = assemble(CmpsSingle(K, s.R * (1 + 1e-4 * k)))
        r, ok = solver.right(a.Q, a.Rs)
        assert ok
        assert np.linalg.norm(apply_transfer(a.Q, a.Rs, r)) < 1e-11
    assert solver.refactorizations == 1
