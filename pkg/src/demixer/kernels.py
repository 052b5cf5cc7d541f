"""Dense complex matrix primitives.

All transfer-operator work uses row-major vectorization, so that
``kron(a, b) @ vec(x) == vec(a @ x @ b.T)``.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import GaugeViolation, NonInjectiveState, SpectralError

EIG_RESIDUAL_TOL = 1e-8
GAP_TOL = 1e-10
GAUGE_TOL = 1e-6


def kron(a, b):
    """Kronecker product of two 2-d arrays."""
    return np.kron(np.asarray(a), np.asarray(b))


def hermitian_part(m):
    return 0.5 * (m + m.conj().T)


def vec(m):
    return np.ascontiguousarray(m).reshape(-1)


def unvec(v, d):
    return np.asarray(v).reshape(d, d)


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition ``a = right @ diag(eigenvalues) @ left``.

    ``left`` is the inverse of ``right`` so rows of ``left`` and columns of
    ``right`` are biorthogonal.
    """

    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    residual: float


def eig(a, tol=EIG_RESIDUAL_TOL):
    """Full non-Hermitian eigendecomposition with a reconstruction check.

    Raises
    ------
    SpectralError
        If ``V diag(w) V^-1`` misses ``a`` by more than `tol` (relative
        spectral norm), which happens for defective or numerically
        defective inputs.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"eig needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    w, v = np.linalg.eig(a)
    try:
        vinv = np.linalg.inv(v)
    except np.linalg.LinAlgError:
        raise SpectralError(n, np.inf) from None
    scale = max(np.linalg.norm(a, 2), 1e-300)
    residual = float(np.linalg.norm((v * w) @ vinv - a, 2) / scale)
    if not np.isfinite(residual) or residual > tol:
        raise SpectralError(n, residual)
    return Spectrum(w, v, vinv, residual)


def _fix_phase(m):
    tr = np.trace(m)
    if abs(tr) < 1e-300:
        # fall back to the largest-magnitude diagonal entry
        k = np.argmax(np.abs(np.diag(m)))
        tr = m[k, k]
    return m * (abs(tr) / tr)


def stationary_pair(t, spectrum=None):
    """Left and right fixed points of a transfer generator.

    Parameters
    ----------
    t : (d*d, d*d) complex array
        Transfer generator acting on row-major vectorized d x d matrices.
    spectrum : Spectrum, optional
        Precomputed ``eig(t)``; saves a decomposition when the caller
        needs the full spectrum anyway.

    Returns
    -------
    l, r : (d, d) Hermitian arrays with ``trace(l @ r) == 1``.
    """
    t = np.asarray(t, dtype=complex)
    n = t.shape[0]
    d = int(round(np.sqrt(n)))
    if d * d != n:
        raise ValueError(f"transfer generator dimension {n} is not a square")
    sp = eig(t) if spectrum is None else spectrum
    order = np.argsort(-sp.eigenvalues.real)
    lead = sp.eigenvalues[order[0]]
    if abs(lead.real) > GAUGE_TOL:
        raise GaugeViolation(f"dominant eigenvalue {lead:.3e} is not zero")
    if n > 1:
        gap = lead.real - sp.eigenvalues[order[1]].real
        if gap < GAP_TOL:
            raise NonInjectiveState(f"spectral gap {gap:.3e} below {GAP_TOL:g}")
    # the left null row u acts as vec(x) -> trace(u.reshape(d, d).T @ x)
    l = unvec(sp.left_vectors[order[0]], d).T
    r = unvec(sp.right_vectors[:, order[0]], d)
    l = hermitian_part(_fix_phase(l))
    r = hermitian_part(_fix_phase(r))
    r = r / np.trace(l @ r)
    return l, r


def apply_transfer(q, rs, x):
    """``Q x + x Q^H + sum R x R^H`` without forming the superoperator."""
    y = q @ x + x @ q.conj().T
    for r in rs:
        y += r @ x @ r.conj().T
    return y


def apply_transfer_adjoint(q, rs, x):
    """``Q^H x + x Q + sum R^H x R``."""
    y = q.conj().T @ x + x @ q
    for r in rs:
        y += r.conj().T @ x @ r
    return y


def transfer_matrix(q, rs):
    d = q.shape[0]
    eye = np.eye(d)
    t = np.kron(q, eye) + np.kron(eye, q.conj())
    for r in rs:
        t += np.kron(r, r.conj())
    return t


class RefinedFixedPoint:
    """Fixed-point and adjoint solves reusing a possibly stale factorization.

    Successive optimizer iterates change ``Q`` and ``R`` only slightly, so the
    LU factors of an earlier shifted generator serve as a preconditioner for
    iterative refinement against the current one, applied matrix-free.  The
    factors are rebuilt whenever refinement stalls.
    """

    def __init__(self, tol=1e-13, max_refine=6):
        self.tol = tol
        self.max_refine = max_refine
        self._lu = None
        self._d = None
        self._last_r = None
        self._last_x = None
        self.refactorizations = 0

    def _refactor(self, q, rs):
        d = q.shape[0]
        eye = vec(np.eye(d, dtype=complex))
        t = transfer_matrix(q, rs)
        t += np.outer(eye, eye)
        self._lu = sla.lu_factor(t, check_finite=False)
        self._d = d
        self.refactorizations += 1

    def _solve(self, apply, b, x0, trans, scale):
        d = self._d
        bnorm = np.linalg.norm(b)
        x = x0
        if x is None:
            x = unvec(sla.lu_solve(self._lu, vec(b), trans=trans, check_finite=False), d)
        prev = np.inf
        for _ in range(self.max_refine + 1):
            res = b - apply(x) - np.trace(x) * np.eye(d)
            rn = np.linalg.norm(res)
            if rn <= self.tol * (bnorm + scale * np.linalg.norm(x)):
                return x, True
            if rn > 0.5 * prev:
                break
            prev = rn
            x = x + unvec(sla.lu_solve(self._lu, vec(res), trans=trans, check_finite=False), d)
        return x, False

    @staticmethod
    def _scale(q, rs):
        return 2 * np.linalg.norm(q) + sum(np.linalg.norm(r) ** 2 for r in rs) + 1.0

    def right(self, q, rs):
        """Right fixed point with ``trace(r) == 1`` (identity left fixed point).

        Returns ``(r, ok)``; ``ok`` is False if the residual could not be
        pushed below tolerance even with fresh factors.
        """
        d = q.shape[0]
        scale = self._scale(q, rs)
        b = np.eye(d, dtype=complex)
        if self._lu is None or self._d != d:
            self._refactor(q, rs)
            x0 = None
        else:
            x0 = self._last_r if self._last_r is not None and self._last_r.shape == (d, d) else None
        x, ok = self._solve(lambda m: apply_transfer(q, rs, m), b, x0, 0, scale)
        if not ok:
            self._refactor(q, rs)
            x, ok = self._solve(lambda m: apply_transfer(q, rs, m), b, None, 0, scale)
        if ok and np.all(np.isfinite(x)):
            self._last_r = x
        return x, ok

    def adjoint(self, q, rs, b):
        """Solve the adjoint equation with the factors left by :meth:`right`."""
        scale = self._scale(q, rs)
        x0 = self._last_x if self._last_x is not None and self._last_x.shape == b.shape else None
        x, ok = self._solve(lambda m: apply_transfer_adjoint(q, rs, m), b, x0, 2, scale)
        if not ok:
            self._refactor(q, rs)
            x, ok = self._solve(lambda m: apply_transfer_adjoint(q, rs, m), b, None, 2, scale)
        if ok and np.all(np.isfinite(x)):
            self._last_x = x
        return x, ok
