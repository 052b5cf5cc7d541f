"""Expectation values of the two-species contact Hamiltonian on cMPS.

Units follow hbar = 2m = 1.  Every local quantity is a contraction
``tr(A r A^H l)`` of a matrix ``A`` built from ``Q`` and the ``R`` matrices
against the fixed points of the transfer generator.
"""
from dataclasses import dataclass
import csv

import numpy as np

from .cmps import AssembledState, transfer_generator
from .errors import DemixerError
from .kernels import eig, stationary_pair, vec

IMAG_TOL = 1e-6


@dataclass(frozen=True)
class FieldParams:
    """Couplings ``g11 = g22 = c``, ``g12 = g21 = g/2`` and target density per species."""

    c: float
    g: float = 0.0
    target_rho: float = 1.0

    def __post_init__(self):
        if self.c < 0 or self.g < 0:
            raise ValueError(f"couplings must be non-negative, got c={self.c}, g={self.g}")
        rho = np.atleast_1d(np.asarray(self.target_rho, dtype=float))
        if np.any(rho <= 0):
            raise ValueError(f"target densities must be positive, got {self.target_rho}")

    def targets(self, n_species):
        rho = np.atleast_1d(np.asarray(self.target_rho, dtype=float))
        if rho.size == 1:
            rho = np.repeat(rho, n_species)
        if rho.size != n_species:
            raise ValueError(f"{rho.size} target densities for {n_species} species")
        return rho


@dataclass(frozen=True)
class ObservableSet:
    rho: np.ndarray
    kinetic: np.ndarray
    interaction_intra: np.ndarray
    interaction_inter: float
    e0: float
    fluct: np.ndarray


def local_operators(Q, Rs, c, g):
    """Named ``(weight, A)`` pairs whose weighted ``tr(A r A^H l)`` sum to e0."""
    ops = []
    for a, R in enumerate(Rs):
        ops.append((f"kin{a}", 1.0, Q @ R - R @ Q))
        ops.append((f"intra{a}", c, R @ R))
    if len(Rs) == 2:
        # g12 and g21 each carry g/2; the two orderings coincide as R1, R2 commute
        ops.append(("inter", g, Rs[0] @ Rs[1]))
    return ops


def _real(z, what):
    if abs(z.imag) > IMAG_TOL * max(1.0, abs(z.real)):
        raise DemixerError(f"{what} has imaginary part {z.imag:.3e}")
    return float(z.real)


def contract(A, l, r):
    return np.trace(A @ r @ A.conj().T @ l)


def measure_with(a: AssembledState, p: FieldParams, l, r) -> ObservableSet:
    n = len(a.Rs)
    Q, Rs = a.Q, a.Rs
    rho = np.array([_real(contract(R, l, r), "density") for R in Rs])
    kin = np.array([_real(contract(Q @ R - R @ Q, l, r), "kinetic") for R in Rs])
    intra = np.array([p.c * _real(contract(R @ R, l, r), "intra") for R in Rs])
    fluct = np.empty((n, n))
    for al in range(n):
        for be in range(n):
            fluct[al, be] = _real(contract(Rs[be] @ Rs[al], l, r), "fluctuation")
    inter = p.g * fluct[0, 1] if n == 2 else 0.0
    e0 = float(kin.sum() + intra.sum() + inter)
    return ObservableSet(rho, kin, intra, float(inter), e0, fluct)


def measure(a: AssembledState, p: FieldParams) -> ObservableSet:
    """Densities, energy terms and equal-point fluctuations ``C_ab(0)``."""
    l, r = stationary_pair(transfer_generator(a))
    return measure_with(a, p, l, r)


@dataclass(frozen=True)
class CorrelationCurve:
    """``values[k, a, b] = C_ab(xs[k])`` with species ``a`` at the right end."""

    xs: np.ndarray
    values: np.ndarray

    def to_csv(self, path):
        write_correlation_csv(path, self)


def log_grid(x_max=1e4, n=200, x_min=1e-2):
    """Zero followed by log-spaced distances up to `x_max`."""
    return np.concatenate([[0.0], np.geomspace(x_min, x_max, n - 1)])


def correlation_curve(a: AssembledState, xs, spectrum=None) -> CorrelationCurve:
    """Density-density correlations ``<n_a(x) n_b(0)>`` on a distance grid.

    The semigroup ``exp(T x)`` is applied through one full eigendecomposition
    of ``T``, reused for every sample.
    """
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or xs.size == 0 or np.any(xs < 0) or np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be a non-empty, strictly increasing grid of distances >= 0")
    T = transfer_generator(a)
    sp = eig(T) if spectrum is None else spectrum
    l, r = stationary_pair(T, sp)
    n = len(a.Rs)
    # right vectors: coefficients of vec(R r R^H); left functionals: R^H l R
    coef = [sp.left_vectors @ vec(R @ r @ R.conj().T) for R in a.Rs]
    func = [vec((R.conj().T @ l @ R).T) @ sp.right_vectors for R in a.Rs]
    w = sp.eigenvalues
    # keep the zero mode exactly stationary
    lead = np.argmax(w.real)
    w = w.copy()
    w[lead] = 0.0
    phase = np.exp(np.outer(xs, w))
    values = np.empty((xs.size, n, n))
    for al in range(n):
        for be in range(n):
            z = phase @ (func[be] * coef[al])
            if np.max(np.abs(z.imag)) > IMAG_TOL * max(1.0, np.max(np.abs(z.real))):
                raise DemixerError(f"C_{al + 1}{be + 1}(x) has a large imaginary part")
            values[:, al, be] = z.real
    return CorrelationCurve(xs, values)


def correlation_length(a: AssembledState, spectrum=None):
    """Inverse of the subdominant spectral gap of the transfer generator."""
    sp = eig(transfer_generator(a)) if spectrum is None else spectrum
    re = np.sort(sp.eigenvalues.real)[::-1]
    return float(np.inf if re.size < 2 or re[1] == re[0] else 1.0 / (re[0] - re[1]))


def write_correlation_csv(path, curve: CorrelationCurve):
    """Columns x, C11, C22, C12, C21 at 17 significant digits."""
    n = curve.values.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if n == 1:
            w.writerow(["x", "C11"])
            for x, v in zip(curve.xs, curve.values):
                w.writerow([f"{x:.17g}", f"{v[0, 0]:.17g}"])
        else:
            w.writerow(["x", "C11", "C22", "C12", "C21"])
            for x, v in zip(curve.xs, curve.values):
                w.writerow([f"{x:.17g}"] + [f"{q:.17g}" for q in
                                            (v[0, 0], v[1, 1], v[0, 1], v[1, 0])])
