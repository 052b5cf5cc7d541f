"""Lieb-Liniger ground state from the Bethe-ansatz integral equation.

In the rescaled quasi-momentum ``x in [-1, 1]`` the distribution ``g`` obeys

    g(x) - 1/(2 pi) int_{-1}^{1} 2 lam / (lam^2 + (x - y)^2) g(y) dy = 1/(2 pi)

with ``gamma = lam / int g`` and ``e = (gamma/lam)^3 int x^2 g``.  The
equation is discretized by Gauss-Legendre Nystrom quadrature with the
kernel's near-singular part subtracted analytically.  The dressed charge
equals ``2 pi g``, which gives the Luttinger parameter ``K = (2 pi g(1))^2``
independently of the energy.
"""
from dataclasses import dataclass
from functools import lru_cache
import csv
import math

import numpy as np
from scipy.optimize import brentq

from .errors import OracleError

DEFAULT_NODES = 128
# Lorentzian width below which the node count grows proportionally
_LAM_REF = 0.2
_STENCIL_STEP = 1e-3
MAX_NODES = 16384


@dataclass(frozen=True)
class LiebLinigerPoint:
    gamma: float
    e: float
    e_prime: float
    e_double_prime: float
    v: float
    K: float

    @property
    def v_over_rho(self):
        return self.v


@lru_cache(maxsize=64)
def _nodes(n):
    return np.polynomial.legendre.leggauss(n)


def _node_count(gamma, nodes):
    # weak-coupling cutoff lam ~ sqrt(gamma)/2 sets the kernel width
    lam_est = 0.5 * math.sqrt(min(gamma, 1.0))
    n = int(nodes * max(1, math.ceil(_LAM_REF / lam_est)))
    if n > MAX_NODES:
        raise OracleError(f"gamma={gamma} needs {n} quadrature nodes, above {MAX_NODES}")
    return n


def _solve(lam, n):
    x, w = _nodes(n)
    diff = x[:, None] - x[None, :]
    kw = (lam / math.pi) / (lam * lam + diff * diff) * w[None, :]
    full = (np.arctan((1 - x) / lam) + np.arctan((1 + x) / lam)) / math.pi
    a = -kw
    a[np.diag_indices(n)] += 1.0 - full + kw.sum(axis=1)
    g = np.linalg.solve(a, np.full(n, 1.0 / (2 * math.pi)))
    return x, w, g


def _moments(lam, n):
    x, w, g = _solve(lam, n)
    m0 = w @ g
    gamma = lam / m0
    e = (gamma / lam) ** 3 * (w @ (x * x * g))
    return gamma, e, (x, w, g)


def _edge_density(lam, x, w, g):
    """g(1) by Nystrom interpolation of the discretized equation."""
    kw = (lam / math.pi) / (lam * lam + (1.0 - x) ** 2) * w
    full = math.atan(2.0 / lam) / math.pi
    return (1.0 / (2 * math.pi) + kw @ g) / (1.0 - full + kw.sum())


def cutoff(gamma, nodes=DEFAULT_NODES):
    """Rescaled coupling ``lam = c / B`` reproducing `gamma`."""
    if not gamma > 0:
        raise OracleError(f"gamma must be positive, got {gamma}")
    n = _node_count(gamma, nodes)

    def f(log_lam):
        return math.log(_moments(math.exp(log_lam), n)[0] / gamma)

    # start from the Tonks estimate B = pi rho, i.e. lam = gamma / pi
    lo = hi = math.log(gamma / math.pi)
    flo = fhi = f(lo)
    for _ in range(200):
        if flo < 0 < fhi or flo > 0 > fhi:
            break
        if flo >= 0:
            lo -= 0.5
            flo = f(lo)
        if fhi <= 0:
            hi += 0.5
            fhi = f(hi)
    else:
        raise OracleError(f"could not bracket gamma={gamma}: "
                          f"log-lam bracket [{lo:.3f}, {hi:.3f}] gives [{flo:.3e}, {fhi:.3e}]")
    if flo == 0:
        return math.exp(lo), n
    if fhi == 0:
        return math.exp(hi), n
    root = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return math.exp(root), n


@lru_cache(maxsize=4096)
def energy(gamma, nodes=DEFAULT_NODES):
    """Dimensionless ground-state energy ``e(gamma)``."""
    lam, n = cutoff(gamma, nodes)
    return _moments(lam, n)[1]


def luttinger_K(gamma, nodes=DEFAULT_NODES):
    """Luttinger parameter from the dressed charge at the Fermi edge."""
    lam, n = cutoff(gamma, nodes)
    _, _, (x, w, g) = _moments(lam, n)
    return (2 * math.pi * _edge_density(lam, x, w, g)) ** 2


def _log_derivatives(gamma, nodes, step=_STENCIL_STEP):
    """First and second derivatives of e in gamma, Richardson-extrapolated."""
    def E(k):
        return energy(gamma * math.exp(k * step), nodes)

    e0 = energy(gamma, nodes)
    ep1, em1, ep2, em2 = E(1), E(-1), E(2), E(-2)
    d1 = ((ep1 - em1) / (2 * step) * 4 - (ep2 - em2) / (4 * step)) / 3
    d2 = ((ep1 - 2 * e0 + em1) / step ** 2 * 4 - (ep2 - 2 * e0 + em2) / (4 * step ** 2)) / 3
    # chain rule from u = log(gamma)
    return e0, d1 / gamma, (d2 - d1) / gamma ** 2


@lru_cache(maxsize=1024)
def lieb_liniger(gamma, nodes=DEFAULT_NODES):
    """Energy, its gamma derivatives, sound velocity and K at unit density.

    The velocity follows from ``v^2 = 2 rho d^2 e0 / d rho^2`` with
    ``e0 = rho^3 e(c/rho)``, giving ``v = 2 sqrt(3e - 2 gamma e' + gamma^2 e''/2)``.
    """
    gamma = float(gamma)
    e, ep, epp = _log_derivatives(gamma, nodes)
    stiff = 3 * e - 2 * gamma * ep + 0.5 * gamma ** 2 * epp
    if stiff <= 0:
        raise OracleError(f"non-positive compressibility at gamma={gamma}")
    return LiebLinigerPoint(gamma, e, ep, epp, 2 * math.sqrt(stiff), luttinger_K(gamma, nodes))


def reference_energy(c, rho, nodes=DEFAULT_NODES):
    """Ground-state energy density ``rho^3 e(c/rho)``."""
    if not (c > 0 and rho > 0):
        raise OracleError(f"reference_energy needs c, rho > 0, got c={c}, rho={rho}")
    return rho ** 3 * energy(c / rho, nodes)


def chemical_potential(c, rho, nodes=DEFAULT_NODES):
    """``d e0 / d rho = rho^2 (3 e - gamma e')``."""
    p = lieb_liniger(c / rho, nodes)
    return rho ** 2 * (3 * p.e - p.gamma * p.e_prime)


def sound_velocity(c, rho, nodes=DEFAULT_NODES):
    return rho * lieb_liniger(c / rho, nodes).v


def reference_fluctuation(c, rho, nodes=DEFAULT_NODES):
    """Local pair correlation ``<psi^+ psi^+ psi psi> = rho^2 e'(gamma)`` (Hellmann-Feynman)."""
    p = lieb_liniger(c / rho, nodes)
    return rho ** 2 * p.e_prime


def write_table(path, gammas, nodes=DEFAULT_NODES):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma", "e", "e_prime", "e_double_prime", "v_over_rho", "K"])
        for gm in gammas:
            p = lieb_liniger(gm, nodes)
            w.writerow([repr(float(v)) for v in
                        (p.gamma, p.e, p.e_prime, p.e_double_prime, p.v_over_rho, p.K)])
