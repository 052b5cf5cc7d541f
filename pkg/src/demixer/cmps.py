"""Translation-invariant cMPS parameter sets, assembly and serialization.

States are stored in the left-canonical gauge: a Hermitian auxiliary
Hamiltonian ``K`` together with field matrices ``R`` fixes
``Q = -iK - 1/2 sum R^H R``, which makes the identity the left fixed point of
the transfer generator.
"""
from dataclasses import dataclass, field
import json
import os

import numpy as np

from .errors import InvalidParameters
from .kernels import kron

HERMITIAN_TOL = 1e-10
SCHEMA_VERSION = 1


def _check_hermitian(m, name, tol=HERMITIAN_TOL):
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidParameters(f"{name} must be square, got {m.shape}")
    dev = np.max(np.abs(m - m.conj().T), initial=0.0)
    if dev > tol * max(1.0, np.max(np.abs(m), initial=0.0)):
        raise InvalidParameters(f"{name} is not Hermitian (deviation {dev:.3e})")
    return m


# -- Hermitian <-> real vector -------------------------------------------------

def _triu(d):
    return np.triu_indices(d, 1)


def herm_to_vec(h):
    """Real coordinates of a Hermitian matrix: diagonal, Re/Im upper triangle."""
    d = h.shape[0]
    iu = _triu(d)
    return np.concatenate([h.diagonal().real, h[iu].real, h[iu].imag])


def herm_from_vec(v, d):
    m = d * (d - 1) // 2
    iu = _triu(d)
    h = np.zeros((d, d), dtype=complex)
    h[iu] = v[d:d + m] + 1j * v[d + m:d + 2 * m]
    h = h + h.conj().T
    h[np.diag_indices(d)] = v[:d]
    return h


def herm_grad(g):
    """Map a complex gradient ``dF = Re tr(G^H dH)`` to Hermitian coordinates."""
    d = g.shape[0]
    iu = _triu(d)
    s = 0.5 * (g + g.conj().T)
    return np.concatenate([s.diagonal().real, 2 * s[iu].real, 2 * s[iu].imag])


def cplx_to_vec(m):
    return np.concatenate([m.real.ravel(), m.imag.ravel()])


def cplx_from_vec(v, d):
    n = d * d
    return (v[:n] + 1j * v[n:2 * n]).reshape(d, d)


# -- parameter sets -------------------------------------------------------------

@dataclass(frozen=True)
class CmpsSingle:
    """Single-species cMPS: Hermitian ``K`` and field matrix ``R``."""

    K: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K", _check_hermitian(self.K, "K"))
        R = np.asarray(self.R, dtype=complex)
        if R.shape != self.K.shape:
            raise InvalidParameters(f"R shape {R.shape} != K shape {self.K.shape}")
        object.__setattr__(self, "R", R)

    @property
    def D(self):
        return self.K.shape[0]

    topology = "single"

    def parameter_count(self):
        """Number of matrix entries (K and R)."""
        return 2 * self.D ** 2

    def to_vector(self):
        return np.concatenate([herm_to_vec(self.K), cplx_to_vec(self.R)])

    @classmethod
    def from_vector(cls, v, D):
        n = D * D
        return cls(herm_from_vec(v[:n], D), cplx_from_vec(v[n:3 * n], D))

    @staticmethod
    def vector_size(D):
        return 3 * D * D


@dataclass(frozen=True)
class CmpsPair:
    """Two-species cMPS built from per-species auxiliary spaces.

    ``Z1`` and ``Z2`` have shape ``(P, D, D)``; each pair enters the joint
    auxiliary Hamiltonian as ``Z1[p] (x) Z2[p]``.  Both are Hermitian so that
    the joint Hamiltonian is Hermitian term by term.
    """

    K1: np.ndarray
    K2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    Z1: np.ndarray
    Z2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K1", _check_hermitian(self.K1, "K1"))
        object.__setattr__(self, "K2", _check_hermitian(self.K2, "K2"))
        D = self.K1.shape[0]
        for name in ("K2", "R1", "R2"):
            a = np.asarray(getattr(self, name), dtype=complex)
            if a.shape != (D, D):
                raise InvalidParameters(f"{name} has shape {a.shape}, expected {(D, D)}")
            object.__setattr__(self, name, a)
        z1 = np.asarray(self.Z1, dtype=complex)
        z2 = np.asarray(self.Z2, dtype=complex)
        if z1.ndim != 3 or z1.shape[1:] != (D, D) or z1.shape != z2.shape or z1.shape[0] < 1:
            raise InvalidParameters(f"Z1/Z2 shapes {z1.shape}, {z2.shape} invalid for D={D}")
        for p in range(z1.shape[0]):
            _check_hermitian(z1[p], f"Z1[{p}]")
            _check_hermitian(z2[p], f"Z2[{p}]")
        object.__setattr__(self, "Z1", z1)
        object.__setattr__(self, "Z2", z2)

    topology = "pair"

    @property
    def D(self):
        return self.K1.shape[0]

    @property
    def P(self):
        return self.Z1.shape[0]

    def parameter_count(self):
        """Number of matrix entries, ``D^2 (4 + 2P)``."""
        return self.D ** 2 * (4 + 2 * self.P)

    def to_vector(self):
        parts = [herm_to_vec(self.K1), herm_to_vec(self.K2),
                 cplx_to_vec(self.R1), cplx_to_vec(self.R2)]
        for p in range(self.P):
            parts += [herm_to_vec(self.Z1[p]), herm_to_vec(self.Z2[p])]
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, v, D, P=1):
        n = D * D
        K1 = herm_from_vec(v[:n], D)
        K2 = herm_from_vec(v[n:2 * n], D)
        R1 = cplx_from_vec(v[2 * n:4 * n], D)
        R2 = cplx_from_vec(v[4 * n:6 * n], D)
        z = v[6 * n:].reshape(P, 2, n)
        Z1 = np.array([herm_from_vec(z[p, 0], D) for p in range(P)])
        Z2 = np.array([herm_from_vec(z[p, 1], D) for p in range(P)])
        return cls(K1, K2, R1, R2, Z1, Z2)

    @staticmethod
    def vector_size(D, P=1):
        return D * D * (6 + 2 * P)


def parameter_count(D, P=None):
    """Matrix-entry count of a single (``P is None``) or pair parametrization."""
    if P is None:
        return 2 * D * D
    return D * D * (4 + 2 * P)


# -- assembly -------------------------------------------------------------------

@dataclass(frozen=True)
class AssembledState:
    """Gauge-fixed ``Q`` and one field matrix per species on the joint space."""

    Q: np.ndarray
    Rs: tuple = field(default_factory=tuple)

    @property
    def Dtil(self):
        return self.Q.shape[0]

    def gauge_residual(self):
        m = self.Q + self.Q.conj().T + sum(R.conj().T @ R for R in self.Rs)
        return float(np.max(np.abs(m), initial=0.0))


def _q_from_k(K, Rs):
    return -1j * K - 0.5 * sum(R.conj().T @ R for R in Rs)


def assemble_single(s: CmpsSingle) -> AssembledState:
    _check_hermitian(s.K, "K")
    return AssembledState(_q_from_k(s.K, (s.R,)), (s.R,))


def joint_hamiltonian(s: CmpsPair):
    D = s.D
    eye = np.eye(D)
    Kt = kron(s.K1, eye) + kron(eye, s.K2)
    for p in range(s.P):
        Kt = Kt + kron(s.Z1[p], s.Z2[p])
    return Kt


def assemble_pair(s: CmpsPair) -> AssembledState:
    Kt = _check_hermitian(joint_hamiltonian(s), "assembled K")
    eye = np.eye(s.D)
    Rs = (kron(s.R1, eye), kron(eye, s.R2))
    return AssembledState(_q_from_k(Kt, Rs), Rs)


def assemble(s) -> AssembledState:
    return assemble_pair(s) if isinstance(s, CmpsPair) else assemble_single(s)


def extract_single(a: AssembledState) -> CmpsSingle:
    """Inverse of :func:`assemble_single`."""
    if len(a.Rs) != 1:
        raise InvalidParameters("extract_single needs a one-species state")
    R = a.Rs[0]
    K = 1j * (a.Q + 0.5 * R.conj().T @ R)
    return CmpsSingle(0.5 * (K + K.conj().T), R)


def transfer_generator(a: AssembledState):
    """``T = Q (x) I + I (x) Q* + sum_a R_a (x) R_a*``."""
    d = a.Dtil
    eye = np.eye(d)
    T = kron(a.Q, eye) + kron(eye, a.Q.conj())
    for R in a.Rs:
        T = T + kron(R, R.conj())
    return T


# -- serialization ------------------------------------------------------------------

def _mat_record(m):
    m = np.asarray(m, dtype=complex)
    return {"re": m.real.ravel().tolist(), "im": m.imag.ravel().tolist()}


def _mat_load(rec, D):
    return (np.array(rec["re"], dtype=float) + 1j * np.array(rec["im"], dtype=float)).reshape(D, D)


def state_to_dict(s, **extra):
    """Flat JSON-ready record; floats survive ``json`` round trips bit-exactly."""
    if isinstance(s, CmpsPair):
        rec = {"schema_version": SCHEMA_VERSION, "topology": "pair", "D": s.D, "P": s.P,
               "K1": _mat_record(s.K1), "K2": _mat_record(s.K2),
               "R1": _mat_record(s.R1), "R2": _mat_record(s.R2),
               "Z1": [_mat_record(z) for z in s.Z1], "Z2": [_mat_record(z) for z in s.Z2]}
    else:
        rec = {"schema_version": SCHEMA_VERSION, "topology": "single", "D": s.D, "P": 0,
               "K": _mat_record(s.K), "R": _mat_record(s.R)}
    rec.update(extra)
    return rec


def state_from_dict(rec):
    D = int(rec["D"])
    if rec.get("topology") == "pair":
        return CmpsPair(_mat_load(rec["K1"], D), _mat_load(rec["K2"], D),
                        _mat_load(rec["R1"], D), _mat_load(rec["R2"], D),
                        np.array([_mat_load(z, D) for z in rec["Z1"]]),
                        np.array([_mat_load(z, D) for z in rec["Z2"]]))
    return CmpsSingle(_mat_load(rec["K"], D), _mat_load(rec["R"], D))


def save_state(path, s, **extra):
    """Write atomically so an interrupted run never leaves a torn checkpoint."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(state_to_dict(s, **extra), fh)
    os.replace(tmp, path)


def load_state(path):
    with open(path, encoding="utf-8") as fh:
        rec = json.load(fh)
    return state_from_dict(rec), rec
