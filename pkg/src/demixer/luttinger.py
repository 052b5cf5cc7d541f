"""Normal-mode velocities, the mixing transition and demixed-phase checks.

With ``rho_pm = rho1 +- rho2`` the squared velocities of the two normal modes
are ``v_pm^2 = 2 rho_+ d^2 e0 / d rho_pm^2``, the second derivatives taken by
central differences along the diagonals of a 3 x 3 grid of constrained ground
states around the symmetric point.
"""
from dataclasses import dataclass, field
import math

import numpy as np

from . import bethe
from .errors import InvalidParameters, NoTransitionInRange, StencilError
from .observables import FieldParams, correlation_curve
from .optimize import GroundStateResult, OptimizerConfig, minimize

# grid offsets (i, j) -> (rho1 + (i - 1) h, rho2 + (j - 1) h) used by rotated differences
ROTATED = ((1, 1), (2, 2), (0, 0), (2, 0), (0, 2))
FLUCT_FLOOR = 1e-3


@dataclass
class EnergySurfaceStencil:
    """Ground-state energies on ``(rho1 + i h, rho2 + j h)``, ``i, j in {-1, 0, 1}``.

    ``e_values[i + 1, j + 1]`` holds the energy; points not needed by the
    rotated differences stay NaN.
    """

    center: tuple
    h: float
    e_values: np.ndarray = field(default_factory=lambda: np.full((3, 3), np.nan))
    results: dict = field(default_factory=dict, repr=False)

    def second_derivatives(self):
        """``(d2e/drho_+^2, d2e/drho_-^2)`` from the two diagonals."""
        e = self.e_values
        if np.any(np.isnan([e[ij] for ij in ROTATED])):
            raise ValueError("stencil is incomplete")
        # a step of h in both densities moves rho_+ (or rho_-) by 2h
        d2p = (e[2, 2] + e[0, 0] - 2 * e[1, 1]) / (2 * self.h) ** 2
        d2m = (e[2, 0] + e[0, 2] - 2 * e[1, 1]) / (2 * self.h) ** 2
        return d2p, d2m

    def velocities_sq(self):
        d2p, d2m = self.second_derivatives()
        rho_plus = self.center[0] + self.center[1]
        return 2 * rho_plus * d2p, 2 * rho_plus * d2m

    def mirror_gap(self):
        """``|e(rho1+h, rho2-h) - e(rho1-h, rho2+h)|``; zero by exchange symmetry."""
        return abs(self.e_values[2, 0] - self.e_values[0, 2])


@dataclass(frozen=True)
class VelocityPoint:
    g_over_c: float
    v_plus_sq: float
    v_minus_sq: float
    gamma: float
    h: float = float("nan")
    c12_0: float = float("nan")
    converged: bool = True


@dataclass(frozen=True)
class TransitionReport:
    g_star_over_c: float
    bracket: tuple
    method: str
    gamma: float
    zero_crossing: float = float("nan")
    fluctuation_onset: float = float("nan")

    @property
    def methods_agree(self):
        if math.isnan(self.zero_crossing) or math.isnan(self.fluctuation_onset):
            return True
        lo, hi = self.bracket
        return abs(self.zero_crossing - self.fluctuation_onset) <= hi - lo

    def to_dict(self):
        return {"g_star_over_c": self.g_star_over_c, "bracket": list(self.bracket),
                "method": self.method, "gamma": self.gamma,
                "zero_crossing": _nan_to_none(self.zero_crossing),
                "fluctuation_onset": _nan_to_none(self.fluctuation_onset),
                "methods_agree": self.methods_agree}


def _nan_to_none(x):
    return None if math.isnan(x) else x


def _solve_surface(p, cfg, D, P, h, init, energy, strict):
    """Fill one stencil; `energy` replaces the optimizer when given."""
    rho1, rho2 = p.targets(2)
    st = EnergySurfaceStencil((float(rho1), float(rho2)), h)
    failed = []
    center = None
    for i, j in ROTATED:
        r1, r2 = rho1 + (i - 1) * h, rho2 + (j - 1) * h
        if energy is not None:
            st.e_values[i, j] = energy(r1, r2)
            continue
        q = FieldParams(p.c, p.g, (r1, r2))
        if (i, j) == (1, 1):
            res = minimize(q, cfg, "pair", D, P, init=init, seed_demixed=False,
                           restarts=None if init is None else 0)
            center = res
        else:
            # corners continue from the center so all five stay on one branch
            res = minimize(q, cfg, "pair", D, P, init=center, seed_demixed=False, restarts=0)
        st.results[(i - 1, j - 1)] = res
        st.e_values[i, j] = res.e0_target
        if not res.converged:
            failed.append((r1, r2))
    if failed and strict:
        raise StencilError(failed)
    return st


def velocities(p: FieldParams, g=None, cfg: OptimizerConfig = None, h=None, D=5, P=1,
               richardson=True, init=None, energy=None, strict=True):
    """Squared normal-mode velocities at the symmetric point.

    Parameters
    ----------
    p : FieldParams
        Couplings and the per-species density at the stencil center.
    g : float, optional
        Overrides ``p.g``.
    h : float, optional
        Density step, default ``0.02 * rho``.
    richardson : bool
        Combine steps ``h`` and ``h/2`` to cancel the ``O(h^2)`` error.
    init : GroundStateResult, optional
        Warm start for the center point.
    energy : callable, optional
        ``energy(rho1, rho2) -> e0`` used instead of the optimizer.
    strict : bool
        Raise :class:`StencilError` on unconverged points; otherwise the
        returned point carries ``converged=False``.

    Returns
    -------
    point : VelocityPoint
    stencils : list of EnergySurfaceStencil
    """
    g = p.g if g is None else float(g)
    p = FieldParams(p.c, g, p.target_rho)
    rho1, rho2 = p.targets(2)
    if p.c <= 0:
        raise InvalidParameters("velocities need c > 0 to define g/c")
    h = float(0.02 * min(rho1, rho2) if h is None else h)
    if not 0 < h < min(rho1, rho2):
        raise InvalidParameters(f"density step {h} out of range")
    cfg = OptimizerConfig() if cfg is None else cfg
    steps = [h, h / 2] if richardson else [h]
    stencils = []
    warm = init
    for step in steps:
        st = _solve_surface(p, cfg, D, P, step, warm, energy, strict)
        stencils.append(st)
        if energy is None:
            warm = st.results[(0, 0)]
    vals = [st.velocities_sq() for st in stencils]
    if richardson:
        (p1, m1), (p2, m2) = vals
        vp, vm = p2 + (p2 - p1) / 3, m2 + (m2 - m1) / 3
    else:
        vp, vm = vals[0]
    converged = all(r.converged for st in stencils for r in st.results.values())
    c12 = float("nan")
    if energy is None:
        c12 = float(stencils[0].results[(0, 0)].observables.fluct[0, 1])
    point = VelocityPoint(g / p.c, float(vp), float(vm), p.c / float(np.mean([rho1, rho2])),
                          h, c12, converged)
    return point, stencils


def weak_coupling_estimate(c, rho, g):
    """``(v_-^2 / v^2, g_*)`` of the weak-interspecies-coupling theory.

    The ratio ``1 - K g / (pi v)`` uses the exact single-species ``v`` and
    ``K``; ``g_* = 2 c (1 - sqrt(gamma) / 2 pi)``.
    """
    if not (c > 0 and rho > 0 and g >= 0):
        raise InvalidParameters("weak_coupling_estimate needs c, rho > 0 and g >= 0")
    gamma = c / rho
    v = bethe.sound_velocity(c, rho)
    K = bethe.luttinger_K(gamma)
    ratio = 1.0 - K * g / (math.pi * v)
    g_star = 2 * c * (1 - math.sqrt(gamma) / (2 * math.pi))
    return float(ratio), g_star


def _zero_crossing(points):
    pts = sorted(points, key=lambda q: q.g_over_c)
    for a, b in zip(pts, pts[1:]):
        if a.v_minus_sq > 0 and b.v_minus_sq <= 0:
            x = a.g_over_c + a.v_minus_sq * (b.g_over_c - a.g_over_c) / (a.v_minus_sq - b.v_minus_sq)
            return x, (a.g_over_c, b.g_over_c)
    return None


def _fluct_onset(trace, rho):
    pts = sorted(trace)
    floor = FLUCT_FLOOR * rho ** 2
    for (ga, ca), (gb, cb) in zip(pts, pts[1:]):
        if ca >= floor and cb < floor:
            return gb, (ga, gb)
    return None


def locate_transition(points, fluct_trace=(), rho=None, gamma=None):
    """Transition coupling from the ``v_-^2`` zero crossing and the ``C12(0)`` drop.

    Parameters
    ----------
    points : sequence of VelocityPoint
    fluct_trace : sequence of (g_over_c, C12(0))
    rho : float, optional
        Per-species density setting the ``1e-3 rho^2`` floor; required when
        `fluct_trace` is non-empty.
    """
    zc = _zero_crossing(points) if points else None
    fo = None
    if fluct_trace:
        if rho is None:
            raise InvalidParameters("rho is needed to judge the fluctuation floor")
        fo = _fluct_onset(fluct_trace, rho)
    if zc is None and fo is None:
        raise NoTransitionInRange("no sign change in v_-^2 and no drop of C12(0) in the scanned range")
    if gamma is None:
        gamma = points[0].gamma if points else float("nan")
    brackets = [t[1] for t in (zc, fo) if t is not None]
    bracket = (min(b[0] for b in brackets), max(b[1] for b in brackets))
    if zc is not None:
        g_star, method = zc[0], "zero-crossing"
    else:
        g_star, method = fo[0], "fluctuation-vanishing"
    return TransitionReport(float(g_star), bracket, method, float(gamma),
                            float(zc[0]) if zc else float("nan"),
                            float(fo[0]) if fo else float("nan"))


@dataclass(frozen=True)
class DemixedReport:
    """Figures of merit of a state against the two-branch superposition picture."""

    c12_over_rho_sq: float
    energy_gap: float
    fluct_gap: float
    plateau: float
    converged: bool

    def to_dict(self):
        return dict(self.__dict__)


def demixed_diagnostics(result: GroundStateResult, p: FieldParams, xs=None,
                        require_converged=True) -> DemixedReport:
    """Compare a pair ground state with a single gas at twice the density.

    Returns ``C12(0) / rho^2``, the relative energy gap to the single gas at
    ``2 rho`` (divided by ``e0``), the relative gap of ``C_aa(0)`` to half the
    single-gas pair correlation, and ``max C_aa(x) / 2 rho^2`` on
    ``x in [0, 10]``.

    Raises
    ------
    InvalidParameters
        For single-species input, or an unconverged result when
        `require_converged` is set.
    """
    if len(result.state.Rs) != 2:
        raise InvalidParameters("demixed diagnostics need a pair state")
    if require_converged and not result.converged:
        raise InvalidParameters("result is not converged")
    rho = float(np.mean(p.targets(2)))
    obs = result.observables
    e_single = bethe.reference_energy(p.c, 2 * rho)
    f_single = 0.5 * bethe.reference_fluctuation(p.c, 2 * rho)
    xs = np.linspace(0.0, 10.0, 201) if xs is None else np.asarray(xs, dtype=float)
    curve = correlation_curve(result.state, xs)
    diag = np.array([curve.values[:, a, a] for a in range(2)])
    return DemixedReport(
        c12_over_rho_sq=float(obs.fluct[0, 1] / rho ** 2),
        energy_gap=float(abs(result.e0_target - e_single) / result.e0_target),
        fluct_gap=float(np.max(np.abs(np.diag(obs.fluct) - f_single)) / f_single),
        plateau=float(diag.max(axis=1).min() / (2 * rho ** 2)),
        converged=result.converged,
    )
