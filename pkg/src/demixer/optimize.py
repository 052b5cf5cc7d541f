"""Variational ground states at fixed per-species densities.

The inner problem minimizes the grand-canonical functional
``e0 - sum mu_a rho_a`` (plus an optional quadratic density penalty) with an
exact adjoint gradient.  The outer loop adjusts the chemical potentials by
method-of-multipliers updates until the densities hit their targets.
"""
from dataclasses import dataclass, field, replace
import logging
import warnings

import numpy as np
import scipy.optimize as so

from .cmps import (AssembledState, CmpsPair, CmpsSingle, assemble, herm_from_vec, herm_grad,
                   cplx_from_vec, cplx_to_vec)
from .errors import DensityTargetError, InvalidParameters
from .kernels import RefinedFixedPoint, hermitian_part, kron
from .observables import FieldParams, ObservableSet, measure

log = logging.getLogger(__name__)

PENALTY_VALUE = 1e10
FIXED_POINT_TOL = 1e-8
POLISH_BELOW = 1e-3


@dataclass(frozen=True)
class OptimizerConfig:
    grad_tol: float = 1e-6
    max_iters: int = 5000
    restarts: int = 5
    seed: int = 0
    init_scale: float = 0.5
    mu_tol: float = 1e-3
    fd_step: float = 1e-5
    penalty: float = 10.0
    max_outer: int = 40
    memory: int = 30
    inner_iters: int = 500

    def __post_init__(self):
        for name in ("grad_tol", "init_scale", "mu_tol", "fd_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.mu_tol < 1:
            raise ValueError("mu_tol must be < 1")
        if min(self.max_iters, self.restarts, self.max_outer, self.memory, self.inner_iters) < 1:
            raise ValueError("iteration counts and restarts must be positive")
        if self.penalty < 0:
            raise ValueError("penalty must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


# -- parameter layout ------------------------------------------------------------

class Layout:
    """Flat real parameter vector of a single or pair cMPS."""

    def __init__(self, topology, D, P=1):
        if topology not in ("single", "pair"):
            raise ValueError(f"unknown topology {topology!r}")
        self.topology = topology
        self.D = D
        self.P = P if topology == "pair" else 0
        self.species = 1 if topology == "single" else 2
        self.size = CmpsSingle.vector_size(D) if topology == "single" else CmpsPair.vector_size(D, P)

    def state(self, theta):
        if self.topology == "single":
            return CmpsSingle.from_vector(theta, self.D)
        return CmpsPair.from_vector(theta, self.D, self.P)

    def unpack(self, theta):
        """Joint Hermitian K, joint field matrices, and the per-species blocks."""
        D, n = self.D, self.D * self.D
        if self.topology == "single":
            K = herm_from_vec(theta[:n], D)
            R = cplx_from_vec(theta[n:3 * n], D)
            return K, (R,), None
        K1 = herm_from_vec(theta[:n], D)
        K2 = herm_from_vec(theta[n:2 * n], D)
        R1 = cplx_from_vec(theta[2 * n:4 * n], D)
        R2 = cplx_from_vec(theta[4 * n:6 * n], D)
        z = theta[6 * n:].reshape(self.P, 2, n)
        Z1 = [herm_from_vec(z[p, 0], D) for p in range(self.P)]
        Z2 = [herm_from_vec(z[p, 1], D) for p in range(self.P)]
        eye = np.eye(D)
        Kt = kron(K1, eye) + kron(eye, K2)
        for p in range(self.P):
            Kt = Kt + kron(Z1[p], Z2[p])
        return Kt, (kron(R1, eye), kron(eye, R2)), (Z1, Z2)

    def pull_back(self, GK, GR, Zs):
        """Complex joint-space gradients to the flat real gradient."""
        D = self.D
        if self.topology == "single":
            return np.concatenate([herm_grad(GK), cplx_to_vec(GR[0])])
        g4 = GK.reshape(D, D, D, D)
        parts = [herm_grad(np.einsum("abcb->ac", g4)), herm_grad(np.einsum("abad->bd", g4)),
                 cplx_to_vec(np.einsum("abcb->ac", GR[0].reshape(D, D, D, D))),
                 cplx_to_vec(np.einsum("abad->bd", GR[1].reshape(D, D, D, D)))]
        Z1, Z2 = Zs
        for p in range(self.P):
            parts.append(herm_grad(np.einsum("abcd,bd->ac", g4, Z2[p].conj())))
            parts.append(herm_grad(np.einsum("abcd,ac->bd", g4, Z1[p].conj())))
        return np.concatenate(parts)


# -- objective and gradient -----------------------------------------------------------

@dataclass
class Evaluation:
    value: float
    grad: np.ndarray
    ok: bool
    rho: np.ndarray = None
    e0: float = None
    Q: np.ndarray = None
    Rs: tuple = None
    r: np.ndarray = None


def evaluate(theta, layout: Layout, p: FieldParams, mu, penalty=0.0, targets=None,
             need_grad=True, solver=None) -> Evaluation:
    """Augmented grand-canonical functional and its exact gradient.

    ``value = e0 - sum mu_a rho_a + penalty/2 * sum (rho_a - target_a)^2``.
    The fixed-point derivative enters through one adjoint solve sharing the
    factors of the right fixed-point solve.  Passing the same `solver` across
    nearby evaluations lets it reuse those factors.
    """
    theta = np.asarray(theta, dtype=float)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (layout.species,))
    Kt, Rs, Zs = layout.unpack(theta)
    d = Kt.shape[0]
    Q = -1j * Kt - 0.5 * sum(R.conj().T @ R for R in Rs)
    eye = np.eye(d)
    solver = RefinedFixedPoint() if solver is None else solver
    fail = Evaluation(PENALTY_VALUE, np.zeros_like(theta), False)
    if not (np.all(np.isfinite(Q)) and all(np.all(np.isfinite(R)) for R in Rs)):
        return fail
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        try:
            r, ok = solver.right(Q, Rs)
        except (np.linalg.LinAlgError, ValueError):
            return fail
    if not ok or not np.all(np.isfinite(r)):
        return fail
    r = hermitian_part(r)
    if np.linalg.eigvalsh(r)[0] < -FIXED_POINT_TOL:
        return fail

    rho = np.array([np.trace(R @ r @ R.conj().T).real for R in Rs])
    if penalty and targets is not None:
        mu_eff = mu - penalty * (rho - targets)
        extra = 0.5 * penalty * np.sum((rho - targets) ** 2)
    else:
        mu_eff = mu
        extra = 0.0

    kin = [Q @ R - R @ Q for R in Rs]
    sq = [R @ R for R in Rs]
    terms = [(1.0, A) for A in kin] + [(p.c, A) for A in sq]
    if len(Rs) == 2:
        terms.append((p.g, Rs[0] @ Rs[1]))
    h = sum(w * (A.conj().T @ A) for w, A in terms)
    e0 = float(np.trace(h @ r).real)
    h = h - sum(m * (R.conj().T @ R) for m, R in zip(mu_eff, Rs))
    value = e0 - float(mu @ rho) + extra
    ev = Evaluation(value, None, True, rho, e0, Q, Rs, r)
    if not need_grad:
        return ev

    flin = float(np.trace(h @ r).real)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        x, ok = solver.adjoint(Q, Rs, h - flin * eye)
    if not ok or not np.all(np.isfinite(x)):
        return fail
    x = hermitian_part(x)
    GQ = -2.0 * x @ r
    GR = [-2.0 * x @ R @ r for R in Rs]
    for a, R in enumerate(Rs):
        G = 2.0 * kin[a] @ r
        GQ += G @ R.conj().T - R.conj().T @ G
        GR[a] += Q.conj().T @ G - G @ Q.conj().T
        G = 2.0 * p.c * sq[a] @ r
        GR[a] += G @ R.conj().T + R.conj().T @ G
        GR[a] += -2.0 * mu_eff[a] * R @ r
    if len(Rs) == 2:
        G = 2.0 * p.g * Rs[0] @ Rs[1] @ r
        GR[0] += G @ Rs[1].conj().T
        GR[1] += Rs[0].conj().T @ G
    GK = 1j * GQ
    sym = GQ + GQ.conj().T
    GR = [G - 0.5 * R @ sym for G, R in zip(GR, Rs)]
    ev.grad = layout.pull_back(GK, GR, Zs)
    return ev


def objective(theta, layout, p, mu):
    """``e0 - sum mu_a rho_a``; returns ``(value, ok)`` with a large value on failure."""
    ev = evaluate(theta, layout, p, mu, need_grad=False)
    return ev.value, ev.ok


def gradient(theta, layout, p, mu, penalty=0.0, targets=None):
    """Exact gradient; falls back to central differences if the solve fails.

    Returns ``(grad, used_fallback)``.
    """
    ev = evaluate(theta, layout, p, mu, penalty, targets)
    if ev.ok:
        return ev.grad, False
    warnings.warn("adjoint solve failed; using central finite differences", RuntimeWarning)
    return finite_difference_gradient(theta, layout, p, mu, penalty, targets), True


def finite_difference_gradient(theta, layout, p, mu, penalty=0.0, targets=None, step=1e-5):
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        fp = evaluate(theta + e, layout, p, mu, penalty, targets, need_grad=False).value
        fm = evaluate(theta - e, layout, p, mu, penalty, targets, need_grad=False).value
        g[k] = (fp - fm) / (2 * step)
    return g


# -- constrained minimization ----------------------------------------------------------

@dataclass
class GroundStateResult:
    """Best constrained optimum found; ``params`` is the raw parameter set."""

    params: object
    state: AssembledState
    observables: ObservableSet
    mu: np.ndarray
    grad_norm: float
    converged: bool
    iterations: int
    seed_used: int
    e0_target: float
    theta: np.ndarray = field(repr=False, default=None)
    history: list = field(repr=False, default_factory=list)

    @property
    def e0(self):
        return self.observables.e0

    @property
    def rho(self):
        return self.observables.rho

    def warm_start(self):
        return WarmStart(self.theta, self.mu)


@dataclass(frozen=True)
class WarmStart:
    """Parameter vector and chemical potentials to resume from."""

    theta: np.ndarray
    mu: np.ndarray


def initial_parameters(layout: Layout, targets, rng, scale):
    """Random Hermitian K (and Z), ``R = sqrt(rho) (I + noise)``.

    At ``D = 1`` this is the mean-field coherent state.
    """
    D = layout.D

    def herm(s):
        a = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
        return 0.5 * s * (a + a.conj().T)

    def field_matrix(rho):
        noise = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
        return np.sqrt(rho) * (np.eye(D) + scale * noise)

    if layout.topology == "single":
        return CmpsSingle(herm(scale), field_matrix(targets[0])).to_vector()
    Z1 = np.array([herm(0.2 * scale) for _ in range(layout.P)])
    Z2 = np.array([herm(0.2 * scale) for _ in range(layout.P)])
    return CmpsPair(herm(scale), herm(scale), field_matrix(targets[0]),
                    field_matrix(targets[1]), Z1, Z2).to_vector()


def mean_field_mu(p: FieldParams, targets):
    if targets.size == 1:
        return np.array([2 * p.c * targets[0]])
    return np.array([2 * p.c * targets[0] + p.g * targets[1],
                     2 * p.c * targets[1] + p.g * targets[0]])


def penalty_strength(p: FieldParams, cfg: OptimizerConfig, targets):
    return cfg.penalty * (2 * p.c + p.g) + float(np.mean(targets))


def _inner(theta, layout, p, mu, lam, targets, cfg, max_iters):
    solver = RefinedFixedPoint()

    def fun(x):
        ev = evaluate(x, layout, p, mu, lam, targets, solver=solver)
        return ev.value, ev.grad

    res = so.minimize(fun, theta, jac=True, method="L-BFGS-B",
                      options={"maxiter": max_iters, "maxcor": cfg.memory,
                               "gtol": cfg.grad_tol / np.sqrt(theta.size),
                               "ftol": 0.0, "maxls": 40})
    log.debug("inner: %d its, %s", res.nit, res.message)
    return res.x, int(res.nit)


def fd_hessian(theta, layout, p, mu, penalty, targets, step):
    """Symmetrized central-difference Hessian of the augmented functional."""
    n = theta.size
    solver = RefinedFixedPoint()
    H = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        gp = evaluate(theta + e, layout, p, mu, penalty, targets, solver=solver)
        gm = evaluate(theta - e, layout, p, mu, penalty, targets, solver=solver)
        if not (gp.ok and gm.ok):
            return None
        H[:, k] = (gp.grad - gm.grad) / (2 * step)
    return 0.5 * (H + H.T)


def newton_polish(theta, layout, p, mu, penalty, targets, cfg, steps=3):
    """Newton steps on the gradient alone.

    Near a minimum the function value stops resolving progress along stiff
    directions long before the gradient is small, so line searches stall.
    Gauge directions are exact null modes of the Hessian and are projected
    out.  Gives up at saddles or if a step fails to shrink the gradient.
    Returns ``(theta, newton_steps_taken)``.
    """
    ev = evaluate(theta, layout, p, mu, penalty, targets)
    taken = 0
    for _ in range(steps):
        if not ev.ok:
            break
        gnorm = np.linalg.norm(ev.grad)
        if gnorm <= 0.1 * cfg.grad_tol:
            break
        H = fd_hessian(theta, layout, p, mu, penalty, targets, cfg.fd_step)
        if H is None:
            break
        w, U = np.linalg.eigh(H)
        top = np.max(np.abs(w))
        if w[0] < -1e-4 * top:
            log.debug("polish: negative curvature %.2e, skipped", w[0])
            break
        # soft but genuine modes make the full step overshoot; try coarser pseudo-inverses
        tol_f = 1e-12 * max(1.0, abs(ev.value))
        best = None
        for cut in (1e-7, 1e-6, 1e-5, 1e-4):
            keep = w > cut * top
            step = -U[:, keep] @ ((U[:, keep].T @ ev.grad) / w[keep])
            new = evaluate(theta + step, layout, p, mu, penalty, targets)
            if not new.ok or new.value > ev.value + tol_f:
                continue
            if best is None or np.linalg.norm(new.grad) < np.linalg.norm(best[1].grad):
                best = (step, new)
        if best is None or np.linalg.norm(best[1].grad) >= gnorm:
            break
        step, new = best
        theta, ev = theta + step, new
        taken += 1
    return theta, taken


def constrained_minimum(theta, layout, p, cfg, mu=None, lam=None, log_prefix=""):
    """Method-of-multipliers loop around the inner quasi-Newton solve.

    Returns ``(theta, mu_eff, evaluation, iterations, history)``.
    """
    targets = p.targets(layout.species)
    mu = mean_field_mu(p, targets) if mu is None else np.array(mu, dtype=float)
    lam = penalty_strength(p, cfg, targets) if lam is None else lam
    history = []
    total = 0
    ev = None
    for outer in range(cfg.max_outer):
        budget = min(cfg.inner_iters, cfg.max_iters - total)
        theta, nit = _inner(theta, layout, p, mu, lam, targets, cfg, max(budget, 1))
        total += nit
        ev = evaluate(theta, layout, p, mu, lam, targets)
        if not ev.ok:
            break
        gnorm = float(np.linalg.norm(ev.grad))
        on_target = np.max(np.abs(ev.rho - targets) / targets) <= cfg.mu_tol
        if on_target and cfg.grad_tol < gnorm < POLISH_BELOW and nit < cfg.inner_iters:
            theta, steps = newton_polish(theta, layout, p, mu, lam, targets, cfg)
            total += steps
            ev = evaluate(theta, layout, p, mu, lam, targets)
        drho = ev.rho - targets
        mu_eff = mu - lam * drho
        gnorm = float(np.linalg.norm(ev.grad))
        history.append({"outer": outer, "iterations": nit, "mu": mu.tolist(),
                        "rho": ev.rho.tolist(), "e0": ev.e0, "grad_norm": gnorm})
        log.debug("%souter %d: %d its, rho=%s, mu=%s, |g|=%.2e", log_prefix, outer, nit,
                  ev.rho, mu, gnorm)
        done = np.max(np.abs(drho) / targets) <= cfg.mu_tol
        mu = mu_eff
        if done and gnorm <= cfg.grad_tol:
            break
        if total >= cfg.max_iters:
            break
    return theta, mu, ev, total, history


def demixed_parameters(single: CmpsSingle, D, P=1, tunnel=0.1, noise=0.01, rng=None):
    """Pair parameters approximating an equal-weight superposition of the two
    pure phases at the same total density.

    The auxiliary space of each species splits into a vacuum line and a
    ``D - 1`` block carrying the single-species state ``single``.  The
    ``Z1 x Z2`` term tunnels between the "species 1 present" and "species 2
    present" sectors; a little Hermitian noise on K keeps the state injective.
    """
    if single.D != D - 1:
        raise ValueError(f"need a D={D - 1} single-species state, got D={single.D}")
    rng = np.random.default_rng(0) if rng is None else rng

    def embed(m):
        out = np.zeros((D, D), dtype=complex)
        out[1:, 1:] = m
        return out

    def herm(scale):
        a = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
        return 0.5 * scale * (a + a.conj().T)

    Z = np.zeros((P, D, D), dtype=complex)
    Z[0, 0, 1] = Z[0, 1, 0] = tunnel
    return CmpsPair(embed(single.K) + herm(noise), embed(single.K) + herm(noise),
                    embed(single.R), embed(single.R), Z, Z.copy())


@dataclass
class _Candidate:
    theta: np.ndarray
    mu: np.ndarray
    ev: Evaluation
    iterations: int
    seed: int
    history: list
    e0_target: float
    density_error: float


def _run_candidate(theta, layout, p, cfg, seed, mu=None, label=""):
    targets = p.targets(layout.species)
    theta, mu, ev, its, history = constrained_minimum(theta, layout, p, cfg, mu=mu,
                                                      log_prefix=label)
    if ev is None or not ev.ok:
        return None
    e0_target = ev.e0 + float(mu @ (targets - ev.rho))
    err = float(np.max(np.abs(ev.rho - targets) / targets))
    return _Candidate(theta, mu, ev, its, seed, history, e0_target, err)


def _as_theta(init, layout):
    if isinstance(init, (GroundStateResult, WarmStart)):
        theta = np.array(init.theta, dtype=float)
        if theta.shape != (layout.size,):
            raise InvalidParameters("warm start does not match the requested layout")
        return theta, np.array(init.mu, dtype=float)
    if isinstance(init, (CmpsSingle, CmpsPair)):
        if init.topology != layout.topology or init.D != layout.D:
            raise InvalidParameters("initial state does not match the requested layout")
        return init.to_vector(), None
    theta = np.asarray(init, dtype=float)
    if theta.shape != (layout.size,):
        raise InvalidParameters(f"initial vector has shape {theta.shape}, need ({layout.size},)")
    return theta, None


def _already_converged(theta, mu, layout, p, cfg):
    if mu is None:
        return None
    targets = p.targets(layout.species)
    ev = evaluate(theta, layout, p, mu)
    if not ev.ok:
        return None
    if np.linalg.norm(ev.grad) > cfg.grad_tol:
        return None
    if np.max(np.abs(ev.rho - targets) / targets) > cfg.mu_tol:
        return None
    return _Candidate(theta, mu, ev, 0, cfg.seed, [], ev.e0 + float(mu @ (targets - ev.rho)),
                      float(np.max(np.abs(ev.rho - targets) / targets)))


def minimize(p: FieldParams, cfg: OptimizerConfig = None, topology="single", D=8, P=1,
             init=None, seed_demixed=None, restarts=None) -> GroundStateResult:
    """Constrained variational ground state, best of several starts.

    Parameters
    ----------
    p : FieldParams
        Couplings and the per-species target density.
    cfg : OptimizerConfig, optional
    topology : {"single", "pair"}
    D, P : int
        Bond dimension per species and number of ``Z1 x Z2`` terms.
    init : GroundStateResult, WarmStart, CmpsSingle, CmpsPair or array, optional
        Warm start, tried before the random restarts.  A converged result
        passed back in is returned after a single check.
    seed_demixed : bool, optional
        Also start from :func:`demixed_parameters` built on a ``D - 1``
        single-species state at twice the density.  Defaults to on for the
        pair when ``g > 2c``.
    restarts : int, optional
        Number of random starts, overriding ``cfg.restarts``; may be 0 when
        `init` is given.

    Raises
    ------
    DensityTargetError
        If no start gets within 10% of the target densities.
    """
    cfg = OptimizerConfig() if cfg is None else cfg
    if D < 1 or (topology == "pair" and P < 1):
        raise InvalidParameters("need D >= 1 and P >= 1")
    layout = Layout(topology, D, P)
    targets = p.targets(layout.species)
    restarts = cfg.restarts if restarts is None else int(restarts)
    if restarts < 0 or (restarts == 0 and init is None):
        raise InvalidParameters("need at least one start")
    candidates = []

    if init is not None:
        theta0, mu0 = _as_theta(init, layout)
        done = _already_converged(theta0, mu0, layout, p, cfg)
        if done is not None:
            return _result(done, layout, p, cfg)
        cand = _run_candidate(theta0, layout, p, cfg, cfg.seed, mu0, "warm: ")
        if cand is not None:
            candidates.append(cand)

    if seed_demixed is None:
        seed_demixed = topology == "pair" and p.g > 2 * p.c and D >= 2
    if seed_demixed:
        twice = FieldParams(p.c, 0.0, float(targets.sum()))
        single = minimize(twice, cfg, "single", D - 1, restarts=1)
        theta0 = demixed_parameters(single.params, D, P, rng=np.random.default_rng(cfg.seed)).to_vector()
        cand = _run_candidate(theta0, layout, p, cfg, cfg.seed, None, "demixed: ")
        if cand is not None:
            candidates.append(cand)

    for k in range(restarts):
        seed = cfg.seed + k
        theta0 = initial_parameters(layout, targets, np.random.default_rng(seed), cfg.init_scale)
        cand = _run_candidate(theta0, layout, p, cfg, seed, None, f"seed {seed}: ")
        if cand is not None:
            candidates.append(cand)

    usable = [c for c in candidates if c.density_error <= 0.1]
    if not usable:
        raise DensityTargetError(
            f"no start reached the target densities {targets.tolist()} "
            f"({len(candidates)} starts produced a valid state)")
    on_target = [c for c in usable if c.density_error <= cfg.mu_tol]
    pool = on_target or usable
    best = min(pool, key=lambda c: c.e0_target)
    return _result(best, layout, p, cfg)


def _result(cand: _Candidate, layout, p, cfg):
    params = layout.state(cand.theta)
    state = assemble(params)
    obs = measure(state, p)
    ev = evaluate(cand.theta, layout, p, cand.mu)
    gnorm = float(np.linalg.norm(ev.grad)) if ev.ok else float("inf")
    targets = p.targets(layout.species)
    err = float(np.max(np.abs(obs.rho - targets) / targets))
    converged = bool(ev.ok and gnorm <= cfg.grad_tol and err <= cfg.mu_tol)
    e0_target = obs.e0 + float(cand.mu @ (targets - obs.rho))
    return GroundStateResult(params, state, obs, cand.mu, gnorm, converged, cand.iterations,
                             cand.seed, e0_target, cand.theta, cand.history)
