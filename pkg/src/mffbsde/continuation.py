"""Method of continuation for coupled mean-field FBSDEs.

The target coefficients are joined to a decoupled linear reference system by the
convex path ``alpha * target + (1 - alpha) * reference``. At ``alpha = 0`` the
system decouples and is solved by one backward and one forward sweep. A level
``alpha0 + delta`` is solved by Picard iteration of the map :func:`t_map`, whose
inner solves are themselves solves at level ``alpha0``; in NESTED mode this
recursion runs through every accepted level.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Union

import numpy as np

from .backward import backward_sweep, solve_mf_bsde
from .conditions import clamp_weights, reference_coefficients
from .core import (CASE_A, CASE_B, CoefficientSet, ConsistencyError, ConvergenceError,
                   DomainError, DominationWeights, LinearCoefficients, at, h_norm,
                   PerturbationTriple, SolutionEnsemble, m2_norm, stack_theta, step_means,
                   unflatten_z)
from .forward import _ratio_report, forward_sweep, solve_mf_sde

NESTED = "nested"
DIRECT = "direct"


@dataclass(frozen=True)
class ContinuationConfig:
    """Step-size and tolerance settings.

    ``delta_init`` may be ``"auto"``: the first step is then the probed
    ``1 / (2 sqrt(K3_hat))`` clipped to ``[delta_min, 1]``. ``adaptive=False``
    keeps the step fixed (halving still happens on divergence).
    """

    delta_init: Union[float, str] = 1.0
    delta_min: float = 1e-3
    fixpoint_tol: float = 1e-10
    max_iters: int = 200
    inner_tol_ratio: float = 0.1
    mode: str = NESTED
    damping: float = 0.5
    adaptive: bool = True
    grow: float = 1.5
    fast_iters: int = 8
    probe_pairs: int = 5
    probe_seed: int = 0

    def __post_init__(self):
        if self.mode not in (NESTED, DIRECT):
            raise DomainError(f"mode must be {NESTED!r} or {DIRECT!r}")
        if self.delta_init != "auto":
            if not 0.0 < float(self.delta_init) <= 1.0:
                raise DomainError("delta_init must lie in (0, 1]")
            if self.delta_min > float(self.delta_init):
                raise DomainError("delta_min must not exceed delta_init")
        if not self.delta_min > 0:
            raise DomainError("delta_min must be positive")
        if not self.fixpoint_tol > 0:
            raise DomainError("fixpoint_tol must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise DomainError("damping must lie in (0, 1]")
        if self.max_iters < 1 or self.inner_tol_ratio <= 0:
            raise DomainError("max_iters and inner_tol_ratio must be positive")


@dataclass
class SolveDiagnostics:
    mode: str
    levels: List[float] = field(default_factory=list)
    iterations: List[int] = field(default_factory=list)
    factors: List[List[float]] = field(default_factory=list)
    gaps: List[List[float]] = field(default_factory=list)
    residual: float = float("nan")
    delta_history: List[float] = field(default_factory=list)
    rejected: List[dict] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    k3_hat: Optional[float] = None
    base_solves: int = 0
    noise_stalls: int = 0
    converged: bool = False
    guaranteed: bool = True
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


class _Diverged(Exception):
    def __init__(self, gaps):
        self.gaps = gaps


# ---------------------------------------------------------------------------
# helpers shared by the solvers


def _mean_theta(backend, x, y, z):
    return stack_theta(backend.mean(x), backend.mean(y), backend.mean(z))


def theta_steps(theta: SolutionEnsemble) -> np.ndarray:
    """Stacked state at every step ``k < N``, shape ``(N, P, D)``."""
    return stack_theta(theta.x[:-1], theta.y[:-1], theta.z)


def _gamma_grid(coeffs: CoefficientSet, th: np.ndarray, backend) -> np.ndarray:
    return np.asarray(coeffs.gamma_steps(backend.grid.times[:-1], th, step_means(th)))


def gamma_along(coeffs: CoefficientSet, theta: SolutionEnsemble, backend) -> np.ndarray:
    """``Gamma(s_k, theta_k, E theta_k)`` for every step, shape ``(N, P, D)``."""
    return _gamma_grid(coeffs, theta_steps(theta), backend)


def _y0_vector(y0, backend):
    """Initial backward value as a deterministic vector (trivial initial information)."""
    return backend.mean(y0)


def solve_alpha0(weights: DominationWeights, pert: PerturbationTriple, backend,
                 reference: Optional[LinearCoefficients] = None, d: Optional[int] = None,
                 bsde_tol: float = 1e-12) -> SolutionEnsemble:
    """Solve the decoupled reference system under the perturbation ``pert``.

    Case A: backward equation first (its driver does not involve ``x``), then the
    forward equation with ``(y, z)`` plugged in and ``x(t0) = -mu H^T H y(t0) + xi``.
    Case B: forward equation first (drift ``psi``, diffusion ``gamma``), then the
    backward equation with driver ``-nu [A^T A x1 + At^T At x2] + phi`` and
    terminal value ``nu [P^T P x1(T) + Pt^T Pt x2(T)] + eta``.
    """
    n = pert.n
    d = backend.d if d is None else d
    ref = reference if reference is not None else reference_coefficients(weights, n, d)
    grid = backend.grid
    N, P = grid.N, backend.n_paths
    phi, psi, gam = pert.phi, pert.psi, pert.gamma
    if weights.case == CASE_A and weights.mu > 0 and weights.nu == 0:
        y, z = backward_sweep(phi, pert.eta, backend)
        x0 = ref.psi(_y0_vector(y[0], backend)) + pert.xi
        th = stack_theta(np.zeros((N, P, n)), y[:-1], z)
        G = _gamma_grid(ref, th, backend)
        x = forward_sweep(x0, G[..., n:2 * n] + psi,
                          unflatten_z(G[..., 2 * n:], n, d) + gam, backend)
    elif weights.case == CASE_B and weights.nu > 0 and weights.mu == 0:
        x = forward_sweep(pert.xi, psi, gam, backend)
        xN = x[N]
        yT = ref.phi(xN, backend.mean(xN)) + pert.eta
        th = np.concatenate([x[:-1], np.zeros((N, P, n * (1 + d)))], axis=-1)
        G = _gamma_grid(ref, th, backend)
        y, z = backward_sweep(G[..., :n] + phi, yT, backend)
    else:
        raise DomainError(f"inconsistent case flag {weights.case!r} "
                          f"for mu={weights.mu}, nu={weights.nu}")
    return SolutionEnsemble(grid, x, y, z, backend)


def t_map(coeffs: CoefficientSet, weights: DominationWeights, alpha0: float, delta: float,
          theta_in: SolutionEnsemble, pert: PerturbationTriple, level_solver: Callable,
          backend, reference: Optional[LinearCoefficients] = None) -> SolutionEnsemble:
    """One continuation map: freeze ``theta_in`` in ``delta * (target - reference)``.

    The shifted perturbation is handed to ``level_solver`` (the level-``alpha0``
    solver) and its solution is returned. ``alpha0`` is informational; the level
    is encoded in ``level_solver``.
    """
    ref = reference if reference is not None else reference_coefficients(
        weights, coeffs.n, coeffs.d)
    if delta == 0.0:
        return level_solver(pert)
    y0 = _y0_vector(theta_in.y[0], backend)
    xi = pert.xi + delta * (coeffs.psi(y0) - ref.psi(y0))
    xN = theta_in.x[-1]
    xNb = backend.mean(xN)
    eta = pert.eta + delta * (coeffs.phi(xN, xNb) - ref.phi(xN, xNb))
    th = theta_steps(theta_in)
    thb = step_means(th)
    times = backend.grid.times[:-1]
    rho = pert.rho + delta * (np.asarray(coeffs.gamma_steps(times, th, thb))
                              - np.asarray(ref.gamma_steps(times, th, thb)))
    return level_solver(PerturbationTriple(pert.grid, xi, eta, rho))


def _gap(a: SolutionEnsemble, b: SolutionEnsemble) -> float:
    return m2_norm(a - b)


def _adapted_random(backend, n, d, rng, scale=1.0) -> SolutionEnsemble:
    grid = backend.grid
    N, P = grid.N, backend.n_paths
    x = scale * rng.standard_normal((N + 1, P, n))
    y = scale * rng.standard_normal((N + 1, P, n))
    z = scale * rng.standard_normal((N, P, n, d))
    for k in range(N + 1):
        x[k] = backend.cond_exp(k, x[k])
        y[k] = backend.cond_exp(k, y[k])
        if k < N:
            z[k] = backend.cond_exp(k, z[k])
    return SolutionEnsemble(grid, x, y, z, backend)


def _block_offset(backend, n, d, block, size) -> SolutionEnsemble:
    """Deterministic time-constant offset of M2-size ``size`` in one block (0=x, 1=y, 2=z)."""
    grid, P = backend.grid, backend.n_paths
    x = np.zeros((grid.N + 1, P, n))
    y = np.zeros((grid.N + 1, P, n))
    z = np.zeros((grid.N, P, n, d))
    if block == 0:
        x[:] = size / np.sqrt(n)
    elif block == 1:
        y[:] = size / np.sqrt(n)
    else:
        z[:] = size / np.sqrt(n * d * (grid.T - grid.t0))
    return SolutionEnsemble(grid, x, y, z, backend)


def probe_k3(coeffs, weights, backend, pairs: int = 5, seed: int = 0,
             pert: Optional[PerturbationTriple] = None, scale: float = 1.0) -> dict:
    """Probe the squared Lipschitz constant of ``t_map`` at ``alpha0 = 0``, ``delta = 1``.

    All pairs share one random adapted base point ``a``. The first offsets
    are deterministic, time-constant shifts of the ``x``, ``y`` and ``z``
    blocks (axis probes: a deterministic shift moves every mean-field term
    with the state). The remaining pairs run power iteration
    ``v <- T(a + v) - T(a)`` from the most stretched offset seen so far. Every
    ratio is a measured difference quotient.

    Returns ``{"k3_hat", "delta0", "ratios"}`` with ``delta0 = 1 / (2 sqrt(k3_hat))``.
    """
    if pairs < 1:
        raise DomainError("need at least one probe pair")
    n, d = coeffs.n, coeffs.d
    ref = reference_coefficients(weights, n, d)
    rng = np.random.default_rng(seed)
    grid, P = backend.grid, backend.n_paths
    pert = pert if pert is not None else PerturbationTriple.zeros(grid, P, n, d)
    base = lambda p: solve_alpha0(weights, p, backend, ref, d)
    T = lambda th: t_map(coeffs, weights, 0.0, 1.0, th, pert, base, backend, ref)

    a = _adapted_random(backend, n, d, rng)
    ta = T(a)
    ratios = []
    best = (-1.0, None)
    for i in range(pairs):
        if i < 3:
            v = _block_offset(backend, n, d, i, scale)
        else:
            u = best[1]
            un = m2_norm(u)
            if un == 0.0:
                break
            v = u.transformed(scale / un, scale / un, scale / un)
        u = T(a + v) - ta
        r = m2_norm(u) / m2_norm(v)
        ratios.append(float(r))
        if r > best[0] or i >= 3:
            best = (r, u)
    lip = max(ratios)
    k3 = lip ** 2
    delta0 = float("inf") if lip == 0 else 1.0 / (2.0 * lip)
    return {"k3_hat": k3, "delta0": delta0, "ratios": ratios}


# ---------------------------------------------------------------------------
# residual


def fbsde_residual(coeffs: CoefficientSet, theta: SolutionEnsemble, backend,
                   pert: Optional[PerturbationTriple] = None) -> float:
    """Re-simulate both equations with the coefficients frozen along ``theta``.

    The forward equation uses ``x(t0) = Psi(y(t0)) + xi`` and drift/diffusion
    evaluated at ``theta``; the backward equation uses the terminal value
    ``Phi(x(T), E x(T)) + eta`` and the driver at ``theta``. Returns the
    M2-distance between the re-simulated state and ``theta``.
    """
    n, d = coeffs.n, coeffs.d
    grid = backend.grid
    pert = pert if pert is not None else PerturbationTriple.zeros(grid, backend.n_paths, n, d)
    G = gamma_along(coeffs, theta, backend) + pert.rho
    x0 = coeffs.psi(_y0_vector(theta.y[0], backend)) + pert.xi
    x = forward_sweep(x0, G[..., n:2 * n], unflatten_z(G[..., 2 * n:], n, d), backend)
    xN = theta.x[-1]
    yT = coeffs.phi(xN, backend.mean(xN)) + pert.eta
    y, z = backward_sweep(G[..., :n], yT, backend)
    return _gap(SolutionEnsemble(grid, x, y, z, backend), theta)


# ---------------------------------------------------------------------------
# the solver


# smallest meaningful M2 gap relative to the iterate size
ROUNDOFF_GAP = 1e4 * np.finfo(float).eps
# a gap that stops shrinking below this (relative) size is inner-solve noise,
# which compounds with nesting depth, not divergence
NOISE_GAP = 1e6 * np.finfo(float).eps


class ContinuationSolver:
    """Stateful driver for one continuation solve (owns its workspace)."""

    def __init__(self, coeffs, weights, config: ContinuationConfig, backend,
                 pert: Optional[PerturbationTriple] = None):
        self.coeffs = coeffs
        self.config = config
        self.backend = backend
        self.diag = SolveDiagnostics(mode=config.mode)
        w, warns = clamp_weights(weights)
        self.diag.warnings.extend(warns)
        self.weights = w
        self.n, self.d = coeffs.n, coeffs.d
        if backend.d != self.d:
            raise DomainError("backend Brownian dimension does not match the coefficients")
        self.ref = reference_coefficients(w, self.n, self.d)
        self.pert = pert if pert is not None else PerturbationTriple.zeros(
            backend.grid, backend.n_paths, self.n, self.d)
        if pert is not None and pert.eta.shape[0] != backend.n_paths:
            raise DomainError("perturbation does not match the backend scenario count")
        self.levels = [0.0]
        # last contraction factor seen on an accepted level; sizes the inner
        # tolerance of the second iteration on the next level
        self._hint = 1.0

    # level solvers --------------------------------------------------------

    def base(self, pert):
        self.diag.base_solves += 1
        return solve_alpha0(self.weights, pert, self.backend, self.ref, self.d)

    def _picard(self, j, pert, warm, tol, record=None):
        """Picard iteration at level ``levels[j]`` with inner solves at ``levels[j-1]``."""
        cfg = self.config
        a_prev = self.levels[j - 1]
        delta = self.levels[j] - a_prev
        theta = warm
        gaps = []
        scale = 1.0 + m2_norm(warm)
        # nested tolerances shrink by inner_tol_ratio per depth; below the
        # round-off level of the iterates no gap can meet them
        tol = max(tol, ROUNDOFF_GAP * scale)
        for it in range(cfg.max_iters):
            # inner accuracy tracks the predicted size of the next step, so the
            # iterate returned at this level is as accurate as its own gap
            if not gaps:
                pred = cfg.inner_tol_ratio * scale
            elif len(gaps) == 1:
                pred = gaps[-1] * (self._hint if record is not None else 1.0)
            else:
                pred = gaps[-1] * min(1.0, gaps[-1] / gaps[-2])
            itol = cfg.inner_tol_ratio * max(tol, pred)
            cur = theta
            solver = lambda p, _w=cur, _t=itol: self.solve_level(j - 1, p, _w, _t)
            new = t_map(self.coeffs, self.weights, a_prev, delta, theta, pert, solver,
                        self.backend, self.ref)
            gap = _gap(new, theta)
            gaps.append(gap)
            theta = new
            if record is not None:
                record.append(gap)
            if gap < tol:
                if record is not None and len(gaps) >= 2 and gaps[-2] > 0:
                    self._hint = float(np.clip(gaps[-1] / gaps[-2], cfg.inner_tol_ratio, 1.0))
                return theta, gaps
            if len(gaps) >= 2 and gaps[-1] >= gaps[-2] and gaps[-2] < NOISE_GAP * scale:
                # stalled at the noise floor: the previous iterate is as good as it gets
                self.diag.noise_stalls += 1
                return cur, gaps[:-1]
            if not np.isfinite(gap) or gap > 1e6 or (
                    len(gaps) >= 4 and gaps[-1] > gaps[-2] > gaps[-3] > gaps[-4]):
                raise _Diverged(gaps)
        raise _Diverged(gaps)

    def solve_level(self, j, pert, warm, tol):
        if j == 0:
            return self.base(pert)
        theta, _ = self._picard(j, pert, warm, tol)
        return theta

    # drivers ------------------------------------------------------------

    def _initial_delta(self):
        cfg = self.config
        if cfg.delta_init == "auto":
            pr = probe_k3(self.coeffs, self.weights, self.backend, cfg.probe_pairs,
                          cfg.probe_seed, self.pert)
            self.diag.k3_hat = pr["k3_hat"]
            return float(np.clip(pr["delta0"], cfg.delta_min, 1.0))
        return float(cfg.delta_init)

    def run_nested(self):
        cfg = self.config
        tol = cfg.fixpoint_tol
        theta = self.base(self.pert)
        self.diag.levels.append(0.0)
        self.diag.iterations.append(0)
        self.diag.factors.append([])
        self.diag.gaps.append([])
        delta = self._initial_delta()
        while self.levels[-1] < 1.0:
            alpha = min(1.0, self.levels[-1] + delta)
            self.levels.append(alpha)
            record = []
            try:
                theta_new, gaps = self._picard(len(self.levels) - 1, self.pert, theta, tol,
                                               record)
            except _Diverged as exc:
                self.levels.pop()
                self.diag.rejected.append({"alpha": alpha, "delta": delta,
                                           "gaps": [float(g) for g in exc.gaps]})
                delta /= 2.0
                if delta < cfg.delta_min:
                    self.diag.delta_history.append(delta)
                    raise ConvergenceError(
                        f"continuation step fell below delta_min={cfg.delta_min}",
                        self.diag) from None
                continue
            theta = theta_new
            self.diag.delta_history.append(delta)
            self.diag.levels.append(alpha)
            self.diag.iterations.append(len(gaps))
            self.diag.gaps.append([float(g) for g in gaps])
            self.diag.factors.append(_factors(gaps))
            if cfg.adaptive and len(gaps) <= cfg.fast_iters:
                delta = min(1.0, delta * cfg.grow)
        return theta

    def run_direct(self):
        cfg = self.config
        self.diag.guaranteed = False
        self.diag.warnings.append("direct mode: damped single-level iteration without a "
                                  "convergence guarantee")
        theta = self.base(self.pert)
        gaps = []
        for it in range(cfg.max_iters):
            mapped = t_map(self.coeffs, self.weights, 0.0, 1.0, theta, self.pert, self.base,
                           self.backend, self.ref)
            step = mapped - theta
            new = SolutionEnsemble(theta.grid, theta.x + cfg.damping * step.x,
                                   theta.y + cfg.damping * step.y,
                                   theta.z + cfg.damping * step.z, self.backend)
            gap = _gap(new, theta)
            gaps.append(gap)
            theta = new
            if gap < cfg.fixpoint_tol:
                break
            if not np.isfinite(gap) or gap > 1e6:
                break
        self.diag.levels = [0.0, 1.0]
        self.diag.iterations = [0, len(gaps)]
        self.diag.gaps = [[], [float(g) for g in gaps]]
        self.diag.factors = [[], _factors(gaps)]
        if not gaps or gaps[-1] >= cfg.fixpoint_tol:
            raise ConvergenceError("direct iteration did not converge", self.diag)
        return theta

    def run(self):
        t0 = time.perf_counter()
        theta = self.run_nested() if self.config.mode == NESTED else self.run_direct()
        self.diag.residual = fbsde_residual(self.coeffs, theta, self.backend, self.pert)
        self.diag.converged = True
        self.diag.seconds = time.perf_counter() - t0
        if self.diag.residual > 100.0 * self.config.fixpoint_tol:
            raise ConsistencyError(
                f"residual {self.diag.residual:.3e} exceeds 100 x tolerance", self.diag)
        return theta, self.diag


def _factors(gaps):
    return [float(gaps[i + 1] / gaps[i]) if gaps[i] > 0 else 0.0
            for i in range(len(gaps) - 1)]


def solve(coeffs: CoefficientSet, weights: DominationWeights,
          config: Optional[ContinuationConfig] = None, backend=None,
          pert: Optional[PerturbationTriple] = None):
    """Solve the coupled system; returns ``(SolutionEnsemble, SolveDiagnostics)``."""
    if backend is None:
        raise DomainError("a scenario backend is required")
    cfg = config or ContinuationConfig()
    return ContinuationSolver(coeffs, weights, cfg, backend, pert).run()


# ---------------------------------------------------------------------------
# independent sequential route for decoupled systems


def sequential_solve(coeffs: LinearCoefficients, case: str, backend,
                     pert: Optional[PerturbationTriple] = None) -> SolutionEnsemble:
    """Solve a decoupled LINEAR system by one backward and one forward sweep.

    Case A requires ``Phi`` and ``g`` to ignore ``x``; the backward equation is
    solved first. Case B requires ``Psi``, ``b`` and ``sigma`` to ignore
    ``(y, z)``; the forward equation is solved first.
    """
    if not isinstance(coeffs, LinearCoefficients):
        raise DomainError("sequential solve needs LINEAR coefficients")
    n, d, D = coeffs.n, coeffs.d, coeffs.D
    grid = backend.grid
    P = backend.n_paths
    pert = pert if pert is not None else PerturbationTriple.zeros(grid, P, n, d)
    zn = np.zeros((P, n))
    if case == CASE_A:
        bad = np.abs(coeffs.phi_mat).max() + np.abs(coeffs.phi_bar).max() + max(
            np.abs(coeffs.blocks(grid.time(k))["g"][0][:, :n]).max()
            + np.abs(coeffs.blocks(grid.time(k))["g"][1][:, :n]).max() for k in range(grid.N))
        if bad > 0:
            raise DomainError("case A sequential solve needs Phi and g independent of x")

        def driver(k, y, yb, z, zb):
            th = stack_theta(zn, y, z)
            G = coeffs.gamma(grid.time(k), th, stack_theta(np.zeros(n), yb, zb))
            return np.broadcast_to(G, th.shape)[:, :n] + pert.phi[k]

        yT = coeffs.phi(zn, np.zeros(n)) + pert.eta
        y, z = solve_mf_bsde(driver, yT, backend)
        x0 = coeffs.psi(backend.mean(y[0])) + pert.xi

        def full(k, x, xb):
            th = stack_theta(x, y[k], z[k])
            return np.broadcast_to(coeffs.gamma(grid.time(k), th, stack_theta(
                xb, backend.mean(y[k]), backend.mean(z[k]))), th.shape)

        x = solve_mf_sde(lambda k, x, xb: full(k, x, xb)[:, n:2 * n] + pert.psi[k],
                         lambda k, x, xb: unflatten_z(full(k, x, xb)[:, 2 * n:], n, d)
                         + pert.gamma[k], x0, backend)
    elif case == CASE_B:
        bad = np.abs(coeffs.psi_mat).max() + max(
            np.abs(at_rows(coeffs, grid.time(k))).max() for k in range(grid.N))
        if bad > 0:
            raise DomainError("case B sequential solve needs Psi, b, sigma independent of (y, z)")
        zyz = np.zeros((P, D - n))

        def full(k, x, xb):
            th = np.concatenate([x, zyz], axis=-1)
            thb = np.concatenate([np.broadcast_to(xb, (n,)), np.zeros(D - n)])
            return np.broadcast_to(coeffs.gamma(grid.time(k), th, thb), th.shape)

        x0 = coeffs.psi(np.zeros(n)) + pert.xi
        x = solve_mf_sde(lambda k, x, xb: full(k, x, xb)[:, n:2 * n] + pert.psi[k],
                         lambda k, x, xb: unflatten_z(full(k, x, xb)[:, 2 * n:], n, d)
                         + pert.gamma[k], x0, backend)
        yT = coeffs.phi(x[-1], backend.mean(x[-1])) + pert.eta

        def driver(k, y, yb, z, zb):
            th = stack_theta(x[k], y, z)
            G = coeffs.gamma(grid.time(k), th, stack_theta(backend.mean(x[k]), yb, zb))
            return np.broadcast_to(G, th.shape)[:, :n] + pert.phi[k]

        y, z = solve_mf_bsde(driver, yT, backend)
    else:
        raise DomainError(f"unknown case {case!r}")
    return SolutionEnsemble(grid, x, y, z, backend)


def at_rows(coeffs: LinearCoefficients, s):
    """Forward rows of both gamma matrices restricted to the ``(y, z)`` columns."""
    n = coeffs.n
    Gm, Gb = at(coeffs.gamma_mat, s), at(coeffs.gamma_bar, s)
    return np.concatenate([Gm[n:, n:].ravel(), Gb[n:, n:].ravel()])


# ---------------------------------------------------------------------------
# estimate reports


def apriori_report(thetaA: SolutionEnsemble, thetaB: SolutionEnsemble,
                   pertA: PerturbationTriple, pertB: PerturbationTriple, backend,
                   tol: float = 1e-14) -> dict:
    """Solution gap versus perturbation gap for one coefficient family level."""
    lhs = _gap(thetaA, thetaB) ** 2
    J = h_norm(pertA - pertB, backend) ** 2
    rep = _ratio_report(lhs, J, tol)
    return {"lhs": rep["lhs"], "J_hat": rep["rhs_core"], "ratio": rep["ratio"]}


def wellposedness_report(coeffsA: CoefficientSet, coeffsB: CoefficientSet,
                         thetaA: SolutionEnsemble, thetaB: SolutionEnsemble, backend,
                         tol: float = 1e-14) -> dict:
    """Solution gap versus coefficient gap sampled along ``thetaB``."""
    n = coeffsA.n
    h = backend.grid.h
    lhs = _gap(thetaA, thetaB) ** 2
    y0 = _y0_vector(thetaB.y[0], backend)
    d_psi = coeffsA.psi(y0) - coeffsB.psi(y0)
    xN = thetaB.x[-1]
    xNb = backend.mean(xN)
    d_phi = np.broadcast_to(coeffsA.phi(xN, xNb) - coeffsB.phi(xN, xNb), xN.shape)
    dG = gamma_along(coeffsA, thetaB, backend) - gamma_along(coeffsB, thetaB, backend)
    ig = h * np.sum(np.linalg.norm(dG[..., :n], axis=-1), axis=0)
    ib = h * np.sum(np.linalg.norm(dG[..., n:2 * n], axis=-1), axis=0)
    isg = h * np.sum(np.sum(dG[..., 2 * n:] ** 2, axis=-1), axis=0)
    I_hat = float(np.sum(d_psi ** 2) + backend.mean(np.sum(d_phi ** 2, axis=-1))
                  + backend.mean(ig ** 2) + backend.mean(ib ** 2) + backend.mean(isg))
    rep = _ratio_report(lhs, I_hat, tol)
    return {"lhs": rep["lhs"], "I_hat": rep["rhs_core"], "ratio": rep["ratio"]}
