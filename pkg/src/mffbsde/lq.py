"""Mean-field linear-quadratic control problems and their Hamiltonian systems.

Two problems are covered:

* forward (FLQ): the state is a controlled linear mean-field SDE whose initial
  value ``H xi + x_t`` is itself a control;
* backward (BLQ): the state is a controlled linear mean-field BSDE whose
  terminal value ``P eta + Pbar E eta + y_T`` is a control.

For each problem this module builds the coupled Hamiltonian FBSDE (solvable
by :mod:`mffbsde.continuation`), extracts the optimal control from its
solution, and evaluates the cost and the first-order stationarity residuals.
An independent oracle minimizes the discrete cost directly on the tree by
conjugate gradients with an exact discrete adjoint.

Matrices may be constant arrays or callables ``s -> array`` (piecewise
constant on the grid). ``C``/``D`` of the forward problem are stacked as
``(d, n, n)`` and ``(d, n, m)``; ``B`` of the backward problem is
``(d, n, n)``; ``L`` is ``(d, n, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Callable, Dict, Optional, Union

import numpy as np

from .backward import solve_mf_bsde
from .conditions import TIE_TOL
from .continuation import ContinuationConfig, solve
from .core import (CASE_A, CASE_B, BudgetExceeded, ConditioningError, DomainError,
                   DominationWeights, LinearCoefficients, PerturbationTriple,
                   SolutionEnsemble, TimeGrid, at, flatten_z, operator_norm)
from .forward import solve_mf_sde

MatrixLike = Union[np.ndarray, Callable[[float], np.ndarray]]

ORACLE_MAX_DIM = 50_000


# ---------------------------------------------------------------------------
# small linear-algebra helpers


def psd_sqrt(S, tol: float = TIE_TOL) -> np.ndarray:
    """Symmetric square root with eigenvalues below ``tol`` clamped to zero."""
    w, V = np.linalg.eigh(np.asarray(S, dtype=float))
    w = np.where(w < tol, 0.0, w)
    return (V * np.sqrt(w)) @ V.T


def pd_inv_sqrt(S) -> np.ndarray:
    """``S^{-1/2}`` for a symmetric positive definite ``S``."""
    w, V = np.linalg.eigh(np.asarray(S, dtype=float))
    if np.min(w) <= 0:
        raise DomainError("matrix is not positive definite")
    return (V / np.sqrt(w)) @ V.T


def _min_eig(S) -> float:
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return float("inf")
    return float(np.min(np.linalg.eigvalsh(S)))


def _check_symmetric(name, S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DomainError(f"{name} must be square, got shape {S.shape}")
    if np.max(np.abs(S - S.T), initial=0.0) >= 1e-12:
        raise DomainError(f"{name} is not symmetric")


def _as_matrix(value, shape, name):
    if value is None:
        return np.zeros(shape)
    if callable(value):
        return value
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        if arr.size == np.prod(shape) and len(shape) >= 1:
            arr = arr.reshape(shape)
        else:
            raise DomainError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def _times(grid: Optional[TimeGrid]):
    return (0.0,) if grid is None else tuple(grid.times[:-1])


def _apply(mat, v):
    """``v @ mat.T`` for row-stacked vectors ``v``."""
    return np.asarray(v) @ np.asarray(mat).T


# ---------------------------------------------------------------------------
# problem data


_FLQ_SHAPES = {
    "A": ("n", "n"), "Abar": ("n", "n"), "B": ("n", "m"), "Bbar": ("n", "m"),
    "C": ("d", "n", "n"), "Cbar": ("d", "n", "n"), "D": ("d", "n", "m"),
    "Dbar": ("d", "n", "m"), "H": ("n", "n"), "alpha": ("n",), "beta": ("d", "n"),
    "x_t": ("n",), "M": ("n", "n"), "G": ("n", "n"), "Gbar": ("n", "n"),
    "Q": ("n", "n"), "Qbar": ("n", "n"), "R": ("m", "m"), "Rbar": ("m", "m"),
}

_BLQ_SHAPES = {
    "A": ("n", "n"), "Abar": ("n", "n"), "B": ("d", "n", "n"), "Bbar": ("d", "n", "n"),
    "C": ("n", "m"), "Cbar": ("n", "m"), "P": ("n", "n"), "Pbar": ("n", "n"),
    "alpha": ("n",), "M": ("n", "n"), "G": ("n", "n"), "Gbar": ("n", "n"),
    "Q": ("n", "n"), "Qbar": ("n", "n"), "L": ("d", "n", "n"), "Lbar": ("d", "n", "n"),
    "R": ("m", "m"), "Rbar": ("m", "m"),
}

_TIME_CONSTANT = {"H", "x_t", "M", "G", "Gbar", "P", "Pbar"}


class _LQBase:
    _shapes: Dict[str, tuple] = {}
    _weights: tuple = ()

    def _init_fields(self):
        dims = {"n": self.n, "m": self.m, "d": self.d}
        for name, sym in self._shapes.items():
            shape = tuple(dims[s] for s in sym)
            val = _as_matrix(getattr(self, name), shape, name)
            if callable(val) and name in _TIME_CONSTANT:
                raise DomainError(f"{name} must be constant in time")
            object.__setattr__(self, name, val)
        for name in self._weights:
            val = getattr(self, name)
            if not callable(val):
                for i, S in enumerate(np.reshape(val, (-1,) + val.shape[-2:])):
                    _check_symmetric(name if val.ndim == 2 else f"{name}[{i}]", S)

    def get(self, name: str, s: float = 0.0) -> np.ndarray:
        """Matrix ``name`` at time ``s`` (shape-checked for callables)."""
        val = at(getattr(self, name), s)
        dims = {"n": self.n, "m": self.m, "d": self.d}
        shape = tuple(dims[c] for c in self._shapes[name])
        val = np.asarray(val, dtype=float)
        if val.shape != shape:
            val = _as_matrix(val, shape, name)
        return val

    def time_dependent(self) -> bool:
        return any(callable(getattr(self, k)) for k in self._shapes)

    def negated_weights(self):
        """Copy with every objective weight multiplied by ``-1``."""
        def neg(v):
            return (lambda s, _v=v: -np.asarray(_v(s))) if callable(v) else -v
        return replace(self, **{k: neg(getattr(self, k)) for k in self._weights})

    @classmethod
    def from_dict(cls, data: dict):
        """Build from a mapping of field names to nested lists (or numbers)."""
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise DomainError(f"unknown problem fields: {sorted(unknown)}")
        return cls(**{k: (v if k in ("n", "m", "d") else np.asarray(v, dtype=float))
                      for k, v in data.items()})

    def to_dict(self) -> dict:
        if self.time_dependent():
            raise DomainError("time-dependent problems cannot be serialized")
        out = {"n": self.n, "m": self.m, "d": self.d}
        for k in self._shapes:
            out[k] = np.asarray(getattr(self, k)).tolist()
        return out


@dataclass(frozen=True, eq=False)
class ForwardLQProblem(_LQBase):
    """Controlled linear MF-SDE with a quadratic cost; unspecified data is zero.

    ``dx = (A x + Abar E x + B u + Bbar E u + alpha) ds
    + sum_i (C_i x + Cbar_i E x + D_i u + Dbar_i E u + beta_i) dW_i``,
    ``x(t0) = H xi + x_t``.
    """

    n: int
    m: int
    d: int = 1
    A: MatrixLike = None
    Abar: MatrixLike = None
    B: MatrixLike = None
    Bbar: MatrixLike = None
    C: MatrixLike = None
    Cbar: MatrixLike = None
    D: MatrixLike = None
    Dbar: MatrixLike = None
    H: MatrixLike = None
    alpha: MatrixLike = None
    beta: MatrixLike = None
    x_t: MatrixLike = None
    M: MatrixLike = None
    G: MatrixLike = None
    Gbar: MatrixLike = None
    Q: MatrixLike = None
    Qbar: MatrixLike = None
    R: MatrixLike = None
    Rbar: MatrixLike = None

    _shapes = _FLQ_SHAPES
    _weights = ("M", "G", "Gbar", "Q", "Qbar", "R", "Rbar")

    def __post_init__(self):
        self._init_fields()


@dataclass(frozen=True, eq=False)
class BackwardLQProblem(_LQBase):
    """Controlled linear MF-BSDE with a quadratic cost; unspecified data is zero.

    ``dy = (A y + Abar E y + sum_i (B_i z_i + Bbar_i E z_i) + C u + Cbar E u + alpha) ds
    + z dW``, ``y(T) = P eta + Pbar E eta + y_T``. ``y_T`` is a vector or a
    per-scenario array ``(P, n)``.
    """

    n: int
    m: int
    d: int = 1
    A: MatrixLike = None
    Abar: MatrixLike = None
    B: MatrixLike = None
    Bbar: MatrixLike = None
    C: MatrixLike = None
    Cbar: MatrixLike = None
    P: MatrixLike = None
    Pbar: MatrixLike = None
    alpha: MatrixLike = None
    y_T: MatrixLike = None
    M: MatrixLike = None
    G: MatrixLike = None
    Gbar: MatrixLike = None
    Q: MatrixLike = None
    Qbar: MatrixLike = None
    L: MatrixLike = None
    Lbar: MatrixLike = None
    R: MatrixLike = None
    Rbar: MatrixLike = None

    _shapes = _BLQ_SHAPES
    _weights = ("M", "G", "Gbar", "Q", "Qbar", "L", "Lbar", "R", "Rbar")

    def __post_init__(self):
        self._init_fields()
        yT = np.zeros(self.n) if self.y_T is None else np.asarray(self.y_T, dtype=float)
        if yT.shape[-1] != self.n or yT.ndim > 2:
            raise DomainError(f"y_T must have trailing dimension {self.n}")
        object.__setattr__(self, "y_T", yT)

    def terminal_data(self, backend) -> np.ndarray:
        """``y_T`` broadcast to ``(P, n)``."""
        yT = self.y_T
        if yT.ndim == 2 and yT.shape[0] != backend.n_paths:
            raise DomainError("y_T does not match the scenario count")
        return np.broadcast_to(yT, (backend.n_paths, self.n)).copy()

    def to_dict(self) -> dict:
        out = super().to_dict()
        out["y_T"] = self.y_T.tolist()
        return out


@dataclass
class ControlFLQ:
    """Initial control ``xi`` ``(n,)`` and process ``u`` ``(N, P, m)``."""

    xi: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if not (np.all(np.isfinite(self.xi)) and np.all(np.isfinite(self.u))):
            raise DomainError("control is not finite")

    def __add__(self, other):
        return ControlFLQ(self.xi + other.xi, self.u + other.u)

    def scaled(self, c):
        return ControlFLQ(c * self.xi, c * self.u)


@dataclass
class ControlBLQ:
    """Terminal control ``eta`` ``(P, n)`` and process ``u`` ``(N, P, m)``."""

    eta: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if not (np.all(np.isfinite(self.eta)) and np.all(np.isfinite(self.u))):
            raise DomainError("control is not finite")

    def __add__(self, other):
        return ControlBLQ(self.eta + other.eta, self.u + other.u)

    def scaled(self, c):
        return ControlBLQ(c * self.eta, c * self.u)


def _check_control_shape(u, backend, m):
    N = backend.grid.N
    if u.shape != (N, backend.n_paths, m):
        raise DomainError(f"control process must have shape {(N, backend.n_paths, m)}, "
                          f"got {u.shape}")


# ---------------------------------------------------------------------------
# positive definiteness


@dataclass
class PDReport:
    """Outcome of a definiteness check.

    ``checks`` maps each condition to its smallest eigenvalue over the grid
    times, the required bound and the pass flag; ``witness`` is the smallest
    eigenvalue of the first failing condition (``None`` when all pass).
    """

    passed: bool
    checks: Dict[str, dict] = field(default_factory=dict)

    @property
    def failures(self):
        return [k for k, v in self.checks.items() if not v["pass"]]

    @property
    def witness(self):
        bad = self.failures
        return None if not bad else self.checks[bad[0]]["min_eig"]

    def __bool__(self):
        return self.passed


def _pd_report(prob, conditions, times) -> PDReport:
    checks = {}
    for label, fn, bound, strict in conditions:
        worst, when = float("inf"), None
        for s in times:
            for S in fn(s):
                _check_symmetric(label, S)
                e = _min_eig(S)
                if e < worst:
                    worst, when = e, s
        ok = worst > bound + TIE_TOL if strict else worst >= bound - TIE_TOL
        checks[label] = {"min_eig": worst, "bound": bound, "strict": strict,
                         "time": when, "pass": bool(ok)}
    return PDReport(all(c["pass"] for c in checks.values()), checks)


def check_pd_flq(prob: ForwardLQProblem, delta_gap: float = 1e-6,
                 grid: Optional[TimeGrid] = None) -> PDReport:
    """Minimum-eigenvalue check of the forward positive definiteness condition."""
    g = lambda k: (lambda s: [prob.get(k, s)])
    tot = lambda a, b: (lambda s: [prob.get(a, s) + prob.get(b, s)])
    conds = [("M>0", g("M"), 0.0, True), ("G>=0", g("G"), 0.0, False),
             ("G+Gbar>=0", tot("G", "Gbar"), 0.0, False), ("Q>=0", g("Q"), 0.0, False),
             ("Q+Qbar>=0", tot("Q", "Qbar"), 0.0, False),
             ("R>=delta", g("R"), delta_gap, False),
             ("R+Rbar>=delta", tot("R", "Rbar"), delta_gap, False)]
    return _pd_report(prob, conds, _times(grid))


def check_pd_blq(prob: BackwardLQProblem, delta_gap: float = 1e-6,
                 grid: Optional[TimeGrid] = None) -> PDReport:
    """Minimum-eigenvalue check of the backward positive definiteness condition."""
    g = lambda k: (lambda s: [prob.get(k, s)])
    tot = lambda a, b: (lambda s: [prob.get(a, s) + prob.get(b, s)])
    blocks = lambda a: (lambda s: list(prob.get(a, s)))
    blocks_tot = (lambda s: list(prob.get("L", s) + prob.get("Lbar", s)))
    conds = [("M>=0", g("M"), 0.0, False), ("G>0", g("G"), 0.0, True),
             ("G+Gbar>0", tot("G", "Gbar"), 0.0, True), ("Q>=0", g("Q"), 0.0, False),
             ("Q+Qbar>=0", tot("Q", "Qbar"), 0.0, False), ("L>=0", blocks("L"), 0.0, False),
             ("L+Lbar>=0", blocks_tot, 0.0, False),
             ("R>=delta", g("R"), delta_gap, False),
             ("R+Rbar>=delta", tot("R", "Rbar"), delta_gap, False)]
    return _pd_report(prob, conds, _times(grid))


def _require_pd(report: PDReport, what: str):
    if not report.passed:
        raise DomainError(f"{what} definiteness condition fails: {report.failures} "
                          f"(witness eigenvalue {report.witness})")


# ---------------------------------------------------------------------------
# Hamiltonian systems


def _stack(blocks):
    """``(d, n, k)`` -> ``(d n, k)`` with block ``i`` in rows ``i n .. (i+1) n``."""
    blocks = np.asarray(blocks)
    return blocks.reshape(blocks.shape[0] * blocks.shape[1], blocks.shape[2])


def _flq_blocks(prob: ForwardLQProblem, s: float):
    """Gamma matrices ``(mat, bar, off)`` of the forward Hamiltonian at time ``s``."""
    n, m, d = prob.n, prob.m, prob.d
    A, Ab = prob.get("A", s), prob.get("Abar", s)
    B, Bb = prob.get("B", s), prob.get("Bbar", s)
    C, Cb = prob.get("C", s), prob.get("Cbar", s)
    Dm, Db = _stack(prob.get("D", s)), _stack(prob.get("Dbar", s))
    Q, Qb = prob.get("Q", s), prob.get("Qbar", s)
    R, Rb = prob.get("R", s), prob.get("Rbar", s)
    Ri, Rti = np.linalg.inv(R), np.linalg.inv(R + Rb)
    Bt, Dt = B + Bb, Dm + Db
    # feedback u = -Ri [B^T (y - Ey) + D^T (z - Ez)] - Rti [Bt^T Ey + Dt^T Ez]
    K = np.hstack([B.T, Dm.T])               # (m, n + nd) acting on (y, z)
    Kt = np.hstack([Bt.T, Dt.T])
    U_mat = -Ri @ K
    U_bar = Ri @ K - Rti @ Kt
    Dsz = n * (2 + d)
    mat, bar = np.zeros((Dsz, Dsz)), np.zeros((Dsz, Dsz))
    # g rows: -(A^T y + Ab^T Ey + C^T z + Cb^T Ez + Q x + Qb Ex)
    mat[:n, :n], bar[:n, :n] = -Q, -Qb
    mat[:n, n:2 * n], bar[:n, n:2 * n] = -A.T, -Ab.T
    mat[:n, 2 * n:] = -np.hstack([C[i].T for i in range(d)])
    bar[:n, 2 * n:] = -np.hstack([Cb[i].T for i in range(d)])
    # b rows
    mat[n:2 * n, :n], bar[n:2 * n, :n] = A, Ab
    mat[n:2 * n, n:] = B @ U_mat
    bar[n:2 * n, n:] = B @ U_bar + Bb @ (U_mat + U_bar)
    # sigma_i rows
    for i in range(d):
        r = slice(2 * n + i * n, 2 * n + (i + 1) * n)
        Di, Dbi = prob.get("D", s)[i], prob.get("Dbar", s)[i]
        mat[r, :n], bar[r, :n] = C[i], Cb[i]
        mat[r, n:] = Di @ U_mat
        bar[r, n:] = Di @ U_bar + Dbi @ (U_mat + U_bar)
    off = np.concatenate([np.zeros(n), prob.get("alpha", s), prob.get("beta", s).ravel()])
    return mat, bar, off


def _flq_witness(prob: ForwardLQProblem, times):
    """Case A weights: ``H_w = M^{-1/2} H^T``, ``B_w = R^{-1/2} B^T``, ``C_w = R^{-1/2} D^T``."""
    Mi = pd_inv_sqrt(prob.get("M"))
    Hm = prob.get("H")
    bound = operator_norm(Hm @ Mi)

    def parts(s):
        R, Rt = prob.get("R", s), prob.get("R", s) + prob.get("Rbar", s)
        Ri, Rti = pd_inv_sqrt(R), pd_inv_sqrt(Rt)
        B, Bt = prob.get("B", s), prob.get("B", s) + prob.get("Bbar", s)
        Dm = _stack(prob.get("D", s))
        Dt = Dm + _stack(prob.get("Dbar", s))
        return Ri @ B.T, Rti @ Bt.T, Ri @ Dm.T, Rti @ Dt.T, B @ Ri, Bt @ Rti, Dm @ Ri, Dt @ Rti

    fb = 0.0
    for s in times:
        *_, BR, BRt, DR, DRt = parts(s)
        fb = max(fb, operator_norm(np.block([[BR, BRt], [DR, DRt]])))
    mu = min(1.0, 1.0 / bound if bound > 0 else np.inf, 1.0 / fb if fb > 0 else np.inf)
    if prob.time_dependent():
        fns = [lambda s, i=i: parts(s)[i] for i in range(4)]
        Bw, Btw, Cw, Ctw = fns
    else:
        Bw, Btw, Cw, Ctw = parts(times[0])[:4]
    return DominationWeights.build(prob.n, prob.d, mu=mu, H=Mi @ Hm.T, B=Bw, Bt=Btw,
                                   C=Cw, Ct=Ctw, case=CASE_A)


def hamiltonian_flq(prob: ForwardLQProblem, grid: Optional[TimeGrid] = None,
                    delta_gap: float = 1e-6, check: bool = True):
    """Forward Hamiltonian system and its Case A domination witness.

    Returns ``(LinearCoefficients, DominationWeights)``. The state is ``x``, the
    adjoint is ``(y, z)``; ``x(t0) = -H M^{-1} H^T y(t0) + x_t`` and
    ``y(T) = G x(T) + Gbar E x(T)``. ``check=False`` skips the definiteness
    check and the witness (used for maximization problems).
    """
    if check:
        _require_pd(check_pd_flq(prob, delta_gap, grid), "forward")
    if prob.time_dependent() and grid is None:
        raise DomainError("time-dependent problems need the grid")
    Hm, M = prob.get("H"), prob.get("M")
    psi_mat = -Hm @ np.linalg.solve(M, Hm.T)
    if prob.time_dependent():
        cache = {}

        def blocks(s):
            if s not in cache:
                cache[s] = _flq_blocks(prob, s)
            return cache[s]

        gm, gb, go = (lambda s: blocks(s)[0]), (lambda s: blocks(s)[1]), (lambda s: blocks(s)[2])
    else:
        gm, gb, go = _flq_blocks(prob, 0.0)
    coeffs = LinearCoefficients(prob.n, prob.d, psi_mat=psi_mat, psi_off=prob.get("x_t"),
                                phi_mat=prob.get("G"), phi_bar=prob.get("Gbar"),
                                gamma_mat=gm, gamma_bar=gb, gamma_off=go)
    weights = _flq_witness(prob, _times(grid)) if check else None
    return coeffs, weights


def _blq_blocks(prob: BackwardLQProblem, s: float):
    n, d = prob.n, prob.d
    A, Ab = prob.get("A", s), prob.get("Abar", s)
    B, Bb = prob.get("B", s), prob.get("Bbar", s)
    C, Cb = prob.get("C", s), prob.get("Cbar", s)
    Q, Qb = prob.get("Q", s), prob.get("Qbar", s)
    L, Lb = prob.get("L", s), prob.get("Lbar", s)
    R, Rb = prob.get("R", s), prob.get("Rbar", s)
    Ct = C + Cb
    K = C @ np.linalg.solve(R, C.T)
    Kt = Ct @ np.linalg.solve(R + Rb, Ct.T)
    Dsz = n * (2 + d)
    mat, bar = np.zeros((Dsz, Dsz)), np.zeros((Dsz, Dsz))
    # g rows: A y + Ab Ey + B z + Bb Ez - K (x - Ex) - Kt Ex + alpha
    mat[:n, :n], bar[:n, :n] = -K, K - Kt
    mat[:n, n:2 * n], bar[:n, n:2 * n] = A, Ab
    mat[:n, 2 * n:] = np.hstack(list(B))
    bar[:n, 2 * n:] = np.hstack(list(Bb))
    # b rows: -(A^T x + Ab^T Ex + Q y + Qb Ey)
    mat[n:2 * n, :n], bar[n:2 * n, :n] = -A.T, -Ab.T
    mat[n:2 * n, n:2 * n], bar[n:2 * n, n:2 * n] = -Q, -Qb
    # sigma_i rows: -(B_i^T x + Bb_i^T Ex + L_i z_i + Lb_i E z_i)
    for i in range(d):
        r = slice(2 * n + i * n, 2 * n + (i + 1) * n)
        mat[r, :n], bar[r, :n] = -B[i].T, -Bb[i].T
        mat[r, r], bar[r, r] = -L[i], -Lb[i]
    off = np.zeros(Dsz)
    off[:n] = prob.get("alpha", s)
    return mat, bar, off


def _blq_witness(prob: BackwardLQProblem, times):
    """Case B weights: ``P_w = G^{-1/2} P^T``, ``A_w = R^{-1/2} C^T`` and tilde analogues."""
    G, Gt = prob.get("G"), prob.get("G") + prob.get("Gbar")
    P, Pt = prob.get("P"), prob.get("P") + prob.get("Pbar")
    Gi, Gti = pd_inv_sqrt(G), pd_inv_sqrt(Gt)
    bound = operator_norm(np.hstack([P @ Gi, Pt @ Gti]))

    def parts(s):
        R, Rt = prob.get("R", s), prob.get("R", s) + prob.get("Rbar", s)
        Ri, Rti = pd_inv_sqrt(R), pd_inv_sqrt(Rt)
        C, Ct = prob.get("C", s), prob.get("C", s) + prob.get("Cbar", s)
        return Ri @ C.T, Rti @ Ct.T, C @ Ri, Ct @ Rti

    gb = 0.0
    for s in times:
        *_, CR, CRt = parts(s)
        gb = max(gb, operator_norm(np.hstack([CR, CRt])))
    nu = min(1.0, 1.0 / bound if bound > 0 else np.inf, 1.0 / gb if gb > 0 else np.inf)
    if prob.time_dependent():
        Aw, Atw = (lambda s: parts(s)[0]), (lambda s: parts(s)[1])
    else:
        Aw, Atw = parts(times[0])[:2]
    return DominationWeights.build(prob.n, prob.d, nu=nu, P=Gi @ P.T, Pt=Gti @ Pt.T,
                                   A=Aw, At=Atw, case=CASE_B)


def hamiltonian_blq(prob: BackwardLQProblem, grid: Optional[TimeGrid] = None,
                    delta_gap: float = 1e-6, check: bool = True):
    """Backward Hamiltonian system and its Case B domination witness.

    The adjoint is the forward component ``x`` with ``x(t0) = -M y(t0)``; the
    state is ``(y, z)`` with ``y(T) = P G^{-1} P^T (x - E x) + Pt Gt^{-1} Pt^T E x``
    plus ``y_T``. ``y_T`` is not part of the coefficients: pass
    :func:`blq_perturbation` to the solver.
    """
    if check:
        _require_pd(check_pd_blq(prob, delta_gap, grid), "backward")
    if prob.time_dependent() and grid is None:
        raise DomainError("time-dependent problems need the grid")
    G, Gt = prob.get("G"), prob.get("G") + prob.get("Gbar")
    P, Pt = prob.get("P"), prob.get("P") + prob.get("Pbar")
    phi_mat = P @ np.linalg.solve(G, P.T)
    phi_bar = Pt @ np.linalg.solve(Gt, Pt.T) - phi_mat
    if prob.time_dependent():
        cache = {}

        def blocks(s):
            if s not in cache:
                cache[s] = _blq_blocks(prob, s)
            return cache[s]

        gm, gb, go = (lambda s: blocks(s)[0]), (lambda s: blocks(s)[1]), (lambda s: blocks(s)[2])
    else:
        gm, gb, go = _blq_blocks(prob, 0.0)
    coeffs = LinearCoefficients(prob.n, prob.d, psi_mat=-prob.get("M"), phi_mat=phi_mat,
                                phi_bar=phi_bar, gamma_mat=gm, gamma_bar=gb, gamma_off=go)
    weights = _blq_witness(prob, _times(grid)) if check else None
    return coeffs, weights


def blq_perturbation(prob: BackwardLQProblem, backend) -> PerturbationTriple:
    """Perturbation carrying ``y_T`` as the terminal term."""
    return PerturbationTriple.from_parts(backend.grid, np.zeros(prob.n),
                                         prob.terminal_data(backend))


# ---------------------------------------------------------------------------
# control extraction


def _centered(backend, v):
    mean = backend.mean(v)
    return v - mean, mean


def extract_control_flq(prob: ForwardLQProblem, theta: SolutionEnsemble) -> ControlFLQ:
    """``xi = -M^{-1} H^T y(t0)`` and the feedback ``u`` from ``(y, z)`` at each step."""
    backend, grid = theta.backend, theta.grid
    y0 = backend.mean(theta.y[0])
    xi = -np.linalg.solve(prob.get("M"), prob.get("H").T @ y0)
    N, P = grid.N, theta.n_paths
    u = np.empty((N, P, prob.m))
    for k in range(N):
        s = grid.time(k)
        B, Bt = prob.get("B", s), prob.get("B", s) + prob.get("Bbar", s)
        Dm = _stack(prob.get("D", s))
        Dt = Dm + _stack(prob.get("Dbar", s))
        R, Rt = prob.get("R", s), prob.get("R", s) + prob.get("Rbar", s)
        y1, y2 = _centered(backend, theta.y[k])
        zf = flatten_z(theta.z[k])
        z1, z2 = _centered(backend, zf)
        u[k] = -np.linalg.solve(R, (_apply(B.T, y1) + _apply(Dm.T, z1)).T).T \
            - np.linalg.solve(Rt, Bt.T @ y2 + Dt.T @ z2)
    return ControlFLQ(xi, u)


def extract_control_blq(prob: BackwardLQProblem, theta: SolutionEnsemble) -> ControlBLQ:
    """``eta = G^{-1} P^T (x - Ex) + Gt^{-1} Pt^T Ex`` at ``T`` and ``u`` from ``x``."""
    backend, grid = theta.backend, theta.grid
    G, Gt = prob.get("G"), prob.get("G") + prob.get("Gbar")
    P, Pt = prob.get("P"), prob.get("P") + prob.get("Pbar")
    x1, x2 = _centered(backend, theta.x[-1])
    eta = np.linalg.solve(G, _apply(P.T, x1).T).T + np.linalg.solve(Gt, Pt.T @ x2)
    N, Pn = grid.N, theta.n_paths
    u = np.empty((N, Pn, prob.m))
    for k in range(N):
        s = grid.time(k)
        C, Ct = prob.get("C", s), prob.get("C", s) + prob.get("Cbar", s)
        R, Rt = prob.get("R", s), prob.get("R", s) + prob.get("Rbar", s)
        x1, x2 = _centered(backend, theta.x[k])
        u[k] = -np.linalg.solve(R, _apply(C.T, x1).T).T - np.linalg.solve(Rt, Ct.T @ x2)
    return ControlBLQ(eta, u)


# ---------------------------------------------------------------------------
# state simulation and cost


def _quad(backend, S, v):
    """``E <S v, v>`` for per-path ``v``."""
    return float(backend.mean(np.sum(_apply(S, v) * v, axis=-1)))


def _quad_det(S, v):
    v = np.asarray(v, dtype=float)
    return float(v @ S @ v)


def simulate_flq(prob: ForwardLQProblem, control: ControlFLQ, backend) -> np.ndarray:
    """State ``x`` ``(N + 1, P, n)`` under ``control`` (forward Euler)."""
    grid = backend.grid
    _check_control_shape(control.u, backend, prob.m)
    u = control.u
    ubar = [backend.mean(u[k]) for k in range(grid.N)]
    d = prob.d

    def b(k, x, xb):
        s = grid.time(k)
        return (_apply(prob.get("A", s), x) + prob.get("Abar", s) @ xb
                + _apply(prob.get("B", s), u[k]) + prob.get("Bbar", s) @ ubar[k]
                + prob.get("alpha", s))

    def sigma(k, x, xb):
        s = grid.time(k)
        C, Cb = prob.get("C", s), prob.get("Cbar", s)
        D, Db = prob.get("D", s), prob.get("Dbar", s)
        beta = prob.get("beta", s)
        cols = [_apply(C[i], x) + Cb[i] @ xb + _apply(D[i], u[k]) + Db[i] @ ubar[k] + beta[i]
                for i in range(d)]
        return np.stack(cols, axis=-1)

    x0 = prob.get("H") @ control.xi + prob.get("x_t")
    return solve_mf_sde(b, sigma, x0, backend)


def cost_flq(prob: ForwardLQProblem, control: ControlFLQ, backend, grid=None) -> float:
    """Discrete cost with the left-endpoint rule for the running terms."""
    grid = backend.grid if grid is None else grid
    x = simulate_flq(prob, control, backend)
    h = grid.h
    xN = x[-1]
    xNb = backend.mean(xN)
    J = _quad_det(prob.get("M"), control.xi) + _quad(backend, prob.get("G"), xN) \
        + _quad_det(prob.get("Gbar"), xNb)
    run = 0.0
    for k in range(grid.N):
        s = grid.time(k)
        xk, uk = x[k], control.u[k]
        run += _quad(backend, prob.get("Q", s), xk) + _quad_det(prob.get("Qbar", s),
                                                                 backend.mean(xk))
        run += _quad(backend, prob.get("R", s), uk) + _quad_det(prob.get("Rbar", s),
                                                                 backend.mean(uk))
    return 0.5 * (J + h * run)


def simulate_blq(prob: BackwardLQProblem, control: ControlBLQ, backend):
    """State ``(y, z)`` under ``control`` via the backward scheme."""
    grid = backend.grid
    _check_control_shape(control.u, backend, prob.m)
    eta = np.broadcast_to(control.eta, (backend.n_paths, prob.n))
    u = control.u
    ubar = [backend.mean(u[k]) for k in range(grid.N)]
    n, d = prob.n, prob.d

    def g(k, y, yb, z, zb):
        s = grid.time(k)
        B, Bb = prob.get("B", s), prob.get("Bbar", s)
        out = _apply(prob.get("A", s), y) + prob.get("Abar", s) @ yb
        for i in range(d):
            out = out + _apply(B[i], z[:, :, i]) + Bb[i] @ zb[:, i]
        return out + _apply(prob.get("C", s), u[k]) + prob.get("Cbar", s) @ ubar[k] \
            + prob.get("alpha", s)

    yT = _apply(prob.get("P"), eta) + prob.get("Pbar") @ backend.mean(eta) \
        + prob.terminal_data(backend)
    return solve_mf_bsde(g, yT, backend)


def cost_blq(prob: BackwardLQProblem, control: ControlBLQ, backend, grid=None) -> float:
    grid = backend.grid if grid is None else grid
    y, z = simulate_blq(prob, control, backend)
    eta = np.broadcast_to(control.eta, (backend.n_paths, prob.n))
    h = grid.h
    J = _quad(backend, prob.get("M"), y[0]) + _quad(backend, prob.get("G"), eta) \
        + _quad_det(prob.get("Gbar"), backend.mean(eta))
    run = 0.0
    for k in range(grid.N):
        s = grid.time(k)
        yk, uk = y[k], control.u[k]
        L, Lb = prob.get("L", s), prob.get("Lbar", s)
        run += _quad(backend, prob.get("Q", s), yk) + _quad_det(prob.get("Qbar", s),
                                                                 backend.mean(yk))
        for i in range(prob.d):
            zi = z[k][:, :, i]
            run += _quad(backend, L[i], zi) + _quad_det(Lb[i], backend.mean(zi))
        run += _quad(backend, prob.get("R", s), uk) + _quad_det(prob.get("Rbar", s),
                                                                 backend.mean(uk))
    return 0.5 * (J + h * run)


# ---------------------------------------------------------------------------
# stationarity


def _l2_process(backend, h, r):
    """``sqrt(E sum_k h |r_k|^2)`` for ``r`` of shape ``(N, P, k)``."""
    return float(np.sqrt(h * sum(backend.mean(np.sum(rk ** 2, axis=-1)) for rk in r)))


def stationarity_flq(prob: ForwardLQProblem, control: ControlFLQ, backend, grid=None) -> dict:
    """Residuals of the forward first-order conditions.

    Solves the adjoint MF-BSDE along the state and returns
    ``{"initial": |M xi + H^T y(t0)|, "control": L2 norm of R u + Rbar Eu + B^T y
    + Bbar^T Ey + D^T z + Dbar^T Ez}``.
    """
    grid = backend.grid if grid is None else grid
    x = simulate_flq(prob, control, backend)
    d = prob.d
    xbars = [backend.mean(x[k]) for k in range(grid.N + 1)]

    def g(k, y, yb, z, zb):
        s = grid.time(k)
        C, Cb = prob.get("C", s), prob.get("Cbar", s)
        out = _apply(prob.get("A", s).T, y) + prob.get("Abar", s).T @ yb
        for i in range(d):
            out = out + _apply(C[i].T, z[:, :, i]) + Cb[i].T @ zb[:, i]
        out = out + _apply(prob.get("Q", s), x[k]) + prob.get("Qbar", s) @ xbars[k]
        return -out

    yT = _apply(prob.get("G"), x[-1]) + prob.get("Gbar") @ xbars[-1]
    y, z = solve_mf_bsde(g, yT, backend)
    r0 = prob.get("M") @ control.xi + prob.get("H").T @ backend.mean(y[0])
    res = []
    for k in range(grid.N):
        s = grid.time(k)
        uk = control.u[k]
        D, Db = prob.get("D", s), prob.get("Dbar", s)
        r = _apply(prob.get("R", s), uk) + prob.get("Rbar", s) @ backend.mean(uk) \
            + _apply(prob.get("B", s).T, y[k]) + prob.get("Bbar", s).T @ backend.mean(y[k])
        for i in range(d):
            zi = z[k][:, :, i]
            r = r + _apply(D[i].T, zi) + Db[i].T @ backend.mean(zi)
        res.append(r)
    return {"initial": float(np.linalg.norm(r0)),
            "control": _l2_process(backend, grid.h, res)}


def stationarity_blq(prob: BackwardLQProblem, control: ControlBLQ, backend, grid=None) -> dict:
    """Residuals of the backward first-order conditions.

    Solves the adjoint MF-SDE along the state and returns
    ``{"terminal": (E|G eta + Gbar E eta - P^T x(T) - Pbar^T E x(T)|^2)^{1/2},
    "control": L2 norm of R u + Rbar Eu + C^T x + Cbar^T Ex}``.
    """
    grid = backend.grid if grid is None else grid
    y, z = simulate_blq(prob, control, backend)
    d = prob.d

    def b(k, x, xb):
        s = grid.time(k)
        return -(_apply(prob.get("A", s).T, x) + prob.get("Abar", s).T @ xb
                 + _apply(prob.get("Q", s), y[k]) + prob.get("Qbar", s) @ backend.mean(y[k]))

    def sigma(k, x, xb):
        s = grid.time(k)
        B, Bb = prob.get("B", s), prob.get("Bbar", s)
        L, Lb = prob.get("L", s), prob.get("Lbar", s)
        cols = []
        for i in range(d):
            zi = z[k][:, :, i]
            cols.append(-(_apply(B[i].T, x) + Bb[i].T @ xb + _apply(L[i], zi)
                          + Lb[i] @ backend.mean(zi)))
        return np.stack(cols, axis=-1)

    x0 = -prob.get("M") @ backend.mean(y[0])
    x = solve_mf_sde(b, sigma, x0, backend)
    eta = np.broadcast_to(control.eta, (backend.n_paths, prob.n))
    rT = _apply(prob.get("G"), eta) + prob.get("Gbar") @ backend.mean(eta) \
        - _apply(prob.get("P").T, x[-1]) - prob.get("Pbar").T @ backend.mean(x[-1])
    res = []
    for k in range(grid.N):
        s = grid.time(k)
        uk = control.u[k]
        r = _apply(prob.get("R", s), uk) + prob.get("Rbar", s) @ backend.mean(uk) \
            + _apply(prob.get("C", s).T, x[k]) + prob.get("Cbar", s).T @ backend.mean(x[k])
        res.append(r)
    return {"terminal": float(np.sqrt(backend.mean(np.sum(rT ** 2, axis=-1)))),
            "control": _l2_process(backend, grid.h, res)}


# ---------------------------------------------------------------------------
# solve pipelines


def solve_flq(prob: ForwardLQProblem, backend, config: Optional[ContinuationConfig] = None,
              delta_gap: float = 1e-6):
    """Solve the forward Hamiltonian system and extract the optimal control.

    Returns ``(ControlFLQ, SolutionEnsemble, SolveDiagnostics)``.
    """
    coeffs, weights = hamiltonian_flq(prob, backend.grid, delta_gap)
    theta, diag = solve(coeffs, weights, config, backend)
    return extract_control_flq(prob, theta), theta, diag


def solve_blq(prob: BackwardLQProblem, backend, config: Optional[ContinuationConfig] = None,
              delta_gap: float = 1e-6):
    """Solve the backward Hamiltonian system and extract the optimal control."""
    coeffs, weights = hamiltonian_blq(prob, backend.grid, delta_gap)
    theta, diag = solve(coeffs, weights, config, backend, blq_perturbation(prob, backend))
    return extract_control_blq(prob, theta), theta, diag


# ---------------------------------------------------------------------------
# direct-minimization oracles


def _cg(apply_H, rhs, ip, dim, tol):
    """Conjugate gradients for ``H v = rhs`` in the inner product ``ip``."""
    def axpy(a, x, y):
        return tuple(a * xi + yi for xi, yi in zip(x, y))

    v = tuple(np.zeros_like(r) for r in rhs)
    r = rhs
    p = r
    rr = ip(r, r)
    stop = (tol * max(1.0, np.sqrt(ip(rhs, rhs)))) ** 2
    it = 0
    limit = 10 * dim
    while rr > stop:
        if it >= limit:
            raise ConditioningError(f"conjugate gradients did not converge in {limit} "
                                    f"iterations (residual {np.sqrt(rr):.3e})")
        Hp = apply_H(p)
        pHp = ip(p, Hp)
        if not pHp > 0:
            raise ConditioningError("quadratic form is not positive definite")
        a = rr / pHp
        v = axpy(a, p, v)
        r = axpy(-a, Hp, r)
        rr_new = ip(r, r)
        p = axpy(rr_new / rr, p, r)
        rr = rr_new
        it += 1
    return v, it, float(np.sqrt(rr))


def _decision_count(backend, m, extra):
    levels = sum(backend.level_size(k) for k in range(backend.grid.N))
    return extra + m * levels


def _require_tree(backend):
    if not hasattr(backend, "level_size"):
        raise DomainError("the oracle needs the tree backend")


def _project(backend, u):
    return np.stack([backend.cond_exp(k, u[k]) for k in range(u.shape[0])])


def _flq_gradient(prob: ForwardLQProblem, xi, u, backend, homogeneous=False):
    """Riesz gradient of the discrete forward cost.

    Metric: ``<(xi, u), (xi', u')> = xi . xi' + h E sum_k u_k . u'_k``. The
    adjoint is the exact transpose of the Euler recursion.
    """
    grid = backend.grid
    N, h, d = grid.N, grid.h, prob.d
    dW = backend.dW
    mean = backend.mean
    x = np.empty((N + 1, backend.n_paths, prob.n))
    x[0] = prob.get("H") @ xi + (0.0 if homogeneous else prob.get("x_t"))
    for k in range(N):
        s = grid.time(k)
        xb, ub = mean(x[k]), mean(u[k])
        C, Cb, D, Db = (prob.get(a, s) for a in ("C", "Cbar", "D", "Dbar"))
        drift = _apply(prob.get("A", s), x[k]) + prob.get("Abar", s) @ xb \
            + _apply(prob.get("B", s), u[k]) + prob.get("Bbar", s) @ ub
        if not homogeneous:
            drift = drift + prob.get("alpha", s)
        beta = np.zeros((d, prob.n)) if homogeneous else prob.get("beta", s)
        nxt = x[k] + h * drift
        for i in range(d):
            col = _apply(C[i], x[k]) + Cb[i] @ xb + _apply(D[i], u[k]) + Db[i] @ ub + beta[i]
            nxt = nxt + col * dW[k][:, i:i + 1]
        x[k + 1] = nxt
    lam = _apply(prob.get("G"), x[N]) + prob.get("Gbar") @ mean(x[N])
    gu = np.empty_like(u)
    for k in range(N - 1, -1, -1):
        s = grid.time(k)
        C, Cb, D, Db = (prob.get(a, s) for a in ("C", "Cbar", "D", "Dbar"))
        lb = mean(lam)
        lw = [lam * dW[k][:, i:i + 1] for i in range(d)]
        lwb = [mean(v) for v in lw]
        R, Rb = prob.get("R", s), prob.get("Rbar", s)
        g = _apply(R, u[k]) + Rb @ mean(u[k]) + _apply(prob.get("B", s).T, lam) \
            + prob.get("Bbar", s).T @ lb
        for i in range(d):
            g = g + (_apply(D[i].T, lw[i]) + Db[i].T @ lwb[i]) / h
        gu[k] = backend.cond_exp(k, g)
        new = lam + h * (_apply(prob.get("A", s).T, lam) + prob.get("Abar", s).T @ lb) \
            + h * (_apply(prob.get("Q", s), x[k]) + prob.get("Qbar", s) @ mean(x[k]))
        for i in range(d):
            new = new + _apply(C[i].T, lw[i]) + Cb[i].T @ lwb[i]
        lam = new
    gxi = prob.get("M") @ xi + prob.get("H").T @ mean(lam)
    return gxi, gu


def oracle_flq(prob: ForwardLQProblem, tree, grid=None, tol: float = 1e-12):
    """Minimize the discrete forward cost over ``(xi, u at every tree node)``.

    Returns ``(ControlFLQ, J*, info)`` where ``info`` holds the CG iteration
    count, the final gradient norm and the decision dimension.
    """
    _require_tree(tree)
    grid = tree.grid if grid is None else grid
    dim = _decision_count(tree, prob.m, prob.n)
    if dim > ORACLE_MAX_DIM:
        raise BudgetExceeded(f"oracle dimension {dim} exceeds {ORACLE_MAX_DIM}")
    N, P, h = grid.N, tree.n_paths, grid.h
    zero_u = np.zeros((N, P, prob.m))
    b0 = _flq_gradient(prob, np.zeros(prob.n), zero_u, tree)

    def ip(a, b):
        return float(a[0] @ b[0]) + h * float(np.sum(a[1] * b[1])) / P

    def apply_H(v):
        return _flq_gradient(prob, v[0], v[1], tree, homogeneous=True)

    (xi, u), iters, res = _cg(apply_H, (-b0[0], -b0[1]), ip, dim, tol)
    control = ControlFLQ(xi, u)
    g = _flq_gradient(prob, xi, u, tree)
    info = {"iterations": iters, "gradient_norm": float(np.sqrt(ip(g, g))), "dim": dim}
    return control, cost_flq(prob, control, tree), info


def _blq_solve_step(I_hA, I_hAt, hAb, c, mean):
    """Solve ``y + h A y + h Abar E y = c`` exactly."""
    ybar = np.linalg.solve(I_hAt, mean(c))
    return np.linalg.solve(I_hA, (c - hAb @ ybar).T).T


def _blq_gradient(prob: BackwardLQProblem, eta, u, backend, homogeneous=False):
    """Riesz gradient of the discrete backward cost.

    Metric: ``E eta . eta' + h E sum_k u_k . u'_k``. The forward recursion is the
    implicit scheme of :func:`mffbsde.backward.solve_mf_bsde` with the linear
    implicit step solved exactly; the adjoint runs forward in time.
    """
    grid = backend.grid
    N, h, n, d = grid.N, grid.h, prob.n, prob.d
    dW = backend.dW
    mean, ce = backend.mean, backend.cond_exp
    I = np.eye(n)
    y = np.empty((N + 1, backend.n_paths, n))
    z = np.empty((N, backend.n_paths, n, d))
    y[N] = _apply(prob.get("P"), eta) + prob.get("Pbar") @ mean(eta)
    if not homogeneous:
        y[N] = y[N] + prob.terminal_data(backend)
    steps = []
    for k in range(N - 1, -1, -1):
        s = grid.time(k)
        A, Ab = prob.get("A", s), prob.get("Abar", s)
        B, Bb = prob.get("B", s), prob.get("Bbar", s)
        for i in range(d):
            z[k][:, :, i] = ce(k, y[k + 1] * dW[k][:, i:i + 1]) / h
        drive = _apply(prob.get("C", s), u[k]) + prob.get("Cbar", s) @ mean(u[k])
        for i in range(d):
            drive = drive + _apply(B[i], z[k][:, :, i]) + Bb[i] @ mean(z[k][:, :, i])
        if not homogeneous:
            drive = drive + prob.get("alpha", s)
        c = ce(k, y[k + 1]) - h * drive
        mats = (I + h * A, I + h * (A + Ab), h * Ab)
        steps.append(mats)
        y[k] = _blq_solve_step(*mats, c, mean)
    steps.reverse()
    gu = np.empty_like(u)
    s0 = grid.time(0)
    ybar_dir = _apply(prob.get("M"), y[0])
    lam = ybar_dir + h * (_apply(prob.get("Q", s0), y[0]) + prob.get("Qbar", s0) @ mean(y[0]))
    for k in range(N):
        s = grid.time(k)
        I_hA, I_hAt, hAb = steps[k]
        # adjoint of the implicit step
        cbar = np.linalg.solve(I_hA.T, lam.T).T
        cbar = cbar - np.linalg.solve(I_hAt.T, hAb.T @ np.linalg.solve(I_hA.T, mean(lam)))
        cb = mean(cbar)
        B, Bb = prob.get("B", s), prob.get("Bbar", s)
        L, Lb = prob.get("L", s), prob.get("Lbar", s)
        nxt = ce(k, cbar)
        for i in range(d):
            zi = z[k][:, :, i]
            zbar_i = h * (_apply(L[i], zi) + Lb[i] @ mean(zi)) \
                - h * (_apply(B[i].T, cbar) + Bb[i].T @ cb)
            nxt = nxt + ce(k, zbar_i) * dW[k][:, i:i + 1] / h
        g = _apply(prob.get("R", s), u[k]) + prob.get("Rbar", s) @ mean(u[k]) \
            - (_apply(prob.get("C", s).T, cbar) + prob.get("Cbar", s).T @ cb)
        gu[k] = ce(k, g)
        if k + 1 < N:
            s1 = grid.time(k + 1)
            nxt = nxt + h * (_apply(prob.get("Q", s1), y[k + 1])
                             + prob.get("Qbar", s1) @ mean(y[k + 1]))
        lam = nxt
    geta = _apply(prob.get("G"), eta) + prob.get("Gbar") @ mean(eta) \
        + _apply(prob.get("P").T, lam) + prob.get("Pbar").T @ mean(lam)
    return geta, gu


def oracle_blq(prob: BackwardLQProblem, tree, grid=None, tol: float = 1e-12):
    """Minimize the discrete backward cost over ``(eta at leaves, u at every node)``."""
    _require_tree(tree)
    grid = tree.grid if grid is None else grid
    P = tree.n_paths
    dim = _decision_count(tree, prob.m, prob.n * P)
    if dim > ORACLE_MAX_DIM:
        raise BudgetExceeded(f"oracle dimension {dim} exceeds {ORACLE_MAX_DIM}")
    N, h = grid.N, grid.h
    zero = (np.zeros((P, prob.n)), np.zeros((N, P, prob.m)))
    b0 = _blq_gradient(prob, *zero, tree)

    def ip(a, b):
        return float(np.sum(a[0] * b[0])) / P + h * float(np.sum(a[1] * b[1])) / P

    def apply_H(v):
        return _blq_gradient(prob, v[0], v[1], tree, homogeneous=True)

    (eta, u), iters, res = _cg(apply_H, (-b0[0], -b0[1]), ip, dim, tol)
    control = ControlBLQ(eta, u)
    g = _blq_gradient(prob, eta, u, tree)
    info = {"iterations": iters, "gradient_norm": float(np.sqrt(ip(g, g))), "dim": dim}
    return control, cost_blq(prob, control, tree), info


# ---------------------------------------------------------------------------
# maximization


@dataclass
class MaximizationVariant:
    """A maximization problem rewritten as the minimization of ``-J``.

    ``problem`` has the negated (positive definite) weights, so the maximizer
    of ``original`` is the minimizer of ``problem`` and ``sup J = -min J``.
    The Hamiltonian of ``original`` satisfies the primed monotonicity
    orientation with the witness of ``problem``.
    """

    original: object
    problem: object
    orientation: str = "iii_prime"
    sign: float = -1.0

    def hamiltonian(self, grid=None, delta_gap: float = 1e-6):
        """``(coefficients of the original system, witness weights)``."""
        if isinstance(self.problem, ForwardLQProblem):
            _, weights = hamiltonian_flq(self.problem, grid, delta_gap)
            coeffs, _ = hamiltonian_flq(self.original, grid, delta_gap, check=False)
        else:
            _, weights = hamiltonian_blq(self.problem, grid, delta_gap)
            coeffs, _ = hamiltonian_blq(self.original, grid, delta_gap, check=False)
        return coeffs, weights

    def value(self, min_value: float) -> float:
        return self.sign * min_value


def maximization_variant(prob, delta_gap: float = 1e-6, grid=None) -> MaximizationVariant:
    """Rewrite a problem with uniformly negative definite weights as a minimization."""
    flipped = prob.negated_weights()
    check = check_pd_flq if isinstance(prob, ForwardLQProblem) else check_pd_blq
    report = check(flipped, delta_gap, grid)
    if not report.passed:
        raise DomainError(f"weights are not negative definite: {report.failures}")
    return MaximizationVariant(prob, flipped)
