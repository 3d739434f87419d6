"""Domain types, norms and coefficient algebra shared by every solver.

Array conventions used throughout the package (P = number of scenarios):

* forward / backward states ``x``, ``y``: ``(N + 1, P, n)``
* martingale integrands ``z``: ``(N, P, n, d)`` with ``z[..., i]`` the i-th
  Brownian component
* a stacked state ``theta = (x, y, z_1, ..., z_d)`` lives in ``R^{n(2+d)}``;
  the coefficient block ``Gamma = (g, b, sigma_1, ..., sigma_d)`` uses the same
  layout so that ``<Gamma, theta> = <g, x> + <b, y> + <sigma, z>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

SCHEMA_COEFF = "mffbsde-coeff-v1"

CASE_A = "A"
CASE_B = "B"


class MFFBSDEError(Exception):
    """Base class for all package errors."""


class NumericError(MFFBSDEError, ArithmeticError):
    pass


class BlowUpError(NumericError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite values first appeared at step {step}")


class DomainError(MFFBSDEError, ValueError):
    pass


class BudgetExceeded(MFFBSDEError):
    pass


class ConvergenceError(MFFBSDEError):
    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class StepContractionError(ConvergenceError):
    pass


class ConditioningError(ConvergenceError):
    pass


class RankError(MFFBSDEError):
    pass


class InconsistencyError(MFFBSDEError):
    pass


class ConsistencyError(MFFBSDEError):
    def __init__(self, message: str, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# grid and dimensions


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    N: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise DomainError(f"need T > t0, got t0={self.t0}, T={self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise DomainError(f"step count must be a positive integer, got {self.N}")

    @property
    def h(self) -> float:
        return (self.T - self.t0) / self.N

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.N + 1)

    def time(self, k: int) -> float:
        return self.t0 + k * self.h


@dataclass(frozen=True)
class Dimensions:
    n: int
    d: int
    m: Optional[int] = None

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise DomainError("need n >= 1 and d >= 1")
        if self.m is not None and self.m < 1:
            raise DomainError("control dimension must be >= 1 when present")

    @property
    def D(self) -> int:
        return self.n * (2 + self.d)


# ---------------------------------------------------------------------------
# expectations


def pairwise_sum(values) -> np.ndarray:
    """Sum over axis 0 in a fixed cascade order (independent of worker count).

    The summed axis is moved to the contiguous position, where numpy's reduction
    uses blocked pairwise summation.
    """
    a = np.asarray(values, dtype=float)
    if a.shape[0] == 0:
        return np.zeros(a.shape[1:])
    if a.ndim == 1:
        return np.add.reduce(a)
    flat = a.reshape(a.shape[0], -1).T.copy()
    return np.add.reduce(flat, axis=1).reshape(a.shape[1:])


def pairwise_mean(values) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    return pairwise_sum(a) / a.shape[0]


def step_means(values) -> np.ndarray:
    """Per-step scenario means of ``(N, P, ...)`` values, shape ``(N, 1, ...)``.

    Uses the same reduction as :func:`pairwise_sum` row by row.
    """
    a = np.asarray(values, dtype=float)
    N, P = a.shape[:2]
    flat = np.ascontiguousarray(np.moveaxis(a.reshape(N, P, -1), 1, -1))
    return (np.add.reduce(flat, axis=-1) / P).reshape((N, 1) + a.shape[2:])


def expectation(values, backend=None) -> np.ndarray:
    """Scenario expectation; every backend in this package has uniform weights."""
    if backend is not None:
        return backend.mean(values)
    return pairwise_mean(values)


def decompose(values, backend=None):
    """Split ``values`` into the zero-mean part and the mean: ``X = X1 + X2``."""
    v = np.asarray(values, dtype=float)
    second = expectation(v, backend)
    return v - second, second


# ---------------------------------------------------------------------------
# z / theta layout helpers


def flatten_z(z: np.ndarray) -> np.ndarray:
    """``(..., n, d) -> (..., n*d)`` ordered as (z_1, ..., z_d)."""
    z = np.asarray(z)
    return np.swapaxes(z, -1, -2).reshape(z.shape[:-2] + (z.shape[-1] * z.shape[-2],))


def unflatten_z(zf: np.ndarray, n: int, d: int) -> np.ndarray:
    zf = np.asarray(zf)
    return np.swapaxes(zf.reshape(zf.shape[:-1] + (d, n)), -1, -2)


def stack_theta(x, y, z) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.concatenate([x, y, flatten_z(z)], axis=-1)


def split_theta(theta, n: int, d: int):
    theta = np.asarray(theta)
    return theta[..., :n], theta[..., n:2 * n], unflatten_z(theta[..., 2 * n:], n, d)


# ---------------------------------------------------------------------------
# solution ensembles and perturbations


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class SolutionEnsemble:
    grid: TimeGrid
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    backend: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        N = self.grid.N
        if self.x.ndim != 3 or self.x.shape[0] != N + 1:
            raise DomainError(f"x must have shape (N+1, P, n), got {self.x.shape}")
        if self.y.shape != self.x.shape:
            raise DomainError(f"y shape {self.y.shape} does not match x {self.x.shape}")
        if self.z.ndim != 4 or self.z.shape[:3] != (N,) + self.x.shape[1:]:
            raise DomainError(f"z must have shape (N, P, n, d), got {self.z.shape}")

    @property
    def n(self) -> int:
        return self.x.shape[2]

    @property
    def d(self) -> int:
        return self.z.shape[3]

    @property
    def n_paths(self) -> int:
        return self.x.shape[1]

    def _mean(self, a):
        return np.stack([expectation(a[k], self.backend) for k in range(a.shape[0])])

    @property
    def xbar(self):
        return self._mean(self.x)

    @property
    def ybar(self):
        return self._mean(self.y)

    @property
    def zbar(self):
        return self._mean(self.z)

    def theta(self, k: int) -> np.ndarray:
        """Stacked ``(P, n(2+d))`` state at step ``k < N``."""
        return stack_theta(self.x[k], self.y[k], self.z[k])

    def __sub__(self, other: "SolutionEnsemble") -> "SolutionEnsemble":
        return SolutionEnsemble(self.grid, self.x - other.x, self.y - other.y,
                                self.z - other.z, self.backend)

    def __add__(self, other: "SolutionEnsemble") -> "SolutionEnsemble":
        return SolutionEnsemble(self.grid, self.x + other.x, self.y + other.y,
                                self.z + other.z, self.backend)

    def transformed(self, sx=1.0, sy=1.0, sz=1.0) -> "SolutionEnsemble":
        return SolutionEnsemble(self.grid, sx * self.x, sy * self.y, sz * self.z, self.backend)

    @classmethod
    def zeros(cls, grid: TimeGrid, n_paths: int, n: int, d: int, backend=None):
        N = grid.N
        return cls(grid, np.zeros((N + 1, n_paths, n)), np.zeros((N + 1, n_paths, n)),
                   np.zeros((N, n_paths, n, d)), backend)


@dataclass(frozen=True)
class PerturbationTriple:
    """``(xi, eta, rho)`` with ``rho = (phi, psi, gamma)`` laid out like Gamma.

    ``phi`` perturbs the backward driver, ``psi`` the forward drift and
    ``gamma`` the diffusion.
    """

    grid: TimeGrid
    xi: np.ndarray
    eta: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        if self.eta.ndim != 2:
            raise DomainError("eta must have shape (P, n)")
        if self.rho.shape[:2] != (self.grid.N, self.eta.shape[0]):
            raise DomainError(f"rho must have shape (N, P, n(2+d)), got {self.rho.shape}")

    @property
    def n(self) -> int:
        return self.eta.shape[1]

    @property
    def d(self) -> int:
        return self.rho.shape[2] // self.n - 2

    @property
    def phi(self):
        return self.rho[..., :self.n]

    @property
    def psi(self):
        return self.rho[..., self.n:2 * self.n]

    @property
    def gamma(self):
        return unflatten_z(self.rho[..., 2 * self.n:], self.n, self.d)

    def __sub__(self, other):
        return PerturbationTriple(self.grid, self.xi - other.xi, self.eta - other.eta,
                                  self.rho - other.rho)

    @classmethod
    def zeros(cls, grid: TimeGrid, n_paths: int, n: int, d: int):
        return cls(grid, np.zeros(n), np.zeros((n_paths, n)),
                   np.zeros((grid.N, n_paths, n * (2 + d))))

    @classmethod
    def from_parts(cls, grid, xi, eta, phi=None, psi=None, gamma=None):
        eta = np.asarray(eta, dtype=float)
        P, n = eta.shape
        N = grid.N
        phi = np.zeros((N, P, n)) if phi is None else np.broadcast_to(phi, (N, P, n))
        psi = np.zeros((N, P, n)) if psi is None else np.broadcast_to(psi, (N, P, n))
        if gamma is None:
            gf = np.zeros((N, P, 0))
            d = 1
            gf = np.zeros((N, P, n * d))
        else:
            gamma = np.asarray(gamma, dtype=float)
            d = gamma.shape[-1]
            gf = np.broadcast_to(flatten_z(gamma), (N, P, n * d))
        rho = np.concatenate([phi, psi, gf], axis=-1)
        return cls(grid, np.asarray(xi, dtype=float), eta, rho)


# ---------------------------------------------------------------------------
# norms


def m2_norm(theta: SolutionEnsemble) -> float:
    _check_finite("ensemble", theta.x, theta.y, theta.z)
    h = theta.grid.h
    sx = np.max(np.sum(theta.x ** 2, axis=-1), axis=0)
    sy = np.max(np.sum(theta.y ** 2, axis=-1), axis=0)
    iz = h * np.sum(theta.z ** 2, axis=(0, 2, 3))
    total = expectation(sx, theta.backend) + expectation(sy, theta.backend) \
        + expectation(iz, theta.backend)
    return float(np.sqrt(max(total, 0.0)))


def h_norm(p: PerturbationTriple, backend=None) -> float:
    _check_finite("perturbation", p.xi, p.eta, p.rho)
    h = p.grid.h
    n = p.n
    phi = np.sum(np.linalg.norm(p.rho[..., :n], axis=-1), axis=0) * h
    psi = np.sum(np.linalg.norm(p.rho[..., n:2 * n], axis=-1), axis=0) * h
    gam = np.sum(p.rho[..., 2 * n:] ** 2, axis=(0, 2)) * h
    total = float(np.dot(p.xi, p.xi)) + expectation(np.sum(p.eta ** 2, axis=-1), backend) \
        + expectation(phi ** 2, backend) + expectation(psi ** 2, backend) \
        + expectation(gam, backend)
    return float(np.sqrt(total))


def operator_norm(A) -> float:
    """Largest singular value (SVD up to 64x64, power iteration beyond)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0.0
    if max(A.shape) <= 64:
        return float(np.linalg.norm(A, 2))
    rng = np.random.default_rng(0)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(10_000):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(nw - lam) <= 1e-12 * nw:
            lam = nw
            break
        lam = nw
    return float(np.sqrt(lam))


# ---------------------------------------------------------------------------
# coefficient sets

MatrixLike = Union[np.ndarray, Callable[[float], np.ndarray]]


def at(mat, s: float) -> np.ndarray:
    """Evaluate a possibly time-dependent matrix."""
    return np.asarray(mat(s), dtype=float) if callable(mat) else mat


class CoefficientSet:
    """Evaluable coefficients ``(Psi, Phi, Gamma)``.

    ``psi(y)`` maps ``(..., n)``; ``phi(x, xbar)`` takes per-scenario ``x`` and
    the (broadcast) mean ``xbar``; ``gamma(s, theta, theta_bar)`` returns the
    stacked ``(g, b, sigma)`` block with the layout of ``theta``.
    """

    kind = "blackbox"

    def __init__(self, n: int, d: int):
        self.n = int(n)
        self.d = int(d)

    @property
    def D(self) -> int:
        return self.n * (2 + self.d)

    def psi(self, y):
        raise NotImplementedError

    def phi(self, x, xbar):
        raise NotImplementedError

    def gamma(self, s, theta, theta_bar):
        raise NotImplementedError

    def gamma_steps(self, times, theta, theta_bar):
        """Evaluate ``gamma`` at every step: ``theta`` is ``(N, P, D)``, ``theta_bar`` ``(N, 1, D)``."""
        return np.stack([np.broadcast_to(self.gamma(s, theta[k], theta_bar[k][0]), theta[k].shape)
                         for k, s in enumerate(times)])

    def split_gamma(self, G):
        n = self.n
        return G[..., :n], G[..., n:2 * n], unflatten_z(G[..., 2 * n:], n, self.d)


class BlackBoxCoefficients(CoefficientSet):
    def __init__(self, n, d, psi, phi, gamma, name: str = "blackbox",
                 time_invariant: bool = False):
        super().__init__(n, d)
        self._psi = psi
        self._phi = phi
        self._gamma = gamma
        self.name = name
        # a time-invariant gamma that broadcasts over leading axes can be
        # evaluated for all steps in one call
        self.time_invariant = time_invariant

    def gamma_steps(self, times, theta, theta_bar):
        if self.time_invariant:
            return np.broadcast_to(self.gamma(times[0], theta, theta_bar), theta.shape)
        return super().gamma_steps(times, theta, theta_bar)

    def psi(self, y):
        return np.asarray(self._psi(np.asarray(y, dtype=float)), dtype=float)

    def phi(self, x, xbar):
        return np.asarray(self._phi(np.asarray(x, dtype=float), np.asarray(xbar, dtype=float)),
                          dtype=float)

    def gamma(self, s, theta, theta_bar):
        return np.asarray(self._gamma(s, np.asarray(theta, dtype=float),
                                      np.asarray(theta_bar, dtype=float)), dtype=float)


class LinearCoefficients(CoefficientSet):
    """Affine coefficients.

    ``Psi(y) = psi_mat y + psi_off``,
    ``Phi(x, x') = phi_mat x + phi_bar x' + phi_off``,
    ``Gamma(s, theta, theta') = gamma_mat(s) theta + gamma_bar(s) theta' + gamma_off(s)``.

    ``phi_off`` may be per-scenario (shape ``(P, n)``); gamma matrices and offset
    may be callables of time.
    """

    kind = "linear"

    def __init__(self, n, d, psi_mat=None, psi_off=None, phi_mat=None, phi_bar=None,
                 phi_off=None, gamma_mat=None, gamma_bar=None, gamma_off=None):
        super().__init__(n, d)
        D = self.D
        self.psi_mat = _mat(psi_mat, (n, n))
        self.psi_off = _vec(psi_off, n)
        self.phi_mat = _mat(phi_mat, (n, n))
        self.phi_bar = _mat(phi_bar, (n, n))
        self.phi_off = np.zeros(n) if phi_off is None else np.asarray(phi_off, dtype=float)
        self.gamma_mat = gamma_mat if callable(gamma_mat) else _mat(gamma_mat, (D, D))
        self.gamma_bar = gamma_bar if callable(gamma_bar) else _mat(gamma_bar, (D, D))
        self.gamma_off = gamma_off if callable(gamma_off) else _vec(gamma_off, D)
        if self.phi_off.shape[-1] != n:
            raise DomainError("phi offset has wrong dimension")

    @property
    def time_dependent(self) -> bool:
        return any(callable(m) for m in (self.gamma_mat, self.gamma_bar, self.gamma_off))

    def psi(self, y):
        return np.asarray(y, dtype=float) @ self.psi_mat.T + self.psi_off

    def phi(self, x, xbar):
        return (np.asarray(x, dtype=float) @ self.phi_mat.T
                + np.asarray(xbar, dtype=float) @ self.phi_bar.T + self.phi_off)

    def gamma(self, s, theta, theta_bar):
        return (np.asarray(theta, dtype=float) @ at(self.gamma_mat, s).T
                + np.asarray(theta_bar, dtype=float) @ at(self.gamma_bar, s).T
                + at(self.gamma_off, s))

    def gamma_steps(self, times, theta, theta_bar):
        if self.time_dependent:
            return super().gamma_steps(times, theta, theta_bar)
        th = np.asarray(theta, dtype=float)
        tb = np.asarray(theta_bar, dtype=float)
        D = th.shape[-1]
        out = (th.reshape(-1, D) @ self.gamma_mat.T).reshape(th.shape)
        out += (tb.reshape(-1, D) @ self.gamma_bar.T).reshape(tb.shape) + self.gamma_off
        return out

    def blocks(self, s):
        """Return the (g, b, sigma) row blocks of the gamma matrices at time ``s``."""
        n = self.n
        Gm, Gb = at(self.gamma_mat, s), at(self.gamma_bar, s)
        return {"g": (Gm[:n], Gb[:n]), "b": (Gm[n:2 * n], Gb[n:2 * n]),
                "sigma": (Gm[2 * n:], Gb[2 * n:])}


def _mat(m, shape):
    if m is None:
        return np.zeros(shape)
    m = np.asarray(m, dtype=float)
    if m.shape != shape:
        raise DomainError(f"matrix has shape {m.shape}, expected {shape}")
    return m


def _vec(v, n):
    if v is None:
        return np.zeros(n)
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise DomainError(f"vector has shape {v.shape}, expected ({n},)")
    return v


def zero_coefficients(n: int, d: int) -> LinearCoefficients:
    return LinearCoefficients(n, d)


def _blend_mat(a, b, alpha):
    if callable(a) or callable(b):
        return lambda s: alpha * at(a, s) + (1 - alpha) * at(b, s)
    return alpha * a + (1 - alpha) * b


def blend(target: CoefficientSet, reference: CoefficientSet, alpha: float) -> CoefficientSet:
    """Pointwise convex combination ``alpha * target + (1 - alpha) * reference``."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    if (target.n, target.d) != (reference.n, reference.d):
        raise DomainError("coefficient sets have different dimensions")
    if isinstance(target, LinearCoefficients) and isinstance(reference, LinearCoefficients):
        t, r = target, reference
        return LinearCoefficients(
            t.n, t.d,
            psi_mat=_blend_mat(t.psi_mat, r.psi_mat, alpha),
            psi_off=_blend_mat(t.psi_off, r.psi_off, alpha),
            phi_mat=_blend_mat(t.phi_mat, r.phi_mat, alpha),
            phi_bar=_blend_mat(t.phi_bar, r.phi_bar, alpha),
            phi_off=_blend_mat(t.phi_off, r.phi_off, alpha),
            gamma_mat=_blend_mat(t.gamma_mat, r.gamma_mat, alpha),
            gamma_bar=_blend_mat(t.gamma_bar, r.gamma_bar, alpha),
            gamma_off=_blend_mat(t.gamma_off, r.gamma_off, alpha),
        )
    return BlackBoxCoefficients(
        target.n, target.d,
        psi=lambda y: alpha * target.psi(y) + (1 - alpha) * reference.psi(y),
        phi=lambda x, xb: alpha * target.phi(x, xb) + (1 - alpha) * reference.phi(x, xb),
        gamma=lambda s, th, tb: alpha * target.gamma(s, th, tb)
        + (1 - alpha) * reference.gamma(s, th, tb),
        name=f"blend({alpha})",
    )


# ---------------------------------------------------------------------------
# domination weights


@dataclass(frozen=True)
class DominationWeights:
    """Weights of the domination-monotonicity assumption.

    ``C`` and ``Ct`` are the row blocks ``(C_1, ..., C_d)`` concatenated into an
    ``m3 x nd`` matrix. Time-dependent entries may be given as callables.
    """

    mu: float
    nu: float
    H: np.ndarray
    P: np.ndarray
    Pt: np.ndarray
    A: MatrixLike
    At: MatrixLike
    B: MatrixLike
    Bt: MatrixLike
    C: MatrixLike
    Ct: MatrixLike
    case: str

    def __post_init__(self):
        if self.mu < 0 or self.nu < 0:
            raise DomainError("mu and nu must be nonnegative")
        if self.case == CASE_A:
            ok = self.mu > 0 and self.nu == 0
        elif self.case == CASE_B:
            ok = self.mu == 0 and self.nu > 0
        else:
            ok = False
        if not ok:
            raise DomainError(
                f"inconsistent case flag {self.case!r} for mu={self.mu}, nu={self.nu}")

    @property
    def n(self) -> int:
        return np.atleast_2d(self.H).shape[1]

    @classmethod
    def build(cls, n, d, mu=0.0, nu=0.0, H=None, P=None, Pt=None, A=None, At=None,
              B=None, Bt=None, C=None, Ct=None, case=None):
        """Fill unspecified matrices with zeros (one row) and infer the case flag."""

        def m(v, cols):
            if v is None:
                return np.zeros((1, cols))
            return v if callable(v) else np.atleast_2d(np.asarray(v, dtype=float))

        if case is None:
            case = CASE_A if mu > 0 else CASE_B
        return cls(float(mu), float(nu), m(H, n), m(P, n), m(Pt, n), m(A, n), m(At, n),
                   m(B, n), m(Bt, n), m(C, n * d), m(Ct, n * d), case)

    def with_scale(self, mu=None, nu=None) -> "DominationWeights":
        return DominationWeights(self.mu if mu is None else mu, self.nu if nu is None else nu,
                                 self.H, self.P, self.Pt, self.A, self.At, self.B, self.Bt,
                                 self.C, self.Ct, self.case)

    def at(self, s):
        return {k: at(getattr(self, k), s) for k in ("A", "At", "B", "Bt", "C", "Ct")}


# ---------------------------------------------------------------------------
# JSON


def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def coefficients_to_json(coeffs: LinearCoefficients) -> dict:
    if not isinstance(coeffs, LinearCoefficients):
        raise DomainError("only LINEAR coefficient sets serialize")
    if coeffs.time_dependent:
        raise DomainError("time-dependent coefficient matrices do not serialize")
    return {
        "schema": SCHEMA_COEFF,
        "n": coeffs.n,
        "d": coeffs.d,
        "psi": {"matrix": _arr(coeffs.psi_mat), "offset": _arr(coeffs.psi_off)},
        "phi": {"matrix": _arr(coeffs.phi_mat), "bar": _arr(coeffs.phi_bar),
                "offset": _arr(coeffs.phi_off)},
        "gamma": {"matrix": _arr(coeffs.gamma_mat), "bar": _arr(coeffs.gamma_bar),
                  "offset": _arr(coeffs.gamma_off)},
    }


def coefficients_from_json(doc) -> LinearCoefficients:
    if isinstance(doc, str):
        doc = json.loads(doc)
    if doc.get("schema") != SCHEMA_COEFF:
        raise DomainError(f"unsupported coefficient schema {doc.get('schema')!r}")
    n, d = int(doc["n"]), int(doc["d"])
    psi, phi, gam = doc.get("psi", {}), doc.get("phi", {}), doc.get("gamma", {})
    return LinearCoefficients(
        n, d,
        psi_mat=psi.get("matrix"), psi_off=psi.get("offset"),
        phi_mat=phi.get("matrix"), phi_bar=phi.get("bar"), phi_off=phi.get("offset"),
        gamma_mat=gam.get("matrix"), gamma_bar=gam.get("bar"), gamma_off=gam.get("offset"),
    )
