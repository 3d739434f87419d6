"""Explicit Euler scheme for mean-field SDEs and the matching stability report.

Coefficient callables are step-indexed: ``b(k, x, xbar)`` returns the drift at
grid time ``s_k`` for every path (shape ``(P, n)``) and ``sigma(k, x, xbar)``
returns the diffusion with shape ``(P, n, d)``. Use :func:`timed` to adapt a
function of the time value instead of the step index.
"""

from __future__ import annotations

import numpy as np

from .core import BlowUpError, DomainError, InconsistencyError


def timed(fn, grid):
    """Wrap ``fn(s, x, xbar)`` as a step-indexed callable."""
    return lambda k, x, xbar: fn(grid.time(k), x, xbar)


def solve_mf_sde(b, sigma, x_init, backend) -> np.ndarray:
    """Simulate ``dx = b ds + sigma dW`` with the mean field lagged at the left endpoint.

    Returns ``x`` with shape ``(N + 1, P, n)``. ``x_init`` may be a vector or
    per-path values.
    """
    grid = backend.grid
    P = backend.n_paths
    x0 = np.asarray(x_init, dtype=float)
    if x0.ndim == 1:
        x0 = np.broadcast_to(x0, (P, x0.shape[0]))
    if x0.shape[0] != P or x0.ndim != 2:
        raise DomainError(f"initial value must be (n,) or (P, n), got {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise BlowUpError(0, "initial value is not finite")
    N, h = grid.N, grid.h
    x = np.empty((N + 1,) + x0.shape)
    x[0] = x0
    for k in range(N):
        xk = x[k]
        xbar = backend.mean(xk)
        drift = np.asarray(b(k, xk, xbar), dtype=float)
        diff = np.asarray(sigma(k, xk, xbar), dtype=float)
        dW = backend.increments(k)
        x[k + 1] = xk + h * drift + np.einsum("pij,pj->pi", np.broadcast_to(
            diff, xk.shape + (backend.d,)), dW)
        if not np.all(np.isfinite(x[k + 1])):
            raise BlowUpError(k + 1)
    return x


def forward_sweep(x_init, drift, diffusion, backend) -> np.ndarray:
    """Euler sweep for coefficients given as arrays that do not depend on ``x``.

    ``drift`` has shape ``(N, P, n)`` and ``diffusion`` ``(N, P, n, d)``; the
    partial sums are accumulated in step order exactly as in :func:`solve_mf_sde`.
    """
    grid = backend.grid
    P = backend.n_paths
    x0 = np.asarray(x_init, dtype=float)
    x0 = np.broadcast_to(x0, (P, x0.shape[-1]))
    inc = grid.h * np.asarray(drift, dtype=float) + np.einsum(
        "kpij,kpj->kpi", np.broadcast_to(diffusion, (grid.N, P, x0.shape[1], backend.d)),
        backend.dW)
    x = np.cumsum(np.concatenate([x0[None], inc]), axis=0)
    if not np.all(np.isfinite(x)):
        bad = int(np.argmax(~np.all(np.isfinite(x), axis=(1, 2))))
        raise BlowUpError(bad)
    return x


def _gap_sq(a, b):
    return np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=-1)


def sde_estimate_report(xA, xB, coeffsA, coeffsB, x_initA, x_initB, backend,
                        tol: float = 1e-14) -> dict:
    """Both sides of the stability estimate for two mean-field SDEs.

    ``coeffsA``/``coeffsB`` are ``(b, sigma)`` pairs of step-indexed callables.
    The coefficient differences are evaluated along solution ``B``. Returns
    ``lhs = E sup_k |xA - xB|^2`` and ``rhs_core`` (the bracket without the
    constant), plus their ratio.
    """
    h = backend.grid.h
    lhs = float(backend.mean(np.max(_gap_sq(xA, xB), axis=0)))
    bA, sA = coeffsA
    bB, sB = coeffsB
    P = backend.n_paths
    init = np.broadcast_to(np.asarray(x_initA, float) - np.asarray(x_initB, float),
                           (P, xA.shape[-1]))
    drift_int = np.zeros(P)
    diff_int = np.zeros(P)
    for k in range(backend.grid.N):
        xk = xB[k]
        xbar = backend.mean(xk)
        drift_int += h * np.linalg.norm(np.asarray(bA(k, xk, xbar)) - bB(k, xk, xbar), axis=-1)
        dsig = np.asarray(sA(k, xk, xbar)) - sB(k, xk, xbar)
        diff_int += h * np.broadcast_to(np.sum(dsig ** 2, axis=(-1, -2)), (P,))
    rhs = float(backend.mean(np.sum(init ** 2, axis=-1)) + backend.mean(drift_int ** 2)
                + backend.mean(diff_int))
    return _ratio_report(lhs, rhs, tol)


def _ratio_report(lhs, rhs, tol):
    if rhs == 0.0:
        if lhs > tol:
            raise InconsistencyError(
                f"data gap is zero but the solution gap is {lhs:.3e}")
        ratio = float("nan")
    else:
        ratio = lhs / rhs
    return {"lhs": lhs, "rhs_core": rhs, "ratio": ratio}
