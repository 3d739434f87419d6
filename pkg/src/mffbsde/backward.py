"""Backward Euler scheme for mean-field BSDEs ``dy = g ds + z dW``.

The driver callable is step-indexed: ``g(k, y, ybar, z, zbar)`` with ``y`` of
shape ``(P, n)`` and ``z`` of shape ``(P, n, d)``. Each step computes ``z``
explicitly from the conditional covariance with the Brownian increment, then
solves the implicit relation ``y_k = E_k[y_{k+1}] - h g(y_k, E y_k, z_k, E z_k)``
by Picard iteration. The mean-field terms are refreshed inside that iteration.
"""

from __future__ import annotations

import numpy as np

from .core import BlowUpError, DomainError, StepContractionError
from .forward import _ratio_report


def implicit_lipschitz(g, backend, n: int, k: int = 0, samples: int = 4,
                       radius: float = 5.0, seed: int = 0) -> float:
    """Sampled Lipschitz bound of ``y -> g(k, y, E y, z, E z)`` in the sup norm over paths."""
    rng = np.random.default_rng(seed)
    P, d = backend.n_paths, backend.d
    worst = 0.0
    for _ in range(samples):
        y = rng.uniform(-radius, radius, (P, n))
        z = rng.uniform(-radius, radius, (P, n, d))
        dy = rng.uniform(-1.0, 1.0, (P, n))
        zbar = backend.mean(z)
        g0 = np.asarray(g(k, y, backend.mean(y), z, zbar))
        g1 = np.asarray(g(k, y + dy, backend.mean(y + dy), z, zbar))
        den = np.max(np.abs(dy))
        if den > 0:
            worst = max(worst, float(np.max(np.abs(g1 - g0)) / den))
    return worst


def solve_mf_bsde(g, y_T, backend, tol: float = 1e-12, max_picard: int = 200,
                  states=None, check_step: bool = True):
    """Backward induction for a mean-field BSDE.

    ``states`` (optional, shape ``(N + 1, P, q)``) overrides the regression state
    used by the Monte Carlo backend; the tree backend ignores it.

    Returns ``(y, z)`` with shapes ``(N + 1, P, n)`` and ``(N, P, n, d)``.
    """
    grid = backend.grid
    N, h, P, d = grid.N, grid.h, backend.n_paths, backend.d
    yT = np.asarray(y_T, dtype=float)
    if yT.ndim == 1:
        yT = np.broadcast_to(yT, (P, yT.shape[0]))
    if yT.shape[0] != P or yT.ndim != 2:
        raise DomainError(f"terminal value must be (n,) or (P, n), got {yT.shape}")
    if not np.all(np.isfinite(yT)):
        raise BlowUpError(N, "terminal value is not finite")
    n = yT.shape[1]
    if check_step:
        L = implicit_lipschitz(g, backend, n, k=N - 1)
        if h * L >= 1.0:
            raise StepContractionError(
                f"implicit step is not a contraction: h*L = {h * L:.3g} >= 1; refine the grid")
    y = np.empty((N + 1, P, n))
    z = np.empty((N, P, n, d))
    y[N] = yT
    for k in range(N - 1, -1, -1):
        st = None if states is None else states[k]
        dW = backend.increments(k)
        zk = backend.cond_exp(k, y[k + 1][:, :, None] * dW[:, None, :], st) / h
        cy = backend.cond_exp(k, y[k + 1], st)
        zbar = backend.mean(zk)
        yk = cy
        for it in range(max_picard):
            new = cy - h * np.asarray(g(k, yk, backend.mean(yk), zk, zbar), dtype=float)
            if not np.all(np.isfinite(new)):
                raise BlowUpError(k)
            delta = float(np.max(np.abs(new - yk)))
            yk = new
            if delta <= tol * (1.0 + float(np.max(np.abs(yk)))):
                break
        else:
            raise StepContractionError(
                f"inner Picard iteration did not converge at step {k} in {max_picard} sweeps")
        y[k] = yk
        z[k] = zk
    return y, z


def backward_sweep(driver, y_T, backend, states=None):
    """Backward induction for a driver given as an array ``(N, P, n)`` (no ``(y, z)`` dependence).

    Equivalent to :func:`solve_mf_bsde` with that driver, without the inner iteration.
    """
    grid = backend.grid
    N, h, P, d = grid.N, grid.h, backend.n_paths, backend.d
    yT = np.asarray(y_T, dtype=float)
    yT = np.broadcast_to(yT, (P, yT.shape[-1]))
    n = yT.shape[1]
    y = np.empty((N + 1, P, n))
    z = np.empty((N, P, n, d))
    y[N] = yT
    for k in range(N - 1, -1, -1):
        st = None if states is None else states[k]
        dW = backend.increments(k)
        yn = y[k + 1]
        # one conditional expectation for both y and y dW
        both = backend.cond_exp(k, np.concatenate(
            [yn, (yn[:, :, None] * dW[:, None, :]).reshape(P, n * d)], axis=1), st)
        z[k] = both[:, n:].reshape(P, n, d) / h
        y[k] = both[:, :n] - h * driver[k]
    if not np.all(np.isfinite(y)):
        raise BlowUpError(int(np.max(np.nonzero(~np.all(np.isfinite(y), axis=(1, 2)))[0])))
    return y, z


def bsde_estimate_report(solA, solB, gA, gB, y_TA, y_TB, backend, tol: float = 1e-14) -> dict:
    """Both sides of the stability estimate for two mean-field BSDEs.

    ``solA``/``solB`` are ``(y, z)`` pairs; driver differences are evaluated along
    solution ``B``.
    """
    yA, zA = solA
    yB, zB = solB
    h = backend.grid.h
    sup_y = np.max(np.sum((yA - yB) ** 2, axis=-1), axis=0)
    int_z = h * np.sum((zA - zB) ** 2, axis=(0, 2, 3))
    lhs = float(backend.mean(sup_y + int_z))
    P = backend.n_paths
    term = np.broadcast_to(np.asarray(y_TA, float) - np.asarray(y_TB, float), (P, yA.shape[-1]))
    drv = np.zeros(P)
    for k in range(backend.grid.N):
        yk, zk = yB[k], zB[k]
        args = (k, yk, backend.mean(yk), zk, backend.mean(zk))
        drv += h * np.linalg.norm(np.asarray(gA(*args)) - gB(*args), axis=-1)
    rhs = float(backend.mean(np.sum(term ** 2, axis=-1)) + backend.mean(drv ** 2))
    return _ratio_report(lhs, rhs, tol)
