"""Scenario backends: an exact binomial tree and a seeded Monte Carlo ensemble.

Both backends store values per *path* (scenario) with uniform weights, so the
same solver code runs on either. On the tree every path is a leaf of a full
``2^d``-ary tree; paths that share their first ``k`` branch choices form one
contiguous block, which makes the conditional expectation given the step-``k``
information a block average.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import BudgetExceeded, DomainError, RankError, TimeGrid, pairwise_mean

DEFAULT_TREE_CAP = 2 ** 20


@dataclass(frozen=True)
class RegressionConfig:
    """Least-squares conditional expectation estimator for Monte Carlo.

    ``features`` names the basis ("poly1" or "poly2": monomials up to that degree
    in the regression state). ``ridge`` is relative to the mean diagonal of the
    normal matrix; ``ridge=0`` with a singular design raises ``RankError``.
    """

    features: str = "poly2"
    ridge: float = 1e-8

    def __post_init__(self):
        if self.features not in ("poly1", "poly2"):
            raise DomainError(f"unknown feature map {self.features!r}")
        if not np.isfinite(self.ridge) or self.ridge < 0:
            raise DomainError("ridge must be finite and nonnegative")


def poly_features(state: np.ndarray, degree: int) -> np.ndarray:
    state = np.asarray(state, dtype=float).reshape(state.shape[0], -1)
    cols = [np.ones((state.shape[0], 1)), state]
    if degree >= 2:
        q = state.shape[1]
        iu = np.triu_indices(q)
        cols.append((state[:, :, None] * state[:, None, :])[:, iu[0], iu[1]])
    return np.concatenate(cols, axis=1)


class _Backend:
    grid: TimeGrid
    d: int
    n_paths: int
    kind: str

    def mean(self, values) -> np.ndarray:
        return pairwise_mean(values)

    def increments(self, k: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def dW(self) -> np.ndarray:
        """All increments stacked as ``(N, P, d)``."""
        return np.stack([self.increments(k) for k in range(self.grid.N)])

    def brownian(self, k: int) -> np.ndarray:
        """``W(s_k) - W(t0)`` per path, shape ``(P, d)``."""
        w = np.zeros((self.n_paths, self.d))
        for j in range(k):
            w += self.increments(j)
        return w


class TreeBackend(_Backend):
    """Full binomial product tree with Rademacher increments of size ``sqrt(h)``."""

    kind = "tree"

    def __init__(self, grid: TimeGrid, d: int = 1, cap: int = DEFAULT_TREE_CAP):
        if d < 1:
            raise DomainError("Brownian dimension must be >= 1")
        leaves = 2 ** (grid.N * d)
        if leaves > cap:
            raise BudgetExceeded(
                f"tree with N={grid.N}, d={d} has {leaves} leaves, above the cap {cap}")
        self.grid = grid
        self.d = int(d)
        self.n_paths = leaves
        self.branching = 2 ** d
        self._paths = np.arange(leaves, dtype=np.int64)
        self._cache = {}
        self._dW = None

    def level_size(self, k: int) -> int:
        return 2 ** (k * self.d)

    def weights(self) -> np.ndarray:
        return np.full(self.n_paths, 1.0 / self.n_paths)

    def digit(self, k: int) -> np.ndarray:
        shift = (self.grid.N - 1 - k) * self.d
        return (self._paths >> shift) & (self.branching - 1)

    def increments(self, k: int) -> np.ndarray:
        if not 0 <= k < self.grid.N:
            raise DomainError(f"step {k} out of range")
        if k not in self._cache:
            dig = self.digit(k)
            bits = (dig[:, None] >> np.arange(self.d)[None, :]) & 1
            self._cache[k] = np.sqrt(self.grid.h) * (2.0 * bits - 1.0)
        return self._cache[k]

    @property
    def dW(self) -> np.ndarray:
        if self._dW is None:
            self._dW = np.stack([self.increments(k) for k in range(self.grid.N)])
            self._dW.setflags(write=False)
        return self._dW

    def cond_exp(self, k: int, values, state=None) -> np.ndarray:
        """``E[values | F_{s_k}]`` for path-indexed ``values``; exact block average."""
        if not 0 <= k <= self.grid.N:
            raise DomainError(f"level {k} out of range")
        v = np.asarray(values, dtype=float)
        if k == self.grid.N:
            return v.copy()
        nodes = self.level_size(k)
        block = self.n_paths // nodes
        blk = v.reshape((nodes, block) + v.shape[1:])
        avg = np.add.reduce(blk, axis=1) / block
        return np.repeat(avg, block, axis=0)

    # node-level view -----------------------------------------------------

    def to_nodes(self, k: int, values) -> np.ndarray:
        """Collapse path values that are ``F_{s_k}``-measurable to level-``k`` nodes."""
        v = np.asarray(values, dtype=float)
        block = self.n_paths // self.level_size(k)
        return v[::block]

    def from_nodes(self, k: int, node_values) -> np.ndarray:
        block = self.n_paths // self.level_size(k)
        return np.repeat(np.asarray(node_values, dtype=float), block, axis=0)

    def cond_exp_nodes(self, k: int, child_values) -> np.ndarray:
        """Average the ``2^d`` children (level ``k+1``) of each level-``k`` node."""
        if not 0 <= k < self.grid.N:
            raise DomainError(f"level {k} out of range")
        c = np.asarray(child_values, dtype=float)
        if c.shape[0] != self.level_size(k + 1):
            raise DomainError(
                f"expected {self.level_size(k + 1)} child values, got {c.shape[0]}")
        return c.reshape((self.level_size(k), self.branching) + c.shape[1:]).mean(axis=1)


class MonteCarloBackend(_Backend):
    """``M`` independent Gaussian paths from a counter-based (Philox) generator.

    The step-``k`` increments come from their own stream keyed by ``(seed, k)``,
    so any step can be regenerated independently and in any order.
    """

    kind = "mc"

    def __init__(self, seed: int, M: int, grid: TimeGrid, d: int = 1,
                 regression: Optional[RegressionConfig] = None):
        if M < 2:
            raise DomainError("Monte Carlo backend needs at least 2 paths")
        if d < 1:
            raise DomainError("Brownian dimension must be >= 1")
        seed = int(seed)
        if not 0 <= seed < 2 ** 64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self.grid = grid
        self.d = int(d)
        self.n_paths = int(M)
        self.regression = regression or RegressionConfig()
        self._dW = np.stack([self._draw(k) for k in range(grid.N)])
        self._dW.setflags(write=False)
        self._W = np.concatenate([np.zeros((1, M, d)), np.cumsum(self._dW, axis=0)])

    def _draw(self, k: int) -> np.ndarray:
        gen = np.random.Generator(np.random.Philox(key=self.seed + (k << 64)))
        return gen.standard_normal((self.n_paths, self.d)) * np.sqrt(self.grid.h)

    def increments(self, k: int) -> np.ndarray:
        return self._dW[k]

    @property
    def dW(self) -> np.ndarray:
        return self._dW

    def brownian(self, k: int) -> np.ndarray:
        return self._W[k]

    def cond_exp(self, k: int, values, state=None) -> np.ndarray:
        """Least-squares projection of ``values`` onto features of the step-``k`` state.

        ``state`` defaults to ``W(s_k) - W(t0)``. At ``k = 0`` the information is
        trivial and the plain mean is returned.
        """
        v = np.asarray(values, dtype=float)
        if k == 0:
            return np.broadcast_to(pairwise_mean(v), v.shape).copy()
        if k == self.grid.N and state is None:
            return v.copy()
        st = self._W[k] if state is None else np.asarray(state, dtype=float)
        deg = 2 if self.regression.features == "poly2" else 1
        X = poly_features(st, deg)
        # standardize non-constant columns for conditioning
        scale = np.sqrt(np.mean(X ** 2, axis=0))
        scale[scale == 0] = 1.0
        X = X / scale
        flat = v.reshape(v.shape[0], -1)
        G = X.T @ X
        lam = self.regression.ridge * np.trace(G) / G.shape[0]
        if lam == 0.0 and np.linalg.matrix_rank(G) < G.shape[0]:
            raise RankError("singular regression design; use a positive ridge parameter")
        coef = np.linalg.solve(G + lam * np.eye(G.shape[0]), X.T @ flat)
        return (X @ coef).reshape(v.shape)


def make_tree(grid: TimeGrid, d: int = 1, cap: int = DEFAULT_TREE_CAP) -> TreeBackend:
    return TreeBackend(grid, d, cap)


def sample_mc(seed: int, M: int, grid: TimeGrid, d: int = 1,
              regression: Optional[RegressionConfig] = None) -> MonteCarloBackend:
    return MonteCarloBackend(seed, M, grid, d, regression)
