"""Eigendecompositions behind the spectral solver.

* analytic eigenpairs of ``y -> int_0^1 exp(-|t-s|) y(s) ds``
* dense eigendecompositions of discretized self-adjoint operators
* Gram-matrix eigendecomposition
* the Kronecker eigensystem of ``G (x) T`` and the regularized inverse
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, KernelValidityError, OperatorError, ParameterError, RangeError, RootFindingError
from .funcspace import Grid, SampledFunction, as_function_tuple
from .kernels import OperatorSpec

__all__ = [
    "OperatorEigs",
    "GramEigs",
    "KroneckerEigs",
    "exp_root_function",
    "exp_kernel_roots",
    "exp_kernel_eigs",
    "discretized_operator_eigs",
    "gram_eigs",
    "kronecker_eigs",
    "inverse_apply",
]

BRACKET_EPS = 1e-9
BISECT_XTOL = 1e-12
NEWTON_STEPS = 3
RETAIN_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class OperatorEigs:
    """Retained eigenpairs of an output-space operator.

    ``funcs`` is ``kappa x m``; its rows are L2-orthonormal on ``grid``.
    ``mus`` holds the transcendental roots on the analytic path.
    """

    deltas: np.ndarray
    funcs: np.ndarray
    grid: Grid
    mus: Optional[np.ndarray] = None

    @property
    def kappa(self) -> int:
        return self.deltas.size

    @property
    def eigenfunctions(self) -> tuple:
        return as_function_tuple(self.funcs, self.grid)

    def truncate(self, kappa: int) -> "OperatorEigs":
        k = min(int(kappa), self.kappa)
        mus = None if self.mus is None else self.mus[:k]
        return OperatorEigs(self.deltas[:k], self.funcs[:k], self.grid, mus)


@dataclass(frozen=True, eq=False)
class GramEigs:
    """``G = V diag(alphas) V^T`` with eigenvalues descending and clipped at 0."""

    alphas: np.ndarray
    eigvecs: np.ndarray


# --------------------------------------------------------------------------
# analytic path for exp(-|t-s|) on [0, 1]
# --------------------------------------------------------------------------

def exp_root_function(mu):
    """``cot(mu) - (mu - 1/mu) / 2``; one root per interval ``((i-1)pi, i pi)``."""
    mu = np.asarray(mu, dtype=float)
    return np.cos(mu) / np.sin(mu) - 0.5 * (mu - 1.0 / mu)


def _root_derivative(mu: float) -> float:
    s = np.sin(mu)
    return -1.0 / (s * s) - 0.5 * (1.0 + 1.0 / (mu * mu))


def _bracketed_root(lo: float, hi: float) -> float:
    flo = float(exp_root_function(lo))
    fhi = float(exp_root_function(hi))
    if not (flo > 0 > fhi):
        raise RootFindingError(
            f"no sign change on [{lo!r}, {hi!r}] (f = {flo:.3e}, {fhi:.3e})"
        )
    a, b = lo, hi
    while b - a > BISECT_XTOL:
        c = 0.5 * (a + b)
        fc = float(exp_root_function(c))
        if fc == 0.0:
            return c
        if fc > 0:
            a = c
        else:
            b = c
    x = 0.5 * (a + b)
    # f is strictly decreasing, so a Newton step leaving [a, b] is rejected
    for _ in range(NEWTON_STEPS):
        fx = float(exp_root_function(x))
        if fx == 0.0:
            break
        step = fx / _root_derivative(x)
        if not np.isfinite(step):
            break
        nx = x - step
        if not (lo < nx < hi) or abs(float(exp_root_function(nx))) > abs(fx):
            break
        x = nx
    return x


def exp_kernel_roots(count: int) -> np.ndarray:
    """The first ``count`` positive roots of ``cot mu = (mu - 1/mu) / 2``."""
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    roots = np.empty(count)
    for i in range(1, count + 1):
        roots[i - 1] = _bracketed_root((i - 1) * np.pi + BRACKET_EPS, i * np.pi - BRACKET_EPS)
    return roots


def exp_kernel_eigs(count: int, grid: Grid) -> OperatorEigs:
    """Eigenpairs of the ``exp(-|t-s|)`` integral operator on [0, 1].

    ``delta_i = 2 / (1 + mu_i^2)`` and ``w_i ~ mu_i cos(mu_i t) + sin(mu_i t)``,
    normalized in the quadrature norm with ``w_i(0) > 0``.
    """
    if abs(grid.a) > 1e-12 or abs(grid.b - 1.0) > 1e-12:
        raise RangeError(f"analytic eigenpairs need a grid on [0, 1], got [{grid.a}, {grid.b}]")
    mus = exp_kernel_roots(count)
    t = grid.points
    W = mus[:, None] * np.cos(mus[:, None] * t[None, :]) + np.sin(mus[:, None] * t[None, :])
    norms = np.sqrt((W * W) @ grid.weights)
    W = W / norms[:, None]
    W *= np.sign(W[:, :1])
    return OperatorEigs(2.0 / (1.0 + mus**2), W, grid, mus)


# --------------------------------------------------------------------------
# dense paths
# --------------------------------------------------------------------------

def discretized_operator_eigs(T: OperatorSpec, grid: Grid, count: Optional[int] = None) -> OperatorEigs:
    """Eigenpairs of the discretized operator, via ``W^1/2 M W^-1/2``.

    Modes with eigenvalue ``<= 1e-12 * max`` are dropped. Each eigenfunction's
    largest-magnitude sample is made positive.
    """
    m = len(grid)
    if count is not None and count > m:
        raise ParameterError(f"count {count} exceeds grid size {m}")
    sw = np.sqrt(grid.weights)
    S = sw[:, None] * T.matrix(grid) / sw[None, :]
    scale = max(np.max(np.abs(S)), 1e-300)
    if np.max(np.abs(S - S.T)) > 1e-8 * scale:
        raise OperatorError("discretized operator is not self-adjoint in the quadrature geometry")
    lam, Q = np.linalg.eigh(0.5 * (S + S.T))
    order = np.argsort(-lam, kind="stable")
    lam, Q = lam[order], Q[:, order]
    keep = lam > RETAIN_RTOL * max(lam[0], 0.0) if lam[0] > 0 else np.zeros_like(lam, dtype=bool)
    lam, Q = lam[keep], Q[:, keep]
    if count is not None:
        lam, Q = lam[:count], Q[:, :count]
    F = (Q / sw[:, None]).T
    idx = np.argmax(np.abs(F), axis=1)
    F = F * np.sign(F[np.arange(F.shape[0]), idx])[:, None]
    return OperatorEigs(lam, F.copy(), grid)


def gram_eigs(G: np.ndarray) -> GramEigs:
    """Dense symmetric eigendecomposition of a Gram matrix."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise KernelValidityError(f"Gram matrix must be square, got {G.shape}")
    scale = max(float(np.max(np.abs(G))), 1e-300)
    if np.max(np.abs(G - G.T)) > 1e-10 * scale:
        raise KernelValidityError("Gram matrix is not symmetric")
    a, V = np.linalg.eigh(0.5 * (G + G.T))
    a, V = a[::-1].copy(), V[:, ::-1].copy()
    top = max(float(a[0]), 0.0)
    if a[-1] < -1e-8 * top:
        raise KernelValidityError(
            f"Gram matrix has eigenvalue {a[-1]:.3e} below -1e-8 * {top:.3e}; "
            "scalar kernel is not nonnegative"
        )
    return GramEigs(np.maximum(a, 0.0), V)


@dataclass(frozen=True, eq=False)
class KroneckerEigs:
    """Eigensystem of ``G (x) T``: ``theta_(i,l) = alpha_i delta_l``.

    The mode tuple ``z_(i,l)`` is ``(v_i[0] w_l, ..., v_i[n-1] w_l)``.
    """

    gram: GramEigs
    op: OperatorEigs

    @property
    def theta_matrix(self) -> np.ndarray:
        return np.outer(self.gram.alphas, self.op.deltas)

    @property
    def z_index(self) -> np.ndarray:
        """``(i, l)`` pairs by descending theta, ties lexicographic."""
        th = self.theta_matrix
        i, l = np.meshgrid(np.arange(th.shape[0]), np.arange(th.shape[1]), indexing="ij")
        order = np.lexsort((l.ravel(), i.ravel(), -th.ravel()))
        return np.column_stack([i.ravel()[order], l.ravel()[order]])

    @property
    def thetas(self) -> np.ndarray:
        idx = self.z_index
        return self.theta_matrix[idx[:, 0], idx[:, 1]]

    def __len__(self):
        return self.gram.alphas.size * self.op.kappa

    def mode(self, k: int) -> tuple:
        """The ``k``-th mode tuple, materialized on demand."""
        i, l = self.z_index[k]
        v = self.gram.eigvecs[:, i]
        return as_function_tuple(np.outer(v, self.op.funcs[l]), self.op.grid)


def kronecker_eigs(ge: GramEigs, oe: OperatorEigs) -> KroneckerEigs:
    return KroneckerEigs(ge, oe)


def _inverse_apply_array(ke: KroneckerEigs, lam: float, C: np.ndarray,
                         complement: bool = True) -> np.ndarray:
    V = ke.gram.eigvecs
    Phi = ke.op.funcs
    w = ke.op.grid.weights
    P = V.T @ (C * w) @ Phi.T
    U = V @ (P / (ke.theta_matrix + lam)) @ Phi
    if complement:
        U = U + (C - V @ P @ Phi) / lam
    return U


def inverse_apply(ke: KroneckerEigs, lam: float, c, complement: bool = True):
    """``(K + lam I)^-1 c`` from the Kronecker eigensystem.

    ``c`` is an ``n``-tuple of sampled functions (or an ``n x m`` array, in
    which case an array is returned). Outside the retained span ``K`` is
    treated as zero, which adds ``(c - P c) / lam``; pass
    ``complement=False`` for the bare truncated sum.
    """
    if not (np.isfinite(lam) and lam > 0):
        raise ParameterError(f"lambda must be positive, got {lam!r}")
    if isinstance(c, np.ndarray):
        return _inverse_apply_array(ke, lam, c, complement)
    c = list(c)
    for f in c:
        if not f.grid.same_as(ke.op.grid):
            raise DimensionError("coefficient functions are not on the operator grid")
    C = np.stack([f.values for f in c])
    return as_function_tuple(_inverse_apply_array(ke, lam, C, complement), ke.op.grid)
