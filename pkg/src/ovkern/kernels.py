"""Scalar kernels, output operators and operator-valued kernels.

Every operator on the output space is discretized on a :class:`Grid` as an
``m x m`` matrix ``M`` acting on sample values, so ``(T f)(t_i) ~ (M f)_i``.
For the Hilbert-Schmidt integral operator ``M = K W`` with ``K_ik = k(s_k, t_i)``
and ``W = diag(weights)``. Self-adjointness is with respect to the quadrature
inner product ``<f, g> = f^T W g``; the discrete adjoint is ``W^-1 M^T W``.

Operator-valued kernels expose ``block(x1, x2, grid)``, the discretized
``K(x1, x2)``, plus the inner-product geometry in which they are Hermitian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    CombinatorError,
    ConditioningError,
    DataFormatError,
    DimensionError,
    OperatorError,
    ParameterError,
    RangeError,
    SizeError,
    UnsupportedKernelError,
)
from .funcspace import (
    Grid,
    MultiFunction,
    SampledFunction,
    canonical_grid,
    check_input_grids,
    input_matrices,
    resample,
)

__all__ = [
    "ScalarKernel",
    "OperatorSpec",
    "Multiplication",
    "Integral",
    "Discretized",
    "identity_operator",
    "exp_abs_kernel",
    "OperatorKernel",
    "SeparableKernel",
    "CompositionKernel",
    "SumKernel",
    "ProductKernel",
    "ConjugateKernel",
    "PositivityReport",
    "OperatorNormTrace",
    "scalar_eval",
    "gram",
    "cross_gram",
    "median_heuristic",
    "apply_operator",
    "adjoint_matrix",
    "kernel_apply",
    "kernel_sum",
    "kernel_product",
    "kernel_conjugate",
    "block_kernel_matrix",
    "positivity_check",
    "operator_norm_and_trace",
    "operator_to_dict",
    "operator_from_dict",
    "kernel_to_dict",
    "kernel_from_dict",
]

BLOCK_MATRIX_CAP = 4000
POSITIVITY_TOL = 1e-8
COMMUTE_RTOL = 1e-8


# --------------------------------------------------------------------------
# scalar kernels on (L2)^p
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarKernel:
    """Scalar kernel on multivariate functional inputs.

    ``linear`` is the inner product of the product space; ``gaussian`` is
    ``exp(-d^2 / (2 bandwidth^2))`` with ``d`` the L2 distance there.
    """

    kind: str = "gaussian"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian"):
            raise ParameterError(f"unknown scalar kernel {self.kind!r}")
        if self.kind == "gaussian" and not (np.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ParameterError(f"gaussian bandwidth must be positive, got {self.bandwidth!r}")

    def __call__(self, x1: MultiFunction, x2: MultiFunction) -> float:
        return scalar_eval(self, x1, x2)


def _component_blocks(X: Sequence[MultiFunction], Z: Sequence[MultiFunction]):
    Xs = input_matrices(X)
    Zs = input_matrices(Z)
    if len(Xs) != len(Zs):
        raise DimensionError(f"inputs have {len(Xs)} and {len(Zs)} components")
    ws = []
    for c, (x, z) in enumerate(zip(X[0].grids, Z[0].grids)):
        if not x.same_as(z):
            raise DimensionError(
                f"component {c} grids differ (lengths {len(x)} and {len(z)})"
            )
        ws.append(x.weights)
    return Xs, Zs, ws


def cross_gram(g: ScalarKernel, X: Sequence[MultiFunction], Z: Sequence[MultiFunction]) -> np.ndarray:
    """Matrix of ``g(X[i], Z[j])``."""
    Xs, Zs, ws = _component_blocks(X, Z)
    if g.kind == "linear":
        return sum((A * w) @ B.T for A, B, w in zip(Xs, Zs, ws))
    d2 = np.zeros((Xs[0].shape[0], Zs[0].shape[0]))
    for A, B, w in zip(Xs, Zs, ws):
        diff = A[:, None, :] - B[None, :, :]
        d2 += (diff * diff) @ w
    return np.exp(-d2 / (2.0 * g.bandwidth**2))


def scalar_eval(g: ScalarKernel, x1: MultiFunction, x2: MultiFunction) -> float:
    """Evaluate ``g(x1, x2)``."""
    return float(cross_gram(g, [x1], [x2])[0, 0])


def gram(g: ScalarKernel, X: Sequence[MultiFunction]) -> np.ndarray:
    """Symmetric Gram matrix ``G_ij = g(x_i, x_j)``."""
    X = list(X)
    G = cross_gram(g, X, X)
    return 0.5 * (G + G.T)


def median_heuristic(X: Sequence[MultiFunction]) -> float:
    """Median pairwise L2 distance between inputs (1.0 when degenerate)."""
    X = list(X)
    lin = cross_gram(ScalarKernel("linear"), X, X)
    sq = np.diag(lin)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * lin, 0.0)
    iu = np.triu_indices(len(X), k=1)
    if iu[0].size == 0:
        return 1.0
    med = float(np.median(np.sqrt(d2[iu])))
    return med if med > 0 else 1.0


# --------------------------------------------------------------------------
# operators on the output space
# --------------------------------------------------------------------------

def exp_abs_kernel(s, t):
    """``exp(-|t - s|)``, the integral kernel used by default."""
    return np.exp(-np.abs(np.asarray(t) - np.asarray(s)))


def _weighted_adjoint(M: np.ndarray, w: np.ndarray) -> np.ndarray:
    return (M.T * w) / w[:, None]


def adjoint_matrix(M: np.ndarray, grid: Grid) -> np.ndarray:
    """Adjoint of a discretized operator in the quadrature geometry."""
    return _weighted_adjoint(M, grid.weights)


class OperatorSpec:
    """Base class of operators ``T`` on the output space."""

    tag = "operator"

    def matrix(self, grid: Grid) -> np.ndarray:
        raise NotImplementedError

    @property
    def grid(self) -> Optional[Grid]:
        """Grid the operator is tied to, if any."""
        return None

    def default_grid(self) -> Grid:
        return self.grid if self.grid is not None else canonical_grid()


@dataclass(frozen=True, eq=False)
class Multiplication(OperatorSpec):
    """``(T y)(t) = h(t) y(t)`` with ``h > 0`` on the grid."""

    h: SampledFunction
    tag = "multiplication"

    def __post_init__(self):
        if not np.all(self.h.values > 0):
            raise RangeError("multiplication operator needs h(t) > 0 on the grid")

    @property
    def grid(self) -> Grid:
        return self.h.grid

    def matrix(self, grid: Grid) -> np.ndarray:
        if not grid.same_as(self.h.grid):
            raise DimensionError(
                f"multiplier has {len(self.h.grid)} points, target grid has {len(grid)}"
            )
        return np.diag(self.h.values)


def identity_operator(grid: Grid) -> Multiplication:
    """Identity on ``grid``, as the multiplication by 1."""
    return Multiplication(SampledFunction(grid, np.ones(len(grid))))


@dataclass(frozen=True, eq=False)
class Integral(OperatorSpec):
    """``(T y)(t) = int k(s, t) y(s) ds`` by trapezoid quadrature.

    ``kind="exp"`` is ``k(s,t) = exp(-|t-s|)``; pass ``kernel_fn`` (vectorized,
    symmetric) for anything else.
    """

    kernel_fn: Optional[Callable] = None
    kind: str = "exp"
    tag = "integral"

    def __post_init__(self):
        if self.kernel_fn is None:
            if self.kind != "exp":
                raise ParameterError(f"unknown integral kernel kind {self.kind!r}")
            object.__setattr__(self, "kernel_fn", exp_abs_kernel)
            return
        if self.kind == "exp" and self.kernel_fn is not exp_abs_kernel:
            object.__setattr__(self, "kind", "custom")
        rng = np.random.default_rng(0)
        s, t = rng.uniform(0.0, 1.0, size=(2, 16))
        a = np.asarray(self.kernel_fn(s, t), dtype=float)
        b = np.asarray(self.kernel_fn(t, s), dtype=float)
        if not np.allclose(a, b, rtol=0, atol=1e-12):
            raise OperatorError("integral kernel is not symmetric")

    @property
    def is_exp(self) -> bool:
        return self.kind == "exp"

    def matrix(self, grid: Grid) -> np.ndarray:
        t = grid.points
        K = np.asarray(self.kernel_fn(t[None, :], t[:, None]), dtype=float)
        return K * grid.weights[None, :]


@dataclass(frozen=True, eq=False)
class Discretized(OperatorSpec):
    """A symmetric ``m x m`` array ``A`` acting as ``f -> A W f``."""

    array: np.ndarray
    tag = "discretized"

    def __post_init__(self):
        A = np.array(self.array, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"discretized operator must be square, got {A.shape}")
        if not np.all(np.isfinite(A)):
            raise RangeError("discretized operator has non-finite entries")
        scale = max(1.0, float(np.max(np.abs(A))) if A.size else 1.0)
        if np.max(np.abs(A - A.T)) > 1e-10 * scale:
            raise OperatorError("discretized operator array is not symmetric")
        A.setflags(write=False)
        object.__setattr__(self, "array", A)

    def matrix(self, grid: Grid) -> np.ndarray:
        if self.array.shape[0] != len(grid):
            raise DimensionError(
                f"operator array is {self.array.shape[0]}x{self.array.shape[0]}, "
                f"grid has {len(grid)} points"
            )
        return self.array * grid.weights[None, :]


def apply_operator(T: OperatorSpec, f: SampledFunction) -> SampledFunction:
    """Apply ``T`` to ``f`` on ``f``'s grid."""
    return SampledFunction(f.grid, T.matrix(f.grid) @ f.values)


def _symmetric_form(M: np.ndarray, w: np.ndarray) -> np.ndarray:
    sw = np.sqrt(w)
    return sw[:, None] * M / sw[None, :]


class OperatorNormTrace(NamedTuple):
    op_norm: float
    trace_estimate: float
    trace_diverges: bool


def operator_norm_and_trace(T: OperatorSpec, grid: Optional[Grid] = None) -> OperatorNormTrace:
    """Operator norm and trace of the discretized self-adjoint operator.

    For a multiplication operator the trace grows with the grid size (the
    continuum operator is not trace class); ``trace_diverges`` flags it.
    """
    grid = grid or T.default_grid()
    S = _symmetric_form(T.matrix(grid), grid.weights)
    eig = np.linalg.eigvalsh(0.5 * (S + S.T))
    return OperatorNormTrace(
        op_norm=float(np.max(np.abs(eig))),
        trace_estimate=float(np.sum(eig)),
        trace_diverges=isinstance(T, Multiplication),
    )


# --------------------------------------------------------------------------
# operator-valued kernels
# --------------------------------------------------------------------------

class OperatorKernel:
    """Base class: a map ``(x1, x2) -> K(x1, x2)``, discretized per grid."""

    def block(self, x1: MultiFunction, x2: MultiFunction, grid: Grid) -> np.ndarray:
        raise NotImplementedError

    def apply(self, x1: MultiFunction, x2: MultiFunction, y: SampledFunction) -> SampledFunction:
        return SampledFunction(y.grid, self.block(x1, x2, y.grid) @ y.values)

    @property
    def output_grid(self) -> Optional[Grid]:
        return None

    def resolve_grid(self, grid: Optional[Grid]) -> Grid:
        if grid is not None:
            return grid
        return self.output_grid or canonical_grid()

    def metric_roots(self, grid: Grid):
        """Square root of the inner-product matrix and its inverse."""
        sw = np.sqrt(grid.weights)
        return np.diag(sw), np.diag(1.0 / sw)

    def inner(self, f: SampledFunction, g: SampledFunction) -> float:
        """Inner product of the output space this kernel is Hermitian in."""
        R, _ = self.metric_roots(f.grid)
        return float((R @ f.values) @ (R @ g.values))


@dataclass(frozen=True, eq=False)
class SeparableKernel(OperatorKernel):
    """``K(x1, x2) = g(x1, x2) T``."""

    g: ScalarKernel
    T: OperatorSpec

    @property
    def output_grid(self) -> Optional[Grid]:
        return self.T.grid

    def block(self, x1, x2, grid):
        return scalar_eval(self.g, x1, x2) * self.T.matrix(grid)


def _check_warp(w: SampledFunction, grid: Grid) -> np.ndarray:
    if not w.grid.same_as(grid):
        w = resample(w, grid)
    v = w.values
    if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
        raise RangeError("composition warp values must lie in [0, 1]")
    return np.clip(v, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class CompositionKernel(OperatorKernel):
    """``K(x1, x2) = C_psi(x1) C_psi(x2)^*`` in the RKHS of a scalar kernel ``k``.

    ``psi`` maps an input to a warp of [0, 1] (a :class:`SampledFunction`).
    Output functions are expanded as ``y = sum_l c_l k(s_l, .)`` over the grid
    nodes, which fixes the geometry: ``<f, g> = f^T Kg^-1 g``.
    Evaluation only; the spectral solver rejects this kernel.
    """

    psi: Callable
    k: Callable = exp_abs_kernel
    min_rcond: float = 1e-12

    def _kgram(self, grid: Grid) -> np.ndarray:
        t = grid.points
        Kg = np.asarray(self.k(t[:, None], t[None, :]), dtype=float)
        Kg = 0.5 * (Kg + Kg.T)
        rcond = 1.0 / np.linalg.cond(Kg)
        if not rcond >= self.min_rcond:
            raise ConditioningError(
                f"k-Gram system on {len(grid)} points is ill-conditioned "
                f"(reciprocal condition {rcond:.3e})",
                rcond=rcond,
            )
        return Kg

    def warp(self, x: MultiFunction, grid: Grid) -> np.ndarray:
        return _check_warp(self.psi(x), grid)

    def block(self, x1, x2, grid):
        Kg = self._kgram(grid)
        a = self.warp(x1, grid)
        b = self.warp(x2, grid)
        # row t, column l: k(psi(x2)(s_l), psi(x1)(t))
        Kx = np.asarray(self.k(b[None, :], a[:, None]), dtype=float)
        return np.linalg.solve(Kg, Kx.T).T

    def metric_roots(self, grid):
        lam, U = np.linalg.eigh(self._kgram(grid))
        return (U / np.sqrt(lam)) @ U.T, (U * np.sqrt(lam)) @ U.T


def _require_l2(*kernels):
    for K in kernels:
        if isinstance(K, CompositionKernel):
            raise CombinatorError(
                "combinators act in the L2 geometry; composition kernels use the "
                "RKHS geometry of their scalar kernel and cannot be combined"
            )
        if not isinstance(K, OperatorKernel):
            raise TypeError(f"expected an operator-valued kernel, got {type(K).__name__}")


def _merged_grid(*kernels):
    for K in kernels:
        if K.output_grid is not None:
            return K.output_grid
    return None


@dataclass(frozen=True, eq=False)
class SumKernel(OperatorKernel):
    left: OperatorKernel
    right: OperatorKernel

    @property
    def output_grid(self):
        return _merged_grid(self.left, self.right)

    def block(self, x1, x2, grid):
        return self.left.block(x1, x2, grid) + self.right.block(x1, x2, grid)


@dataclass(frozen=True, eq=False)
class ProductKernel(OperatorKernel):
    """``K(x1, x2) = H(x1, x2) G(x1, x2)`` for pointwise-commuting ``H, G``."""

    left: OperatorKernel
    right: OperatorKernel
    commutation_verified: bool = True

    @property
    def output_grid(self):
        return _merged_grid(self.left, self.right)

    def block(self, x1, x2, grid):
        return self.left.block(x1, x2, grid) @ self.right.block(x1, x2, grid)


@dataclass(frozen=True, eq=False)
class ConjugateKernel(OperatorKernel):
    """``K(x1, x2) = T H(x1, x2) T^*``."""

    inner_kernel: OperatorKernel
    T: OperatorSpec

    @property
    def output_grid(self):
        return self.T.grid or self.inner_kernel.output_grid

    def block(self, x1, x2, grid):
        M = self.T.matrix(grid)
        return M @ self.inner_kernel.block(x1, x2, grid) @ adjoint_matrix(M, grid)


def kernel_apply(K: OperatorKernel, x1: MultiFunction, x2: MultiFunction,
                 y: SampledFunction) -> SampledFunction:
    """Evaluate ``K(x1, x2) y``."""
    return K.apply(x1, x2, y)


def kernel_sum(H: OperatorKernel, G: OperatorKernel) -> SumKernel:
    _require_l2(H, G)
    return SumKernel(H, G)


def _commutator_ratio(A: np.ndarray, B: np.ndarray) -> float:
    AB = A @ B
    num = np.linalg.norm(AB - B @ A)
    den = np.linalg.norm(AB)
    if den == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return float(num / den)


def kernel_product(H: OperatorKernel, G: OperatorKernel,
                   inputs: Optional[Sequence[MultiFunction]] = None,
                   grid: Optional[Grid] = None, seed: int = 0,
                   rtol: float = COMMUTE_RTOL) -> ProductKernel:
    """Product kernel, after checking that ``H`` and ``G`` commute.

    Two separable kernels commute everywhere iff their operators do, which is
    checked directly. Otherwise the discretized values are compared at three
    random pairs drawn from ``inputs``.
    """
    _require_l2(H, G)
    grid = grid or _merged_grid(H, G) or canonical_grid()
    if isinstance(H, SeparableKernel) and isinstance(G, SeparableKernel):
        checks = [(H.T.matrix(grid), G.T.matrix(grid))]
    else:
        if not inputs:
            raise ParameterError(
                "commutation of general kernels is checked on sample inputs; pass inputs"
            )
        inputs = list(inputs)
        rng = np.random.default_rng(seed)
        pairs = rng.integers(0, len(inputs), size=(3, 2))
        checks = [
            (H.block(inputs[i], inputs[j], grid), G.block(inputs[i], inputs[j], grid))
            for i, j in pairs
        ]
    for A, B in checks:
        r = _commutator_ratio(A, B)
        if not r <= rtol:
            raise CombinatorError(
                f"product operands do not commute (relative commutator {r:.3e} > {rtol:g})"
            )
    return ProductKernel(H, G, commutation_verified=True)


def kernel_conjugate(H: OperatorKernel, T: OperatorSpec) -> ConjugateKernel:
    _require_l2(H)
    return ConjugateKernel(H, T)


# --------------------------------------------------------------------------
# block operator kernel matrices
# --------------------------------------------------------------------------

def block_kernel_matrix(K: OperatorKernel, X: Sequence[MultiFunction],
                        grid: Optional[Grid] = None, cap: int = BLOCK_MATRIX_CAP) -> np.ndarray:
    """Dense ``(n m) x (n m)`` discretization of ``[K(x_i, x_j)]``.

    Block ``(i, j)`` acts on sample values of the ``j``-th function. This is
    the small-scale oracle path; larger problems should use the spectral
    solver in :mod:`ovkern.learn`.
    """
    X = list(X)
    check_input_grids(X)
    grid = K.resolve_grid(grid)
    n, m = len(X), len(grid)
    if n * m > cap:
        raise SizeError(
            f"block matrix of size {n * m} exceeds cap {cap}; use the spectral solver"
        )
    if isinstance(K, SeparableKernel):
        return np.kron(gram(K.g, X), K.T.matrix(grid))
    B = np.empty((n * m, n * m))
    for i in range(n):
        for j in range(n):
            B[i * m:(i + 1) * m, j * m:(j + 1) * m] = K.block(X[i], X[j], grid)
    return B


@dataclass(frozen=True)
class PositivityReport:
    min_eig: float
    max_eig: float
    passed: bool
    tol: float = POSITIVITY_TOL

    def __bool__(self):
        return self.passed


def positivity_check(K: OperatorKernel, X: Sequence[MultiFunction],
                     grid: Optional[Grid] = None, tol: float = POSITIVITY_TOL,
                     cap: int = BLOCK_MATRIX_CAP) -> PositivityReport:
    """Eigenvalue certificate that the block kernel matrix is nonnegative.

    The spectrum is taken in the kernel's own geometry: with ``Q`` the
    inner-product matrix, ``(I x Q^1/2) B (I x Q^-1/2)`` is symmetric.
    Passes iff ``min_eig >= -tol * max(1, max_eig)``.
    """
    grid = K.resolve_grid(grid)
    B = block_kernel_matrix(K, X, grid, cap=cap)
    n = len(list(X))
    R, Rinv = K.metric_roots(grid)
    I = np.eye(n)
    S = np.kron(I, R) @ B @ np.kron(I, Rinv)
    eig = np.linalg.eigvalsh(0.5 * (S + S.T))
    lo, hi = float(eig[0]), float(eig[-1])
    return PositivityReport(lo, hi, lo >= -tol * max(1.0, hi), tol)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def operator_to_dict(T: OperatorSpec) -> dict:
    if isinstance(T, Multiplication):
        return {"op": "multiplication", "h": T.h.values.tolist()}
    if isinstance(T, Integral):
        if not T.is_exp:
            raise UnsupportedKernelError("only the exp integral kernel can be serialized")
        return {"op": "integral", "kind": "exp"}
    if isinstance(T, Discretized):
        return {"op": "discretized", "matrix": T.array.tolist()}
    raise UnsupportedKernelError(f"cannot serialize operator {type(T).__name__}")


def operator_from_dict(d: dict, grid: Grid) -> OperatorSpec:
    try:
        tag = d["op"]
        if tag == "multiplication":
            return Multiplication(SampledFunction(grid, np.asarray(d["h"], dtype=float)))
        if tag == "integral":
            kind = d.get("kind", "exp")
            if kind != "exp":
                raise DataFormatError(f"unknown integral kernel kind {kind!r}")
            return Integral()
        if tag == "discretized":
            T = Discretized(np.asarray(d["matrix"], dtype=float))
            if T.array.shape[0] != len(grid):
                raise DimensionError(
                    f"operator matrix is {T.array.shape[0]}x{T.array.shape[0]}, "
                    f"output grid has {len(grid)} points"
                )
            return T
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"malformed operator record: {exc!r}") from exc
    raise DataFormatError(f"unknown operator tag {tag!r}")


def kernel_to_dict(K: OperatorKernel) -> dict:
    if not isinstance(K, SeparableKernel):
        raise UnsupportedKernelError(f"cannot serialize kernel {type(K).__name__}")
    g = {"kind": K.g.kind}
    if K.g.kind == "gaussian":
        g["bandwidth"] = K.g.bandwidth
    return {"type": "separable", "scalar": g, "operator": operator_to_dict(K.T)}


def kernel_from_dict(d: dict, grid: Grid) -> SeparableKernel:
    try:
        if d.get("type", "separable") != "separable":
            raise DataFormatError(f"unsupported kernel type {d.get('type')!r}")
        s = d["scalar"]
        g = ScalarKernel(s["kind"], float(s.get("bandwidth", 1.0)))
        return SeparableKernel(g, operator_from_dict(d["operator"], grid))
    except (KeyError, TypeError, AttributeError) as exc:
        raise DataFormatError(f"malformed kernel record: {exc!r}") from exc
