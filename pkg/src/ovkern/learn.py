"""Function-valued regression with separable operator-valued kernels.

The estimator is ``F(x) = sum_j K(x, x_j) u_j`` where the coefficient
functions solve ``(K + lam I) u = y`` for the block kernel matrix ``K``.
For ``K = g T`` the block matrix is ``G (x) T`` and the system is solved
mode by mode from the eigendecompositions of ``G`` and ``T``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from . import _io
from .errors import (
    DataFormatError,
    DimensionError,
    ParameterError,
    PreconditionError,
    UnsupportedKernelError,
)
from .funcspace import (
    FunctionalDataset,
    Grid,
    MultiFunction,
    SampledFunction,
    as_function_tuple,
    check_input_grids,
)
from .kernels import (
    BLOCK_MATRIX_CAP,
    Integral,
    OperatorKernel,
    SeparableKernel,
    block_kernel_matrix,
    cross_gram,
    gram,
    kernel_from_dict,
    kernel_to_dict,
    operator_norm_and_trace,
)
from .spectral import (
    KroneckerEigs,
    OperatorEigs,
    discretized_operator_eigs,
    exp_kernel_eigs,
    gram_eigs,
    inverse_apply,
    kronecker_eigs,
)

__all__ = [
    "FRModel",
    "StabilityReport",
    "Selection",
    "fit",
    "fit_dense_oracle",
    "operator_eigs",
    "predict",
    "predict_values",
    "rsse",
    "cv_score",
    "select_hyperparams",
    "stability_bound",
    "empirical_stability_check",
    "save_model",
    "load_model",
    "DEFAULT_KAPPA_GRID",
    "DEFAULT_LAMBDA_GRID",
]

MODEL_FORMAT = "ovkern-model/1"
DEFAULT_KAPPA_GRID = (5, 10, 20)
DEFAULT_LAMBDA_GRID = tuple(np.logspace(-4, 1, 7).tolist())


def worker_count() -> int:
    """Thread cap from ``OVKERN_THREADS`` (unset or 0 means automatic)."""
    raw = os.environ.get("OVKERN_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError:
        raise ParameterError(f"OVKERN_THREADS must be an integer, got {raw!r}") from None
    if k < 0:
        raise ParameterError(f"OVKERN_THREADS must be >= 0, got {k}")
    return k or min(8, os.cpu_count() or 1)


def _ordered_map(fn, items):
    items = list(items)
    k = min(worker_count(), len(items))
    if k <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))


def _check_lambda(lam):
    if not (isinstance(lam, (int, float, np.floating)) and math.isfinite(lam) and lam > 0):
        raise ParameterError(f"lambda must be a positive finite number, got {lam!r}")
    return float(lam)


def _check_kappa(kappa, m):
    if not (isinstance(kappa, (int, np.integer)) and kappa >= 1):
        raise ParameterError(f"kappa must be a positive integer, got {kappa!r}")
    if kappa > m:
        raise ParameterError(f"kappa={kappa} exceeds the output grid size {m}")
    return int(kappa)


@dataclass(frozen=True, eq=False)
class FRModel:
    """A trained function-valued regressor.

    ``coeffs`` is ``n x m``: row ``j`` samples ``u_j`` on ``output_grid``.
    ``eigs`` is the Kronecker eigensystem used for the fit (``None`` for the
    dense solver or a model read from disk).
    """

    train_inputs: tuple
    coeffs: np.ndarray
    kernel: OperatorKernel
    lam: float
    kappa: int
    output_grid: Grid
    eigs: Optional[KroneckerEigs] = None
    eig_method: str = "discrete"

    @property
    def n(self) -> int:
        return len(self.train_inputs)

    @property
    def coeff_functions(self) -> tuple:
        return as_function_tuple(self.coeffs, self.output_grid)

    @cached_property
    def _Tu(self) -> np.ndarray:
        # row j: T u_j
        return self.coeffs @ self.kernel.T.matrix(self.output_grid).T


def _require_separable(kernel):
    if not isinstance(kernel, SeparableKernel):
        raise UnsupportedKernelError(
            f"the spectral solver needs a separable kernel g*T, got {type(kernel).__name__}"
        )


def _output_grid(data: FunctionalDataset, kernel: OperatorKernel) -> Grid:
    grid = data.output_grid
    kg = kernel.output_grid
    if kg is not None and not kg.same_as(grid):
        raise DimensionError(
            f"kernel operator lives on {len(kg)} points, outputs on {len(grid)}"
        )
    return grid


def operator_eigs(kernel: SeparableKernel, grid: Grid, kappa: int,
                  eig_method: str = "discrete") -> OperatorEigs:
    """``kappa`` leading eigenpairs of the kernel's operator on ``grid``.

    ``"discrete"`` decomposes the quadrature discretization (exactly the
    operator the dense solver sees); ``"analytic"`` uses the closed form of
    the ``exp(-|t-s|)`` operator.
    """
    if eig_method == "analytic":
        if not (isinstance(kernel.T, Integral) and kernel.T.is_exp):
            raise UnsupportedKernelError("analytic eigenpairs exist only for the exp integral operator")
        return exp_kernel_eigs(kappa, grid)
    if eig_method != "discrete":
        raise ParameterError(f"unknown eig_method {eig_method!r}")
    return discretized_operator_eigs(kernel.T, grid, kappa)


def _solve(data: FunctionalDataset, kernel: SeparableKernel, lam: float, kappa: int,
           oe: OperatorEigs, eig_method: str) -> FRModel:
    ge = gram_eigs(gram(kernel.g, data.inputs))
    ke = kronecker_eigs(ge, oe)
    U = inverse_apply(ke, lam, data.output_matrix())
    return FRModel(data.inputs, U, kernel, lam, kappa, data.output_grid, ke, eig_method)


def fit(data: FunctionalDataset, kernel: SeparableKernel, lam: float, kappa: int,
        eig_method: str = "discrete") -> FRModel:
    """Spectral (Kronecker) solution of ``(G (x) T + lam I) u = y``.

    Uses all ``n`` Gram modes and the ``kappa`` leading operator modes.
    """
    lam = _check_lambda(lam)
    _require_separable(kernel)
    grid = _output_grid(data, kernel)
    kappa = _check_kappa(kappa, len(grid))
    oe = operator_eigs(kernel, grid, kappa, eig_method)
    return _solve(data, kernel, lam, kappa, oe, eig_method)


def fit_dense_oracle(data: FunctionalDataset, kernel: OperatorKernel, lam: float,
                     cap: int = BLOCK_MATRIX_CAP) -> FRModel:
    """Direct solve of the assembled ``(n m) x (n m)`` system."""
    lam = _check_lambda(lam)
    grid = _output_grid(data, kernel)
    B = block_kernel_matrix(kernel, data.inputs, grid, cap=cap)
    y = data.output_matrix().ravel()
    u = np.linalg.solve(B + lam * np.eye(B.shape[0]), y)
    return FRModel(data.inputs, u.reshape(data.n, len(grid)), kernel, lam,
                   len(grid), grid, None, "dense")


def predict_values(model: FRModel, X: Sequence[MultiFunction]) -> np.ndarray:
    """Predictions for several inputs as a ``len(X) x m`` array."""
    X = list(X)
    check_input_grids(list(model.train_inputs[:1]) + X)
    if isinstance(model.kernel, SeparableKernel):
        return cross_gram(model.kernel.g, X, model.train_inputs) @ model._Tu
    grid = model.output_grid
    out = np.zeros((len(X), len(grid)))
    for r, x in enumerate(X):
        for xj, u in zip(model.train_inputs, model.coeffs):
            out[r] += model.kernel.block(x, xj, grid) @ u
    return out


def predict(model: FRModel, x: MultiFunction) -> SampledFunction:
    """``F(x) = sum_j g(x_j, x) T u_j``."""
    return SampledFunction(model.output_grid, predict_values(model, [x])[0])


def rsse(preds: Sequence[SampledFunction], truths: Sequence[SampledFunction]) -> float:
    """Integrated residual sum of squares, ``int sum_i (y_i - yhat_i)^2 dt``."""
    preds, truths = list(preds), list(truths)
    if len(preds) != len(truths):
        raise DimensionError(f"{len(preds)} predictions for {len(truths)} truths")
    total = 0.0
    for p, t in zip(preds, truths):
        d = t - p
        total += float(np.dot(d.grid.weights, d.values * d.values))
    return total


# --------------------------------------------------------------------------
# one-curve-leave-out cross-validation
# --------------------------------------------------------------------------

def _loo_errors(data: FunctionalDataset, kernel: SeparableKernel, lams, kappas,
                eig_method: str) -> np.ndarray:
    """Pointwise leave-one-curve-out squared errors, shape ``(len(lams), len(kappas))``."""
    n = data.n
    if n < 2:
        raise ParameterError(f"cross-validation needs n >= 2, got {n}")
    _require_separable(kernel)
    grid = _output_grid(data, kernel)
    lams = [_check_lambda(l) for l in lams]
    kappas = [_check_kappa(k, len(grid)) for k in kappas]
    full = operator_eigs(kernel, grid, max(kappas), eig_method)
    Y = data.output_matrix()

    def fold(i):
        sub = data.subset([j for j in range(n) if j != i])
        ge = gram_eigs(gram(kernel.g, sub.inputs))
        Ysub = sub.output_matrix()
        err = np.zeros((len(lams), len(kappas)))
        for b, kappa in enumerate(kappas):
            ke = kronecker_eigs(ge, full.truncate(kappa))
            for a, lam in enumerate(lams):
                U = inverse_apply(ke, lam, Ysub)
                model = FRModel(sub.inputs, U, kernel, lam, kappa, grid, ke, eig_method)
                r = Y[i] - predict_values(model, [data.inputs[i]])[0]
                err[a, b] = float(np.sum(r * r))
        return err

    total = np.zeros((len(lams), len(kappas)))
    for err in _ordered_map(fold, range(n)):
        total += err
    return total


def cv_score(data: FunctionalDataset, kernel: SeparableKernel, lam: float, kappa: int,
             eig_method: str = "discrete") -> float:
    """Sum over curves of squared leave-one-out errors at the sample points."""
    return float(_loo_errors(data, kernel, [lam], [kappa], eig_method)[0, 0])


@dataclass(frozen=True)
class Selection:
    lam: float
    kappa: int
    score: float
    table: tuple  # rows (lam, kappa, cv)


def select_hyperparams(data: FunctionalDataset, kernel: SeparableKernel,
                       lambda_grid: Optional[Sequence[float]] = None,
                       kappa_grid: Optional[Sequence[int]] = None,
                       eig_method: str = "discrete") -> Selection:
    """Exhaustive CV over ``lambda_grid x kappa_grid``.

    Ties go to the larger lambda, then the smaller kappa.
    """
    lams = list(DEFAULT_LAMBDA_GRID if lambda_grid is None else lambda_grid)
    kappas = list(DEFAULT_KAPPA_GRID if kappa_grid is None else kappa_grid)
    if not lams or not kappas:
        raise ParameterError("hyperparameter grids must be nonempty")
    scores = _loo_errors(data, kernel, lams, kappas, eig_method)
    table = tuple(
        (float(l), int(k), float(scores[a, b]))
        for a, l in enumerate(lams) for b, k in enumerate(kappas)
    )
    best = min(table, key=lambda r: (r[2], -r[0], r[1]))
    return Selection(best[0], best[1], best[2], table)


# --------------------------------------------------------------------------
# stability
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StabilityReport:
    """Uniform-stability constants for the least-squares learner.

    ``lam`` is the regularization of the normalized risk
    ``(1/n) sum_i ||y_i - F(x_i)||^2 + lam ||F||^2``.
    """

    n: int
    lam: float
    kappa_sq: float
    sigma_y: float
    sigma: float
    beta: float
    xi: float
    conf_delta: float
    gen_bound_gap: float

    def as_lines(self) -> list:
        return [f"{k}={getattr(self, k)!r}" for k in self.__dataclass_fields__]


def _kappa_sq_terms(kernel: SeparableKernel, X, grid: Grid) -> np.ndarray:
    diag = np.diag(cross_gram(kernel.g, X, X)) if len(X) else np.zeros(0)
    return diag * operator_norm_and_trace(kernel.T, grid).op_norm


def stability_bound(data: FunctionalDataset, kernel: SeparableKernel, lam: float,
                    conf_delta: float = 0.05) -> StabilityReport:
    """Stability constant ``beta = sigma^2 kappa^2 / (2 lam n)`` and the bound gap.

    ``kappa^2`` is ``max_i g(x_i, x_i) ||T||_op`` over the training inputs,
    ``sigma_y`` the largest output norm, ``sigma = 2 sigma_y (1 + kappa/sqrt(lam))``
    and ``xi = (sigma/2)^2``. The gap is
    ``2 beta + (4 n beta + xi) sqrt(ln(1/conf_delta) / (2n))``.
    """
    lam = _check_lambda(lam)
    _require_separable(kernel)
    if not (0.0 < conf_delta < 1.0):
        raise ParameterError(f"confidence delta must be in (0, 1), got {conf_delta!r}")
    grid = _output_grid(data, kernel)
    n = data.n
    kappa_sq = float(np.max(_kappa_sq_terms(kernel, list(data.inputs), grid)))
    sigma_y = float(max(y.norm() for y in data.outputs))
    sigma = 2.0 * sigma_y * (1.0 + math.sqrt(kappa_sq) / math.sqrt(lam))
    beta = sigma**2 * kappa_sq / (2.0 * lam * n)
    xi = (sigma / 2.0) ** 2
    gap = 2.0 * beta + (4.0 * n * beta + xi) * math.sqrt(math.log(1.0 / conf_delta) / (2.0 * n))
    return StabilityReport(n, lam, kappa_sq, sigma_y, sigma, beta, xi, conf_delta, gap)


def empirical_stability_check(data: FunctionalDataset, kernel: SeparableKernel, lam: float,
                              probes: Sequence[tuple], kappa: Optional[int] = None) -> dict:
    """Leave-one-out loss differences against the stability constant.

    ``F_Z`` minimizes the normalized risk, so both it and every ``F_Z\\i``
    are fitted with ``n * lam`` (same ``n``). Every probe ``(x, y)`` must
    satisfy ``||y|| <= sigma_y`` and ``g(x, x) ||T|| <= kappa^2``.
    """
    report = stability_bound(data, kernel, lam)
    grid = _output_grid(data, kernel)
    n = data.n
    kappa = len(grid) if kappa is None else kappa
    probes = list(probes)
    if not probes:
        raise ParameterError("need at least one probe")
    px = [x for x, _ in probes]
    py = np.stack([y.values for _, y in probes])
    for _, y in probes:
        if not y.grid.same_as(grid):
            raise DimensionError("probe outputs must be on the output grid")
    ynorm = np.sqrt((py * py) @ grid.weights)
    if np.any(ynorm > report.sigma_y * (1 + 1e-12)):
        raise PreconditionError(
            f"probe output norm {float(ynorm.max()):.6g} exceeds sigma_y={report.sigma_y:.6g}"
        )
    ksq = _kappa_sq_terms(kernel, px, grid)
    if np.any(ksq > report.kappa_sq * (1 + 1e-12)):
        raise PreconditionError(
            f"probe input has g(x,x)*||T|| = {float(ksq.max()):.6g} > kappa^2={report.kappa_sq:.6g}"
        )
    reg = n * report.lam
    full = fit(data, kernel, reg, kappa)
    loss_full = _losses(full, px, py, grid)

    def fold(i):
        sub = data.subset([j for j in range(n) if j != i])
        return np.abs(loss_full - _losses(fit(sub, kernel, reg, kappa), px, py, grid))

    diffs = np.stack(_ordered_map(fold, range(n)))
    max_diff = float(diffs.max())
    return {
        "max_loss_diff": max_diff,
        "beta": report.beta,
        "pass": max_diff <= report.beta * (1 + 1e-6),
        "loss_diffs": diffs,
        "report": report,
    }


def _losses(model: FRModel, px, py, grid: Grid) -> np.ndarray:
    r = py - predict_values(model, px)
    return (r * r) @ grid.weights


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------

def save_model(path, model: FRModel):
    """Write a self-describing ``ovkern-model/1`` document."""
    doc = {
        "format": MODEL_FORMAT,
        "kernel": kernel_to_dict(model.kernel),
        "lambda": model.lam,
        "kappa": model.kappa,
        "eig_method": model.eig_method,
        "input_grids": [g.points.tolist() for g in model.train_inputs[0].grids],
        "output_grid": model.output_grid.points.tolist(),
        "train_inputs": [[c.values.tolist() for c in x.components] for x in model.train_inputs],
        "coeffs": model.coeffs.tolist(),
    }
    _io.write_text_atomic(path, _io.dump_document(doc))


def load_model(path) -> FRModel:
    doc = _io.load_document(path, MODEL_FORMAT)
    where = str(path)
    out_grid = _io.grid_from(_io.field(doc, "output_grid", where), f"{where}: output_grid")
    in_grids = [
        _io.grid_from(g, f"{where}: input_grids[{c}]")
        for c, g in enumerate(_io.field(doc, "input_grids", where))
    ]
    if not in_grids:
        raise DataFormatError(f"{where}: input_grids is empty")
    kernel = kernel_from_dict(_io.field(doc, "kernel", where), out_grid)
    lam = _io.field(doc, "lambda", where)
    kappa = _io.field(doc, "kappa", where)
    if not _io.is_finite_number(lam) or lam <= 0:
        raise ParameterError(f"{where}: lambda must be a positive number")
    if not isinstance(kappa, int) or kappa < 1:
        raise ParameterError(f"{where}: kappa must be a positive integer")
    inputs = []
    for i, comps in enumerate(_io.field(doc, "train_inputs", where)):
        if not isinstance(comps, list) or len(comps) != len(in_grids):
            raise DimensionError(f"{where}: train_inputs[{i}] needs {len(in_grids)} components")
        fs = []
        for c, (vals, g) in enumerate(zip(comps, in_grids)):
            arr = _io.float_array(vals, f"{where}: train_inputs[{i}][{c}]")
            _io.check_length(arr, g, f"{where}: train_inputs[{i}][{c}]")
            fs.append(SampledFunction(g, arr))
        inputs.append(MultiFunction(tuple(fs)))
    coeffs = _io.float_array(_io.field(doc, "coeffs", where), f"{where}: coeffs", ndim=2)
    if coeffs.shape != (len(inputs), len(out_grid)):
        raise DimensionError(
            f"{where}: coeffs has shape {coeffs.shape}, expected {(len(inputs), len(out_grid))}"
        )
    return FRModel(tuple(inputs), coeffs, kernel, float(lam), kappa, out_grid, None,
                   str(doc.get("eig_method", "discrete")))
