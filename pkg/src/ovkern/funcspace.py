"""Sampled square-integrable functions on compact intervals.

A :class:`Grid` stores strictly increasing sample points together with
composite-trapezoid quadrature weights, so every L2 inner product is a
weighted dot product. Functions hold a reference to their grid; operations
across different grids raise :class:`~ovkern.errors.DimensionError` and need
an explicit :func:`resample`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, ParameterError, RangeError

__all__ = [
    "Grid",
    "SampledFunction",
    "MultiFunction",
    "FunctionalDataset",
    "trapezoid_weights",
    "canonical_grid",
    "l2_inner",
    "l2_norm",
    "multi_inner",
    "combine",
    "resample",
]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def trapezoid_weights(points) -> np.ndarray:
    """Composite trapezoid weights for (possibly nonuniform) nodes."""
    t = np.asarray(points, dtype=float)
    h = np.diff(t)
    w = np.zeros_like(t)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Sample points on ``[a, b]`` with trapezoid weights.

    Grids are immutable and hashed by identity.
    """

    points: np.ndarray
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 1 or pts.size < 2:
            raise DimensionError(f"grid needs at least 2 points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise RangeError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise RangeError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", _frozen(trapezoid_weights(pts)))

    @classmethod
    def uniform(cls, m: int = 101, a: float = 0.0, b: float = 1.0) -> "Grid":
        if m < 2:
            raise DimensionError(f"grid needs at least 2 points, got {m}")
        return cls(np.linspace(a, b, m))

    def __len__(self):
        return self.points.size

    @property
    def a(self) -> float:
        return float(self.points[0])

    @property
    def b(self) -> float:
        return float(self.points[-1])

    def same_as(self, other: "Grid") -> bool:
        """True for the same object or for grids with identical nodes."""
        return self is other or (
            len(self) == len(other) and np.array_equal(self.points, other.points)
        )


_CANONICAL = Grid.uniform(101)


def canonical_grid() -> Grid:
    """The default output grid: 101 uniform points on [0, 1]."""
    return _CANONICAL


def _check_grids(g1: Grid, g2: Grid, what: str = "functions"):
    if not g1.same_as(g2):
        raise DimensionError(
            f"{what} live on different grids (lengths {len(g1)} and {len(g2)}); "
            "resample explicitly"
        )


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Values of a real function at the nodes of a :class:`Grid`."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.shape != (len(self.grid),):
            raise DimensionError(
                f"values have shape {vals.shape}, grid has {len(self.grid)} points"
            )
        if not np.all(np.isfinite(vals)):
            raise RangeError("function values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> "SampledFunction":
        return cls(grid, fn(grid.points))

    @classmethod
    def zeros(cls, grid: Grid) -> "SampledFunction":
        return cls(grid, np.zeros(len(grid)))

    def __len__(self):
        return len(self.grid)

    def __add__(self, other: "SampledFunction") -> "SampledFunction":
        _check_grids(self.grid, other.grid)
        return SampledFunction(self.grid, self.values + other.values)

    def __sub__(self, other: "SampledFunction") -> "SampledFunction":
        _check_grids(self.grid, other.grid)
        return SampledFunction(self.grid, self.values - other.values)

    def __neg__(self) -> "SampledFunction":
        return SampledFunction(self.grid, -self.values)

    def __mul__(self, c: float) -> "SampledFunction":
        return SampledFunction(self.grid, float(c) * self.values)

    __rmul__ = __mul__

    def norm(self) -> float:
        return l2_norm(self)


@dataclass(frozen=True, eq=False)
class MultiFunction:
    """An ordered tuple of ``p >= 1`` sampled functions (one functional datum)."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if len(comps) < 1:
            raise DimensionError("a MultiFunction needs at least one component")
        for c in comps:
            if not isinstance(c, SampledFunction):
                raise TypeError(f"components must be SampledFunction, got {type(c).__name__}")
        object.__setattr__(self, "components", comps)

    @classmethod
    def of(cls, *components: SampledFunction) -> "MultiFunction":
        return cls(tuple(components))

    @property
    def p(self) -> int:
        return len(self.components)

    @property
    def grids(self) -> tuple:
        return tuple(c.grid for c in self.components)

    def __len__(self):
        return self.p

    def __getitem__(self, i) -> SampledFunction:
        return self.components[i]

    def __sub__(self, other: "MultiFunction") -> "MultiFunction":
        _check_p(self, other)
        return MultiFunction(tuple(a - b for a, b in zip(self.components, other.components)))


def _check_p(x1: MultiFunction, x2: MultiFunction):
    if x1.p != x2.p:
        raise DimensionError(f"inputs have {x1.p} and {x2.p} components")


def l2_inner(f: SampledFunction, g: SampledFunction) -> float:
    """Quadrature inner product ``sum_k w_k f_k g_k``."""
    _check_grids(f.grid, g.grid)
    return float(np.dot(f.grid.weights, f.values * g.values))


def l2_norm(f: SampledFunction) -> float:
    return float(np.sqrt(max(l2_inner(f, f), 0.0)))


def multi_inner(x1: MultiFunction, x2: MultiFunction) -> float:
    """Inner product on the product space: sum of componentwise L2 products."""
    _check_p(x1, x2)
    return float(sum(l2_inner(a, b) for a, b in zip(x1.components, x2.components)))


def combine(coeffs: Sequence[float], funcs: Sequence[SampledFunction]) -> SampledFunction:
    """Pointwise linear combination ``sum_i coeffs[i] * funcs[i]``."""
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    funcs = list(funcs)
    if len(funcs) == 0 or coeffs.size != len(funcs):
        raise DimensionError(
            f"combine needs matching nonempty inputs, got {coeffs.size} coefficients "
            f"and {len(funcs)} functions"
        )
    grid = funcs[0].grid
    for f in funcs[1:]:
        _check_grids(grid, f.grid)
    values = coeffs @ np.stack([f.values for f in funcs])
    return SampledFunction(grid, values)


def resample(f: SampledFunction, target: Grid) -> SampledFunction:
    """Piecewise-linear interpolation of ``f`` at the nodes of ``target``."""
    if f.grid.same_as(target):
        return SampledFunction(target, f.values)
    lo, hi = f.grid.a, f.grid.b
    slack = 1e-12 * (hi - lo)
    bad = (target.points < lo - slack) | (target.points > hi + slack)
    if np.any(bad):
        t = float(target.points[np.argmax(bad)])
        raise RangeError(f"cannot extrapolate: point {t!r} outside [{lo!r}, {hi!r}]")
    return SampledFunction(target, np.interp(target.points, f.grid.points, f.values))


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    """Paired functional inputs and functional outputs on shared grids."""

    inputs: tuple
    outputs: tuple

    def __post_init__(self):
        inputs = tuple(self.inputs)
        outputs = tuple(self.outputs)
        if len(inputs) < 1 or len(inputs) != len(outputs):
            raise DimensionError(
                f"dataset needs n >= 1 matching pairs, got {len(inputs)} inputs "
                f"and {len(outputs)} outputs"
            )
        check_input_grids(inputs)
        g = outputs[0].grid
        for y in outputs[1:]:
            _check_grids(g, y.grid, "outputs")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)

    def __len__(self):
        return len(self.inputs)

    @property
    def n(self) -> int:
        return len(self.inputs)

    @property
    def input_grids(self) -> tuple:
        return self.inputs[0].grids

    @property
    def output_grid(self) -> Grid:
        return self.outputs[0].grid

    def output_matrix(self) -> np.ndarray:
        return np.stack([y.values for y in self.outputs])

    def subset(self, idx) -> "FunctionalDataset":
        idx = list(idx)
        return FunctionalDataset(
            tuple(self.inputs[i] for i in idx), tuple(self.outputs[i] for i in idx)
        )


def check_input_grids(inputs: Sequence[MultiFunction]):
    if len(inputs) == 0:
        raise DimensionError("need at least one input")
    ref = inputs[0]
    for x in inputs[1:]:
        _check_p(ref, x)
        for a, b in zip(ref.grids, x.grids):
            _check_grids(a, b, "input components")


def input_matrices(inputs: Sequence[MultiFunction]) -> list:
    """Stack inputs componentwise: one ``n x m_c`` array per component."""
    check_input_grids(inputs)
    p = inputs[0].p
    return [np.stack([x.components[c].values for x in inputs]) for c in range(p)]


def as_function_tuple(values: np.ndarray, grid: Grid) -> tuple:
    return tuple(SampledFunction(grid, row) for row in np.atleast_2d(values))


def require_positive(name: str, value: float):
    if not (np.isfinite(value) and value > 0):
        raise ParameterError(f"{name} must be positive, got {value!r}")
