"""Seeded synthetic functional data and the ``ovkern-data/1`` file format.

Random numbers come from SplitMix64 so that a seed produces the same data
in any language:

    state <- state + 0x9E3779B97F4A7C15            (mod 2^64)
    z <- state
    z <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9       (mod 2^64)
    z <- (z ^ (z >> 27)) * 0x94D049BB133111EB       (mod 2^64)
    output z ^ (z >> 31)

A uniform draw is ``(output >> 11) * 2^-53``. A standard normal uses two
uniforms ``u1, u2`` and Box-Muller, ``sqrt(-2 ln(1 - u1)) cos(2 pi u2)``.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _io
from .classify import LabeledFunctionalDataset
from .errors import DataFormatError, ParameterError
from .funcspace import (
    FunctionalDataset,
    Grid,
    MultiFunction,
    SampledFunction,
    l2_norm,
    resample,
)
from .kernels import Integral, apply_operator, cross_gram, ScalarKernel

__all__ = [
    "SplitMix64",
    "SynthSpec",
    "RegressionTruth",
    "ClassificationTruth",
    "gen_smooth",
    "gen_regression_task",
    "gen_classification_task",
    "save_dataset",
    "load_dataset",
    "load_inputs",
    "dataset_to_text",
    "export_curve_csv",
    "read_curve_csv",
]

DATA_FORMAT = "ovkern-data/1"
_MASK = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator (see module docstring)."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, k: int) -> np.ndarray:
        return np.array([self.normal() for _ in range(k)])


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic task.

    ``input_scale`` multiplies every generated input curve. For classification,
    ``margin`` is the minimum L2 distance between class means and
    ``amplitude`` bounds the L2 norm of each within-class perturbation.
    """

    seed: int = 0
    n: int = 40
    p: int = 2
    m_in: int = 25
    m_out: int = 25
    basis_modes: int = 3
    coeff_decay: float = 1.5
    noise_sd: float = 0.0
    task: str = "regression"
    n_classes: int = 3
    margin: float = 2.0
    amplitude: float = 1.0
    input_scale: float = 1.0

    def __post_init__(self):
        if self.n < 2:
            raise ParameterError(f"n must be >= 2, got {self.n}")
        if self.p < 1:
            raise ParameterError(f"p must be >= 1, got {self.p}")
        if self.m_in < 2 or self.m_out < 2:
            raise ParameterError("grid sizes must be >= 2")
        if self.basis_modes < 1:
            raise ParameterError("basis_modes must be >= 1")
        if not self.coeff_decay > 0:
            raise ParameterError("coeff_decay must be positive")
        if self.noise_sd < 0:
            raise ParameterError("noise_sd must be nonnegative")
        if self.task not in ("regression", "classification"):
            raise ParameterError(f"unknown task {self.task!r}")
        if self.task == "classification":
            if self.n_classes < 2:
                raise ParameterError("classification needs n_classes >= 2")
            if self.margin <= 0 or self.amplitude < 0:
                raise ParameterError("margin must be positive and amplitude nonnegative")

    @property
    def input_grid(self) -> Grid:
        return Grid.uniform(self.m_in)

    @property
    def output_grid(self) -> Grid:
        return Grid.uniform(self.m_out)


def _smooth_values(rng: SplitMix64, t: np.ndarray, modes: int, decay: float) -> np.ndarray:
    k = np.arange(1, modes + 1)
    ab = rng.normals(2 * modes).reshape(modes, 2)
    scale = k.astype(float) ** (-decay)
    a = ab[:, 0] * scale
    b = ab[:, 1] * scale
    kt = np.pi * np.outer(k, t)
    return a @ np.sin(kt) + b @ np.cos(kt)


def gen_smooth(seed: int, count: int, grid: Grid, modes: int, decay: float) -> list:
    """``count`` random curves ``sum_k k^-decay (a_k sin(k pi t) + b_k cos(k pi t))``.

    ``a_k, b_k`` are standard normals drawn in the order a_1, b_1, a_2, ...
    """
    if modes < 1:
        raise ParameterError("modes must be >= 1")
    rng = SplitMix64(seed)
    return [SampledFunction(grid, _smooth_values(rng, grid.points, modes, decay)) for _ in range(count)]


def _smooth_inputs(rng, spec: SynthSpec, grid: Grid, count: int) -> list:
    out = []
    for _ in range(count):
        comps = tuple(
            SampledFunction(grid, spec.input_scale
                            * _smooth_values(rng, grid.points, spec.basis_modes, spec.coeff_decay))
            for _ in range(spec.p)
        )
        out.append(MultiFunction(comps))
    return out


@dataclass(frozen=True, eq=False)
class RegressionTruth:
    clean: np.ndarray   # noise-free outputs, n x m_out
    noise: np.ndarray   # added noise, n x m_out


def regression_link(x: MultiFunction, grid: Grid) -> SampledFunction:
    """``tanh(x_1(t)) * ||x_2||`` on ``grid`` (``||x_1||`` when ``p = 1``)."""
    first = resample(x.components[0], grid)
    scale = l2_norm(x.components[1] if x.p > 1 else x.components[0])
    return SampledFunction(grid, np.tanh(first.values) * scale)


def _smooth_noise(eps: np.ndarray) -> np.ndarray:
    padded = np.concatenate([eps[:1], eps, eps[-1:]])
    return 0.25 * padded[:-2] + 0.5 * padded[1:-1] + 0.25 * padded[2:]


def gen_regression_task(spec: SynthSpec):
    """Inputs from the smooth generator; outputs ``T_exp s(x) + noise``.

    ``s`` is :func:`regression_link`, ``T_exp`` the exp integral operator on
    the output grid, and the noise is white with sd ``noise_sd`` passed once
    through a (1/4, 1/2, 1/4) smoother. Returns ``(dataset, truth)``.
    """
    if spec.task != "regression":
        raise ParameterError("spec.task must be 'regression'")
    rng = SplitMix64(spec.seed)
    gin, gout = spec.input_grid, spec.output_grid
    inputs = _smooth_inputs(rng, spec, gin, spec.n)
    T = Integral()
    clean = np.stack([apply_operator(T, regression_link(x, gout)).values for x in inputs])
    if spec.noise_sd > 0:
        noise = np.stack([_smooth_noise(spec.noise_sd * rng.normals(len(gout))) for _ in inputs])
    else:
        noise = np.zeros_like(clean)
    outputs = tuple(SampledFunction(gout, row) for row in clean + noise)
    return FunctionalDataset(tuple(inputs), outputs), RegressionTruth(clean, noise)


@dataclass(frozen=True, eq=False)
class ClassificationTruth:
    means: tuple   # one MultiFunction per class
    margin: float
    amplitude: float


def gen_classification_task(spec: SynthSpec):
    """Class means plus bounded smooth perturbations.

    Means share a random base tuple and differ by ``s sin(c pi t)`` in the
    first component, with ``s`` set so the closest pair of means is at
    distance ``margin``. Each perturbation tuple has norm ``amplitude * u``,
    ``u`` uniform on [0, 1). Labels cycle 1, 2, ..., N. Returns
    ``(dataset, truth)``.
    """
    if spec.task != "classification":
        raise ParameterError("spec.task must be 'classification'")
    rng = SplitMix64(spec.seed)
    grid = spec.input_grid
    t = grid.points
    N = spec.n_classes
    base = _smooth_inputs(rng, spec, grid, 1)[0]
    offsets = [np.sin((c + 1) * np.pi * t) for c in range(N)]
    probe = [MultiFunction.of(SampledFunction(grid, o)) for o in offsets]
    lin = cross_gram(ScalarKernel("linear"), probe, probe)
    sq = np.diag(lin)
    d2 = sq[:, None] + sq[None, :] - 2 * lin
    dmin = math.sqrt(min(d2[i, j] for i in range(N) for j in range(i + 1, N)))
    s = spec.margin / dmin * (1.0 + 1e-9)
    means = []
    for c in range(N):
        comps = list(base.components)
        comps[0] = SampledFunction(grid, comps[0].values + s * offsets[c])
        means.append(MultiFunction(tuple(comps)))
    inputs, labels = [], []
    for i in range(spec.n):
        c = i % N
        pert = _smooth_inputs(rng, spec, grid, 1)[0]
        norm = math.sqrt(sum(l2_norm(f) ** 2 for f in pert.components))
        r = spec.amplitude * rng.uniform() / norm if norm > 0 else 0.0
        inputs.append(MultiFunction(tuple(
            SampledFunction(grid, m.values + r * q.values)
            for m, q in zip(means[c].components, pert.components)
        )))
        labels.append(c + 1)
    data = LabeledFunctionalDataset(tuple(inputs), tuple(labels), spec.output_grid)
    return data, ClassificationTruth(tuple(means), spec.margin, spec.amplitude)


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def dataset_to_text(data) -> str:
    samples = []
    if isinstance(data, LabeledFunctionalDataset):
        for x, lab in zip(data.inputs, data.labels):
            samples.append({"x": [c.values.tolist() for c in x.components], "label": int(lab)})
    elif isinstance(data, FunctionalDataset):
        for x, y in zip(data.inputs, data.outputs):
            samples.append({"x": [c.values.tolist() for c in x.components], "y": y.values.tolist()})
    else:
        raise TypeError(f"cannot serialize {type(data).__name__}")
    doc = {
        "format": DATA_FORMAT,
        "input_grids": [g.points.tolist() for g in data.inputs[0].grids],
        "output_grid": data.output_grid.points.tolist(),
        "samples": samples,
    }
    return _io.dump_document(doc)


def save_dataset(path, data):
    """Write a dataset (regression or labeled) as an ``ovkern-data/1`` document."""
    _io.write_text_atomic(path, dataset_to_text(data))


def _read_inputs(path):
    doc = _io.load_document(path, DATA_FORMAT)
    where = str(path)
    grids_raw = _io.field(doc, "input_grids", where)
    if not isinstance(grids_raw, list) or not grids_raw:
        raise DataFormatError(f"{where}: input_grids must be a nonempty list")
    in_grids = [_io.grid_from(g, f"{where}: input_grids[{c}]") for c, g in enumerate(grids_raw)]
    out_grid = _io.grid_from(_io.field(doc, "output_grid", where), f"{where}: output_grid")
    samples = _io.field(doc, "samples", where)
    if not isinstance(samples, list) or not samples:
        raise DataFormatError(f"{where}: samples must be a nonempty list")
    inputs = []
    for i, s in enumerate(samples):
        loc = f"{where}: samples[{i}]"
        if not isinstance(s, dict):
            raise DataFormatError(f"{loc}: expected an object")
        xs = _io.field(s, "x", loc)
        if not isinstance(xs, list) or len(xs) != len(in_grids):
            raise DataFormatError(f"{loc}.x: expected {len(in_grids)} component arrays")
        comps = []
        for c, (vals, g) in enumerate(zip(xs, in_grids)):
            arr = _io.float_array(vals, f"{loc}.x[{c}]")
            _io.check_length(arr, g, f"{loc}.x[{c}]")
            comps.append(SampledFunction(g, arr))
        inputs.append(MultiFunction(tuple(comps)))
    return doc, where, inputs, out_grid


def load_inputs(path) -> list:
    """Only the input tuples of an ``ovkern-data/1`` document.

    Samples may omit ``y`` and ``label`` here.
    """
    return _read_inputs(path)[2]


def load_dataset(path):
    """Read an ``ovkern-data/1`` document.

    Returns a :class:`FunctionalDataset` when samples carry ``y`` and a
    :class:`LabeledFunctionalDataset` when they carry ``label``.
    """
    doc, where, inputs, out_grid = _read_inputs(path)
    outputs, labels = [], []
    for i, s in enumerate(doc["samples"]):
        loc = f"{where}: samples[{i}]"
        if "y" in s:
            arr = _io.float_array(s["y"], f"{loc}.y")
            _io.check_length(arr, out_grid, f"{loc}.y")
            outputs.append(SampledFunction(out_grid, arr))
        elif "label" in s:
            lab = s["label"]
            if not isinstance(lab, int) or isinstance(lab, bool) or lab < 1:
                raise DataFormatError(f"{loc}.label: expected a positive integer, got {lab!r}")
            labels.append(lab)
        else:
            raise DataFormatError(f"{loc}: needs either 'y' or 'label'")
    if outputs and labels:
        raise DataFormatError(f"{where}: samples mix 'y' and 'label'")
    if labels:
        return LabeledFunctionalDataset(tuple(inputs), tuple(labels), out_grid)
    return FunctionalDataset(tuple(inputs), tuple(outputs))


def curves_csv_text(funcs: Sequence[SampledFunction], with_index: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample", "t", "value"] if with_index else ["t", "value"])
    for k, f in enumerate(funcs):
        for t, v in zip(f.grid.points, f.values):
            w.writerow([k, repr(float(t)), repr(float(v))] if with_index
                       else [repr(float(t)), repr(float(v))])
    return buf.getvalue()


def export_curve_csv(path, f: SampledFunction):
    """Write one curve as CSV with columns ``t,value``."""
    _io.write_text_atomic(path, curves_csv_text([f]))


def read_curve_csv(path, grid: Optional[Grid] = None) -> SampledFunction:
    """Read a ``t,value`` CSV; resample onto ``grid`` when given."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror}") from exc
    if not rows or [c.strip() for c in rows[0]] != ["t", "value"]:
        raise DataFormatError(f"{path}: expected header 't,value'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]])
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None
    if data.shape[0] < 2 or not np.all(np.isfinite(data)):
        raise DataFormatError(f"{path}: need at least 2 finite rows")
    f = SampledFunction(Grid(data[:, 0]), data[:, 1])
    return resample(f, grid) if grid is not None else f
