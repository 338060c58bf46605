"""Functional regularized least-squares classification (one-vs-all).

Each class ``c`` gets a regressor trained to output ``+h`` on its own curves
and ``-h`` elsewhere, where ``h`` is a label template in L2([0, 1]). A new
input is scored per class by ``<F_c(x), h>`` and assigned to the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, ParameterError
from .funcspace import (
    FunctionalDataset,
    Grid,
    MultiFunction,
    SampledFunction,
    canonical_grid,
    check_input_grids,
)
from .kernels import SeparableKernel
from .learn import FRModel, fit, predict_values

__all__ = [
    "LabeledFunctionalDataset",
    "FunctionalClassifier",
    "ClassPrediction",
    "make_label",
    "frlsc_fit",
    "frlsc_predict",
    "frlsc_predict_many",
    "confusion_matrix",
    "recognition_rate",
]


@dataclass(frozen=True, eq=False)
class LabeledFunctionalDataset:
    """Functional inputs with integer class ids ``1..N``.

    ``output_grid`` is where label functions live (default: 101 points on [0, 1]).
    """

    inputs: tuple
    labels: tuple
    output_grid: Grid = None

    def __post_init__(self):
        inputs = tuple(self.inputs)
        labels = tuple(int(c) for c in self.labels)
        if len(inputs) < 1 or len(inputs) != len(labels):
            raise DimensionError(f"{len(inputs)} inputs for {len(labels)} labels")
        check_input_grids(inputs)
        if min(labels) < 1:
            raise ParameterError(f"class ids start at 1, got {min(labels)}")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        if self.output_grid is None:
            object.__setattr__(self, "output_grid", canonical_grid())

    def __len__(self):
        return len(self.inputs)

    @property
    def n_classes(self) -> int:
        return max(self.labels)

    def subset(self, idx) -> "LabeledFunctionalDataset":
        idx = list(idx)
        return LabeledFunctionalDataset(
            tuple(self.inputs[i] for i in idx), tuple(self.labels[i] for i in idx), self.output_grid
        )


def make_label(sign: int, scale: float, grid: Optional[Grid] = None) -> SampledFunction:
    """Heaviside step at the left end of [0, 1] scaled by ``sign * scale``.

    On [0, 1] that is the constant function ``sign * scale``.
    """
    if sign not in (1, -1):
        raise ParameterError(f"sign must be +1 or -1, got {sign!r}")
    if not (np.isfinite(scale) and scale > 0):
        raise ParameterError(f"label scale must be positive, got {scale!r}")
    grid = grid or canonical_grid()
    return SampledFunction(grid, np.full(len(grid), sign * float(scale)))


@dataclass(frozen=True, eq=False)
class FunctionalClassifier:
    models: tuple
    template: SampledFunction
    classes: tuple


@dataclass(frozen=True)
class ClassPrediction:
    label: int
    scores: tuple


def frlsc_fit(data: LabeledFunctionalDataset, kernel: SeparableKernel, lam: float, kappa: int,
              template: Optional[SampledFunction] = None,
              eig_method: str = "discrete") -> FunctionalClassifier:
    """Train one ``+h`` versus ``-h`` regressor per class."""
    classes = tuple(range(1, data.n_classes + 1))
    if len(classes) < 2:
        raise ParameterError("classification needs at least 2 classes")
    missing = sorted(set(classes) - set(data.labels))
    if missing:
        raise ParameterError(f"classes {missing} have no training examples")
    h = template if template is not None else make_label(1, 1.0, data.output_grid)
    models = []
    for c in classes:
        outputs = tuple(h if lab == c else -h for lab in data.labels)
        models.append(fit(FunctionalDataset(data.inputs, outputs), kernel, lam, kappa, eig_method))
    return FunctionalClassifier(tuple(models), h, classes)


def _scores(clf: FunctionalClassifier, X) -> np.ndarray:
    h = clf.template
    hw = h.values * h.grid.weights
    return np.column_stack([predict_values(m, X) @ hw for m in clf.models])


def frlsc_predict(clf: FunctionalClassifier, x: MultiFunction) -> ClassPrediction:
    """Class with the largest ``<F_c(x), h>``; ties go to the lowest id."""
    s = _scores(clf, [x])[0]
    return ClassPrediction(clf.classes[int(np.argmax(s))], tuple(float(v) for v in s))


def frlsc_predict_many(clf: FunctionalClassifier, X: Sequence[MultiFunction]) -> np.ndarray:
    S = _scores(clf, list(X))
    return np.asarray(clf.classes)[np.argmax(S, axis=1)]


def confusion_matrix(clf: FunctionalClassifier, test: LabeledFunctionalDataset) -> np.ndarray:
    """Counts indexed by (true class - 1, predicted class - 1)."""
    if len(test) == 0:
        raise ParameterError("empty test set")
    N = len(clf.classes)
    if test.n_classes > N:
        raise ParameterError(f"test set has class {test.n_classes}, classifier knows {N}")
    pred = frlsc_predict_many(clf, test.inputs)
    cm = np.zeros((N, N), dtype=int)
    for t, p in zip(test.labels, pred):
        cm[t - 1, p - 1] += 1
    return cm


def recognition_rate(cm: np.ndarray) -> float:
    """Percentage of correctly recognized examples, ``100 * trace / total``."""
    cm = np.asarray(cm)
    return 100.0 * float(np.trace(cm)) / float(cm.sum())
