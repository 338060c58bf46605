"""Operator-valued kernels for nonlinear functional regression and classification."""

from .errors import OvkernError
from .funcspace import (
    FunctionalDataset,
    Grid,
    MultiFunction,
    SampledFunction,
    canonical_grid,
    combine,
    l2_inner,
    l2_norm,
    multi_inner,
    resample,
)
from .kernels import (
    CompositionKernel,
    Discretized,
    Integral,
    Multiplication,
    ScalarKernel,
    SeparableKernel,
    apply_operator,
    block_kernel_matrix,
    gram,
    identity_operator,
    kernel_apply,
    kernel_conjugate,
    kernel_product,
    kernel_sum,
    median_heuristic,
    operator_norm_and_trace,
    positivity_check,
    scalar_eval,
)
from .spectral import (
    discretized_operator_eigs,
    exp_kernel_eigs,
    exp_kernel_roots,
    gram_eigs,
    inverse_apply,
    kronecker_eigs,
)
from .learn import (
    FRModel,
    cv_score,
    empirical_stability_check,
    fit,
    fit_dense_oracle,
    load_model,
    predict,
    predict_values,
    rsse,
    save_model,
    select_hyperparams,
    stability_bound,
)
from .classify import (
    LabeledFunctionalDataset,
    confusion_matrix,
    frlsc_fit,
    frlsc_predict,
    make_label,
    recognition_rate,
)
from .datagen import (
    SynthSpec,
    gen_classification_task,
    gen_regression_task,
    gen_smooth,
    load_dataset,
    save_dataset,
)

__version__ = "0.1.0"
