# Output operators: spectra and kernel positivity
#
# The exp(-|t-s|) integral operator has closed-form eigenpairs; a
# multiplication operator does not have a finite trace, which shows up as a
# trace that grows with the grid while the norm stays put.

import numpy as np

from ovkern import (
    Grid,
    Integral,
    Multiplication,
    SampledFunction,
    ScalarKernel,
    SeparableKernel,
    discretized_operator_eigs,
    exp_kernel_eigs,
    kernel_sum,
    operator_norm_and_trace,
    positivity_check,
)
from ovkern.datagen import SynthSpec, gen_regression_task


# ## Closed form against quadrature

g = Grid.uniform(401)
exact = exp_kernel_eigs(6, g)
approx = discretized_operator_eigs(Integral(), g, 6)
for mu, a, b in zip(exact.mus, exact.deltas, approx.deltas):
    print(f"mu={mu:8.5f} delta={a:.6f} quadrature={b:.6f}")


# ## Norm and trace as the grid is refined

for m in (101, 201, 401):
    grid = Grid.uniform(m)
    f = 0.5 * (np.exp(-grid.points**2) + 1)
    r = operator_norm_and_trace(Multiplication(SampledFunction(grid, f * f)), grid)
    print(f"m={m:4d} norm={r.op_norm:.4f} trace={r.trace_estimate:8.2f}")


# ## Positivity of the block kernel matrix

data, _ = gen_regression_task(SynthSpec(seed=2, n=6))
grid = data.output_grid
gk = ScalarKernel("gaussian", 1.0)
h = SampledFunction(grid, 1 + grid.points)
kernels = {
    "integral": SeparableKernel(gk, Integral()),
    "multiplication": SeparableKernel(gk, Multiplication(h)),
}
kernels["sum"] = kernel_sum(kernels["integral"], kernels["multiplication"])
for name, K in kernels.items():
    rep = positivity_check(K, data.inputs, grid)
    print(f"{name:15s} min={rep.min_eig:.3e} max={rep.max_eig:.3e} passed={rep.passed}")
