import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ovkern import (
    CompositionKernel,
    FunctionalDataset,
    Grid,
    Integral,
    MultiFunction,
    Multiplication,
    SampledFunction,
    ScalarKernel,
    SeparableKernel,
    block_kernel_matrix,
    cv_score,
    empirical_stability_check,
    fit,
    fit_dense_oracle,
    gram,
    gram_eigs,
    inverse_apply,
    kronecker_eigs,
    load_model,
    median_heuristic,
    predict,
    predict_values,
    rsse,
    save_model,
    select_hyperparams,
    stability_bound,
)
from ovkern.datagen import SynthSpec, gen_regression_task
from ovkern.errors import (
    DataFormatError,
    DimensionError,
    ParameterError,
    PreconditionError,
    UnsupportedKernelError,
)
from ovkern.learn import FRModel, operator_eigs, worker_count

from conftest import oracle_task, random_dataset, random_multi, rel, smooth_values

GAUSS = ScalarKernel("gaussian", 1.0)
KEXP = SeparableKernel(GAUSS, Integral())


def weighted_norm(A, grid):
    return math.sqrt(float(np.sum(A * A * grid.weights)))


# -- fit and the dense oracle ------------------------------------------------

def test_zero_outputs_give_zero_model(rng):
    d = random_dataset(rng, 5)
    zero = FunctionalDataset(d.inputs, tuple(SampledFunction.zeros(d.output_grid) for _ in range(5)))
    m = fit(zero, KEXP, 0.1, 6)
    assert np.all(m.coeffs == 0)
    assert np.all(predict_values(m, d.inputs) == 0)


@given(st.integers(0, 10_000), st.sampled_from([1e-3, 0.1, 1.0]))
def test_coefficient_norm_bound(seed, lam):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, int(rng.integers(1, 7)))
    m = fit(d, KEXP, lam, int(rng.integers(1, 13)))
    g = d.output_grid
    assert weighted_norm(m.coeffs, g) ** 2 <= weighted_norm(d.output_matrix(), g) ** 2 / lam**2 * (1 + 1e-10)


@pytest.mark.parametrize("lam", [0.01, 0.1, 1.0])
def test_fit_matches_dense_oracle(lam):
    d = oracle_task(1)
    m, o = fit(d, KEXP, lam, 25), fit_dense_oracle(d, KEXP, lam)
    assert rel(m.coeffs, o.coeffs) <= 1e-8
    X = random_dataset(np.random.default_rng(2), 5, p=2, m_in=25).inputs
    X = [MultiFunction(tuple(SampledFunction(g, c.values) for g, c in zip(d.input_grids, x))) for x in X]
    assert rel(predict_values(m, X), predict_values(o, X)) <= 1e-8


@given(st.integers(0, 10_000))
def test_oracle_equivalence_random(seed):
    rng = np.random.default_rng(seed)
    n, m_out = int(rng.integers(1, 9)), int(rng.integers(2, 26))
    d = random_dataset(rng, n, p=int(rng.integers(1, 3)), m_in=9, m_out=m_out)
    g = d.output_grid
    h = SampledFunction(g, 0.5 + rng.uniform(size=m_out))
    for T in (Integral(), Multiplication(h)):
        K = SeparableKernel(ScalarKernel("gaussian", rng.uniform(0.5, 3)), T)
        lam = float(rng.choice([0.01, 0.1, 1.0]))
        assert rel(fit(d, K, lam, m_out).coeffs, fit_dense_oracle(d, K, lam).coeffs) <= 1e-8


def test_dense_oracle_contract(rng):
    d = random_dataset(rng, 4)
    o = fit_dense_oracle(d, KEXP, 0.2)
    B = block_kernel_matrix(KEXP, d.inputs, d.output_grid)
    y = d.output_matrix().ravel()
    u = o.coeffs.ravel()
    assert np.linalg.norm(B @ u + 0.2 * u - y) <= 1e-10 * np.linalg.norm(y)
    o2 = fit_dense_oracle(d, KEXP, 0.4)
    assert np.linalg.norm(o2.coeffs) < np.linalg.norm(o.coeffs)
    assert o.kappa == len(d.output_grid)


def test_dense_oracle_handles_composition_kernel(rng):
    g = Grid.uniform(8)
    d = random_dataset(rng, 3, m_out=8)
    C = CompositionKernel(lambda x: SampledFunction(g, g.points ** (1 + abs(x[0].values[0]))))
    o = fit_dense_oracle(d, C, 0.5)
    B = block_kernel_matrix(C, d.inputs, g)
    assert np.allclose(B @ o.coeffs.ravel() + 0.5 * o.coeffs.ravel(), d.output_matrix().ravel())
    with pytest.raises(UnsupportedKernelError):
        fit(d, C, 0.5, 4)


def test_fit_parameter_errors(rng):
    d = random_dataset(rng, 3)
    for lam in (0.0, -1.0, float("nan")):
        with pytest.raises(ParameterError):
            fit(d, KEXP, lam, 3)
    with pytest.raises(ParameterError):
        fit(d, KEXP, 0.1, 0)
    with pytest.raises(ParameterError):
        fit(d, KEXP, 0.1, 13)
    K = SeparableKernel(GAUSS, Multiplication(SampledFunction(Grid.uniform(5), np.ones(5))))
    with pytest.raises(DimensionError):
        fit(d, K, 0.1, 3)
    with pytest.raises(UnsupportedKernelError):
        mult = Multiplication(SampledFunction(d.output_grid, np.ones(12)))
        operator_eigs(SeparableKernel(GAUSS, mult), d.output_grid, 3, "analytic")


def test_analytic_path_close_to_discrete(rng):
    d = random_dataset(rng, 6, m_out=101)
    a = fit(d, KEXP, 0.1, 10, eig_method="analytic")
    b = fit(d, KEXP, 0.1, 10)
    assert rel(predict_values(a, d.inputs), predict_values(b, d.inputs)) <= 1e-3


def test_duplicates_allowed(rng):
    d = random_dataset(rng, 3)
    dup = FunctionalDataset(d.inputs + d.inputs, d.outputs + d.outputs)
    m = fit(dup, KEXP, 0.1, 12)
    assert np.allclose(m.coeffs[:3], m.coeffs[3:], atol=1e-10)


# -- prediction -------------------------------------------------------------------

def test_predict_zero_cases(rng):
    d = random_dataset(rng, 4)
    m = fit(d, KEXP, 0.1, 12)
    zero_model = FRModel(m.train_inputs, np.zeros_like(m.coeffs), KEXP, 0.1, 12, d.output_grid)
    assert np.all(predict(zero_model, d.inputs[0]).values == 0)
    lin = fit(d, SeparableKernel(ScalarKernel("linear"), Integral()), 0.1, 12)
    z = MultiFunction(tuple(SampledFunction.zeros(c.grid) for c in d.inputs[0]))
    assert np.all(predict(lin, z).values == 0)


def test_reproducing_identity(rng):
    d = random_dataset(rng, 5)
    lam = 0.07
    m = fit(d, KEXP, lam, len(d.output_grid))
    F = predict_values(m, d.inputs)
    Y = d.output_matrix()
    assert np.linalg.norm(F + lam * m.coeffs - Y) <= 1e-8 * np.linalg.norm(Y)


def test_predict_matches_kernel_sum(rng):
    d = random_dataset(rng, 4)
    m = fit(d, KEXP, 0.3, 5)
    x = random_multi(rng, list(d.input_grids))
    T = KEXP.T.matrix(d.output_grid)
    oracle = sum(GAUSS(xj, x) * (T @ u) for xj, u in zip(d.inputs, m.coeffs))
    assert np.allclose(predict(m, x).values, oracle, atol=1e-13)


def test_predict_grid_mismatch(rng):
    m = fit(random_dataset(rng, 3), KEXP, 0.1, 3)
    with pytest.raises(DimensionError):
        predict(m, random_multi(rng, [Grid.uniform(4), Grid.uniform(4)]))


@given(st.integers(0, 10_000))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, 6)
    perm = rng.permutation(6)
    a = fit(d, KEXP, 0.1, 8)
    b = fit(d.subset(perm), KEXP, 0.1, 8)
    X = [random_multi(rng, list(d.input_grids)) for _ in range(3)]
    assert np.allclose(predict_values(a, X), predict_values(b, X), rtol=0, atol=1e-12)


def test_regularization_limit(rng):
    d = random_dataset(rng, 5)
    x = random_multi(rng, list(d.input_grids))
    norms = [predict(fit(d, KEXP, lam, 12), x).norm() for lam in (1.0, 1e2, 1e4, 1e6)]
    assert all(a > b for a, b in zip(norms, norms[1:]))
    ksq = stability_bound(d, KEXP, 1.0).kappa_sq
    ysum = sum(y.norm() for y in d.outputs)
    assert norms[-1] <= ksq * ysum / 1e6 * (1 + 1e-9)


def test_monotone_truncation(rng):
    # bare truncated solve: the training residual loses one mode per step
    d = random_dataset(rng, 5, m_out=15)
    g = d.output_grid
    G = gram(KEXP.g, d.inputs)
    B = np.kron(G, KEXP.T.matrix(g))
    Y = d.output_matrix()
    ge = gram_eigs(G)
    errs = []
    for k in range(1, 16):
        ke = kronecker_eigs(ge, operator_eigs(KEXP, g, k))
        U = inverse_apply(ke, 0.05, Y, complement=False)
        errs.append(weighted_norm(Y - (B @ U.ravel()).reshape(Y.shape), g))
    assert all(b <= a * (1 + 1e-10) for a, b in zip(errs, errs[1:]))


# -- RSSE -------------------------------------------------------------------------

def test_rsse_examples(rng):
    g = Grid.uniform(31)
    fs = [SampledFunction(g, rng.standard_normal(31)) for _ in range(3)]
    hs = [SampledFunction(g, rng.standard_normal(31)) for _ in range(3)]
    assert rsse(fs, fs) == 0.0
    one = SampledFunction(g, np.ones(31))
    assert rsse([fs[0]], [fs[0] + one]) == pytest.approx(1.0, abs=1e-12)
    oracle = sum((f - h).norm() ** 2 for f, h in zip(fs, hs))
    assert rsse(fs, hs) == pytest.approx(oracle, rel=1e-12)
    with pytest.raises(DimensionError):
        rsse(fs, hs[:2])


# -- cross-validation ---------------------------------------------------------------

def naive_cv(d, K, lam, kappa):
    total = 0.0
    for i in range(d.n):
        m = fit(d.subset([j for j in range(d.n) if j != i]), K, lam, kappa)
        r = d.outputs[i].values - predict(m, d.inputs[i]).values
        total += float(np.sum(r * r))
    return total


def test_cv_equals_naive_loop():
    d = oracle_task(4, n=6)
    for lam, kappa in [(0.01, 5), (0.1, 25), (1.0, 10)]:
        assert cv_score(d, KEXP, lam, kappa) == naive_cv(d, KEXP, lam, kappa)


def test_cv_duplicates_near_zero(rng):
    d = random_dataset(rng, 4)
    dup = FunctionalDataset(d.inputs + d.inputs, d.outputs + d.outputs)
    total = float(np.sum(d.output_matrix() ** 2))
    assert 0 <= cv_score(dup, KEXP, 1e-9, 12) <= 1e-6 * total


def test_cv_needs_two_curves(rng):
    with pytest.raises(ParameterError):
        cv_score(random_dataset(rng, 1), KEXP, 0.1, 3)


def test_cv_is_thread_count_independent(rng, monkeypatch):
    d = random_dataset(rng, 7)
    monkeypatch.setenv("OVKERN_THREADS", "1")
    a = cv_score(d, KEXP, 0.1, 6)
    monkeypatch.setenv("OVKERN_THREADS", "4")
    assert cv_score(d, KEXP, 0.1, 6) == a
    monkeypatch.setenv("OVKERN_THREADS", "-2")
    with pytest.raises(ParameterError):
        worker_count()


def test_select_examples(rng):
    d = random_dataset(rng, 5)
    sel = select_hyperparams(d, KEXP, [0.3], [4])
    assert (sel.lam, sel.kappa) == (0.3, 4)
    sel = select_hyperparams(d, KEXP, [1e-3, 0.1, 10.0], [2, 4])
    assert len(sel.table) == 6 and all(np.isfinite(r[2]) and r[2] >= 0 for r in sel.table)
    assert sel.score == min(r[2] for r in sel.table)
    with pytest.raises(ParameterError):
        select_hyperparams(d, KEXP, [], [3])


def test_select_tie_break(rng):
    # zero outputs: every cell scores 0, so the largest lambda and smallest kappa win
    d = random_dataset(rng, 4)
    zero = FunctionalDataset(d.inputs, tuple(SampledFunction.zeros(d.output_grid) for _ in range(4)))
    sel = select_hyperparams(zero, KEXP, [0.1, 1.0, 0.01], [6, 3, 9])
    assert (sel.lam, sel.kappa) == (1.0, 3)


def test_selection_close_to_best_cell():
    # seed 0 of the default task, checked by a full held-out sweep
    d, _ = gen_regression_task(SynthSpec(seed=0, n=60))
    tr, te = d.subset(range(40)), d.subset(range(40, 60))
    K = SeparableKernel(ScalarKernel("gaussian", median_heuristic(tr.inputs)), Integral())
    sel = select_hyperparams(tr, K)

    def held_out(lam, kappa):
        m = fit(tr, K, lam, kappa)
        return rsse([predict(m, x) for x in te.inputs], te.outputs)

    best = min(held_out(l, k) for l, k, _ in sel.table)
    assert held_out(sel.lam, sel.kappa) <= 1.1 * best


# -- stability ---------------------------------------------------------------------

def test_stability_formulas(rng):
    d = random_dataset(rng, 6)
    r = stability_bound(d, KEXP, 0.2, 0.05)
    assert r.beta == r.sigma**2 * r.kappa_sq / (2 * r.lam * r.n)
    assert r.sigma == pytest.approx(2 * r.sigma_y * (1 + math.sqrt(r.kappa_sq) / math.sqrt(0.2)))
    assert r.xi == pytest.approx((r.sigma / 2) ** 2)
    gap = 2 * r.beta + (4 * r.n * r.beta + r.xi) * math.sqrt(math.log(1 / 0.05) / (2 * r.n))
    assert r.gen_bound_gap == pytest.approx(gap, rel=1e-14)
    # the closed form 2 k^2 sy^2 (1 + k/sqrt(lam))^2 / (lam n)
    k = math.sqrt(r.kappa_sq)
    alt = 2 * r.kappa_sq * r.sigma_y**2 * (1 + k / math.sqrt(0.2)) ** 2 / (0.2 * r.n)
    assert r.beta == pytest.approx(alt, rel=1e-12)
    assert all(np.isfinite(v) and v >= 0 for v in
               (r.kappa_sq, r.sigma_y, r.sigma, r.beta, r.xi, r.gen_bound_gap))
    assert any("beta=" in line for line in r.as_lines())


def test_beta_scaling(rng):
    d = random_dataset(rng, 5)
    dup = FunctionalDataset(d.inputs + d.inputs, d.outputs + d.outputs)
    assert stability_bound(dup, KEXP, 0.3).beta == 0.5 * stability_bound(d, KEXP, 0.3).beta
    betas = [stability_bound(d, KEXP, lam).beta for lam in (0.01, 0.1, 1.0, 10.0)]
    assert all(a > b for a, b in zip(betas, betas[1:]))


def test_kappa_sq_for_constant_multiplier(rng):
    d = random_dataset(rng, 4)
    K = SeparableKernel(GAUSS, Multiplication(SampledFunction(d.output_grid, np.full(12, 3.0))))
    assert stability_bound(d, K, 0.1).kappa_sq == pytest.approx(3.0, rel=1e-14)


def test_stability_bound_validation(rng):
    d = random_dataset(rng, 3)
    with pytest.raises(ParameterError):
        stability_bound(d, KEXP, 0.1, 1.0)
    with pytest.raises(ParameterError):
        stability_bound(d, KEXP, 0.0)


def probes_for(d, rng, count):
    r = stability_bound(d, KEXP, 0.1)
    out = []
    for _ in range(count):
        x = random_multi(rng, list(d.input_grids))
        y = SampledFunction(d.output_grid, smooth_values(rng, d.output_grid.points))
        y = y * (rng.uniform() * r.sigma_y / max(y.norm(), 1e-300))
        out.append((x, y))
    return out


@given(st.integers(0, 10_000))
def test_empirical_loss_differences_below_beta(seed):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, 6, m_out=8)
    res = empirical_stability_check(d, KEXP, 0.1, probes_for(d, rng, 10))
    assert res["pass"] and res["max_loss_diff"] <= res["beta"]


def test_loo_on_self_consistent_sample(rng):
    # if y_i already equals F_{Z\i}(x_i), removing sample i changes nothing
    d = random_dataset(rng, 5, m_out=8)
    n, lam = 5, 0.1
    sub = d.subset(range(n - 1))
    f = predict(fit(sub, KEXP, n * lam, 8), d.inputs[-1])
    d2 = FunctionalDataset(d.inputs, d.outputs[:-1] + (f,))
    if f.norm() > max(y.norm() for y in d2.outputs[:-1]):
        pytest.skip("constructed output dominates sigma_y")
    res = empirical_stability_check(d2, KEXP, lam, probes_for(d2, rng, 5))
    assert np.max(res["loss_diffs"][-1]) <= 1e-10 * max(1.0, res["max_loss_diff"])


def test_probe_on_full_model(rng):
    d = random_dataset(rng, 5, m_out=8)
    lam = 0.1
    full = fit(d, KEXP, d.n * lam, 8)
    x = random_multi(rng, list(d.input_grids))
    y = predict(full, x)
    if y.norm() > stability_bound(d, KEXP, lam).sigma_y:
        pytest.skip("probe output too large")
    res = empirical_stability_check(d, KEXP, lam, [(x, y)])
    for i in range(d.n):
        sub = fit(d.subset([j for j in range(d.n) if j != i]), KEXP, d.n * lam, 8)
        expected = (y - predict(sub, x)).norm() ** 2
        assert res["loss_diffs"][i, 0] == pytest.approx(expected, rel=1e-9, abs=1e-15)


def test_probe_preconditions(rng):
    d = random_dataset(rng, 4, m_out=8)
    r = stability_bound(d, KEXP, 0.1)
    x = d.inputs[0]
    big = SampledFunction(d.output_grid, np.full(8, 2 * r.sigma_y + 1))
    with pytest.raises(PreconditionError):
        empirical_stability_check(d, KEXP, 0.1, [(x, big)])
    lin = SeparableKernel(ScalarKernel("linear"), Integral())
    far = MultiFunction(tuple(c * 100.0 for c in x))
    with pytest.raises(PreconditionError):
        empirical_stability_check(d, lin, 0.1, [(far, d.outputs[0])])


# -- model files ------------------------------------------------------------------------

def test_model_round_trip(tmp_path, rng):
    d = random_dataset(rng, 4)
    h = SampledFunction(d.output_grid, 1 + rng.uniform(size=12))
    for K in (KEXP, SeparableKernel(ScalarKernel("linear"), Multiplication(h))):
        m = fit(d, K, 0.1, 7)
        save_model(tmp_path / "m.json", m)
        m2 = load_model(tmp_path / "m.json")
        assert np.array_equal(m2.coeffs, m.coeffs)
        assert (m2.lam, m2.kappa) == (m.lam, m.kappa)
        assert np.array_equal(predict_values(m2, d.inputs), predict_values(m, d.inputs))
        save_model(tmp_path / "m2.json", m2)
        assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()


def test_model_load_errors(tmp_path, rng):
    p = tmp_path / "m.json"
    save_model(p, fit(random_dataset(rng, 3), KEXP, 0.1, 4))
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(DataFormatError, match="line"):
        load_model(p)
    p.write_text(text.replace("ovkern-model/1", "ovkern-model/9"))
    with pytest.raises(DataFormatError):
        load_model(p)
    p.write_text(text.replace('"lambda": 0.1', '"lambda": -1'))
    with pytest.raises(ParameterError):
        load_model(p)
