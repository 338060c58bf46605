import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ovkern import FunctionalDataset, Grid, MultiFunction, SampledFunction
from ovkern.datagen import SynthSpec, gen_regression_task

settings.register_profile(
    "ovkern", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("ovkern")


def smooth_values(rng, t, modes=4):
    k = np.arange(1, modes + 1)
    a, b = rng.standard_normal((2, modes)) / k
    return a @ np.sin(np.pi * np.outer(k, t)) + b @ np.cos(np.pi * np.outer(k, t))


def random_multi(rng, grids, modes=4):
    return MultiFunction(tuple(SampledFunction(g, smooth_values(rng, g.points, modes)) for g in grids))


def random_dataset(rng, n, p=2, m_in=15, m_out=12):
    gin = Grid.uniform(m_in)
    gout = Grid.uniform(m_out)
    X = [random_multi(rng, [gin] * p) for _ in range(n)]
    Y = [SampledFunction(gout, smooth_values(rng, gout.points)) for _ in range(n)]
    return FunctionalDataset(tuple(X), tuple(Y))


def oracle_task(seed, n=8, p=2, m=25, noise_sd=0.0):
    spec = SynthSpec(seed=seed, n=n, p=p, m_in=m, m_out=m, noise_sd=noise_sd)
    return gen_regression_task(spec)[0]


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
