import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import dp_oracle as oracle
from anofel import dp
from anofel.errors import BadParams

# frozen from the mpmath oracle (tests/dp_oracle.py)
S_F = 0.02
C = 4.8448052626053894212586421575855939315192494062536
SIGMA = 0.10766233916900865380574760350190208736709443125008
GAMMA = 0.17153711601934046111108002478897417850517552411647
ALPHA_K1 = 0.075401560271279019976478779365069515486228519579443

PARAMS = dp.DPParams(0.9, 1e-5, 1.0, 100)


def test_frozen_values_match_live_oracle():
    assert float(oracle.sensitivity(1, 100)) == S_F
    assert abs(float(oracle.c_factor("1e-5")) - C) < 1e-15
    assert abs(float(oracle.sigma("0.9", "1e-5", 1, 100)) - SIGMA) < 1e-15
    assert abs(float(oracle.gamma("0.9", "1e-5")) - GAMMA) < 1e-15


def test_calibration_against_oracle():
    scale = dp.noise_sigma(PARAMS)
    assert scale.sensitivity == pytest.approx(S_F, rel=1e-12)
    assert scale.c_factor == pytest.approx(C, rel=1e-12)
    assert scale.sigma == pytest.approx(SIGMA, rel=1e-12)
    assert dp.gamma_bound(0.9, 1e-5) == pytest.approx(GAMMA, rel=1e-12)
    assert dp.alpha_bound(S_F, 1, 1e-5, 0.9) == pytest.approx(ALPHA_K1, rel=1e-12)


def test_describe_carries_all_quantities():
    d = dp.describe(PARAMS)
    assert d["sigma"] == pytest.approx(SIGMA, rel=1e-12)
    assert d["gamma"] == pytest.approx(GAMMA, rel=1e-12)


@pytest.mark.parametrize("g,expected", [
    ([0.3, 0.4], [0.3, 0.4]),
    ([3.0, 4.0], [0.6, 0.8]),
    ([0.0, 0.0], [0.0, 0.0]),
])
def test_clip_cases(g, expected):
    assert np.allclose(dp.clip(g, 1.0), expected)


def test_clip_rows_bounds_each_row():
    rng = np.random.default_rng(0)
    rows = rng.normal(scale=3.0, size=(200, 7))
    rows[0] = 0
    out = dp.clip_rows(rows, 1.0)
    assert np.all(np.linalg.norm(out, axis=1) <= 1.0 + 1e-12)
    small = np.linalg.norm(rows, axis=1) <= 1.0
    assert np.allclose(out[small], rows[small])


def test_noise_std_matches_sigma():
    scale = dp.noise_sigma(PARAMS)
    x = dp.sample_noise(scale, 100_000, 1, np.random.default_rng(3))
    assert abs(x.std() / SIGMA - 1) < 0.02
    assert abs(x.mean()) < 4 * SIGMA / math.sqrt(100_000)


def test_summed_client_noise_is_sigma_over_root_n():
    scale = dp.noise_sigma(PARAMS)
    rng = np.random.default_rng(4)
    n = 16
    total = sum(dp.sample_noise(scale, 50_000, n, rng) for _ in range(n))
    assert abs(total.std() / (SIGMA / math.sqrt(n)) - 1) < 0.02


@given(st.integers(1, 50))
def test_sigma_linear_in_exposures(T):
    base = dp.noise_sigma(PARAMS).sigma
    assert dp.noise_sigma(dp.DPParams(0.9, 1e-5, 1.0, 100, T)).sigma == pytest.approx(T * base, rel=1e-12)


def test_gamma_increasing_in_delta_on_grid():
    for eps in (0.1, 0.5, 0.9, 2.0):
        grid = np.logspace(-9, np.log10(0.49), 60)
        values = [dp.gamma_bound(eps, d) for d in grid]
        assert all(b > a for a, b in zip(values, values[1:]))


@given(st.floats(1e-3, 5.0), st.floats(1e-12, 0.499))
def test_gamma_in_unit_interval(eps, delta):
    assert 0 < dp.gamma_bound(eps, delta) < 1


def test_gamma_vanishes_at_zero_privacy_loss():
    assert dp.gamma_bound(1e-12, 1e-15) < 1e-11


@given(st.floats(1e-9, 0.5), st.integers(1, 10_000))
def test_sensitivity_and_c_against_oracle(delta, size):
    assert dp.c_factor(delta) == pytest.approx(float(oracle.c_factor(delta)), rel=1e-12)
    assert dp.sensitivity(1.0, size) == pytest.approx(float(oracle.sensitivity(1, size)), rel=1e-12)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8), st.floats(0.1, 10))
def test_clip_bound_and_idempotence(g, bound):
    once = dp.clip(g, bound)
    assert np.linalg.norm(once) <= bound * (1 + 1e-12)
    assert np.allclose(dp.clip(once, bound), once)


def test_alpha_linear_in_sensitivity_and_zero_constant():
    a = dp.alpha_bound(0.02, 10, 1e-5, 0.9)
    assert dp.alpha_bound(0.04, 10, 1e-5, 0.9) == pytest.approx(2 * a, rel=1e-12)
    assert dp.alpha_bound(0.02, 10, 1e-5, 0.9, constant=0.0) == 0.0


def test_alpha_scaling_in_rounds():
    ratio = dp.alpha_bound(1.0, 16, 1e-5, 0.9) / dp.alpha_bound(1.0, 4, 1e-5, 0.9)
    assert ratio == pytest.approx(2 * math.sqrt(2), rel=1e-12)


@pytest.mark.parametrize("kwargs", [
    dict(epsilon=0.0, delta=1e-5, clip=1.0),
    dict(epsilon=0.5, delta=0.0, clip=1.0),
    dict(epsilon=0.5, delta=1.0, clip=1.0),
    dict(epsilon=0.5, delta=1e-5, clip=0.0),
    dict(epsilon=0.5, delta=1e-5, clip=1.0, dataset_size=0),
])
def test_bad_params(kwargs):
    with pytest.raises(BadParams):
        dp.DPParams(**kwargs)


def test_large_epsilon_warns():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        dp.DPParams(1.5, 1e-5, 1.0)
    assert any("epsilon" in str(x.message) for x in w)
