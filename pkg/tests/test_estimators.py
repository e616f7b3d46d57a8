from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fortify.bridges import ModelSpec, build_instruments
from fortify.dataset import ObservedData
from fortify.errors import (
    DomainError,
    IdentificationError,
    PropensityFitError,
    ProxyIndexError,
)
from fortify.estimators import (
    EstimateResult,
    PdrEstimator,
    estimate_dr,
    estimate_fpipw,
    estimate_fpmr,
    estimate_fpor,
    estimate_pdr,
    estimator_set,
    fit_b_r,
    fit_nuisances,
    fit_t,
    if_variance,
    influence_function,
    _t_influence,
)
from fortify.projection import AceProjector, enumerate_subsets
from fortify.simulation import TRUE_B, TRUE_R, TRUE_T, Section4Dgp, generate_section4


@pytest.fixture(scope="module")
def fitted(sec4_small):
    return fit_nuisances(sec4_small)


def test_fit_converges_on_reference_sample(fitted):
    d = fitted.t_diagnostics
    assert d.converged and d.residual_norm <= 1e-8 * (1 + d.scale)
    assert fitted.br_diagnostics.converged


def test_fpor_with_treatment_only_h(sec4_small):
    fits = fit_nuisances(sec4_small, ModelSpec(h_terms=("A",), c2_terms=("A", "W1", "A*W1", "A*X1", "W1^2")))
    assert estimate_fpor(sec4_small, fits, se=False).tau_hat == pytest.approx(fits.b_hat[0], rel=1e-14)


def _exact_data(n=400, seed=1):
    data, _ = generate_section4(Section4Dgp(n, seed))
    y = 2.0 * data.a - 0.5 * data.w[:, 0] + 0.5 - 0.125 * data.z[:, 1] + 0.5 * data.x[:, 0]
    return data.replace(y=y)


def _linear_parts(data, spec=None):
    models = (spec or ModelSpec()).resolve(data)
    proj = AceProjector(data, enumerate_subsets(data.k, 1))
    return models, build_instruments(models, data, proj)


def test_zero_noise_recovers_coefficients():
    data = _exact_data()
    models, inst = _linear_parts(data)
    b, r, diag = fit_b_r(data, models.h, models.l, inst)
    np.testing.assert_allclose(b, TRUE_B, atol=1e-9)
    np.testing.assert_allclose(r, TRUE_R, atol=1e-9)
    assert diag.residual_norm <= 1e-10


def test_fpipw_of_zero_outcome(sec4_small, fitted):
    data = sec4_small.replace(y=np.zeros(sec4_small.n))
    assert estimate_fpipw(data, fitted).tau_hat == 0.0


def test_fpmr_equals_fpor_when_residual_vanishes(sec4_small, fitted):
    h = fitted.models.h
    data = sec4_small.replace(y=h.evaluate(TRUE_B, sec4_small))
    fits = replace(fitted, b_hat=TRUE_B.copy(), r_hat=np.zeros(4))
    assert estimate_fpmr(data, fits, se=False).tau_hat == estimate_fpor(data, fits, se=False).tau_hat


def test_influence_mean_is_zero(sec4_small, fitted):
    assert abs(np.mean(influence_function(sec4_small, fitted))) <= 1e-10


def test_if_variance_of_constant_components(sec4_small, fitted):
    data = sec4_small.replace(y=np.zeros(sec4_small.n))
    fits = replace(fitted, b_hat=np.zeros(2), r_hat=np.zeros(4))
    assert if_variance(data, fits) == 0.0


def test_if_se_with_true_nuisances(sec4_small):
    from fortify.simulation import true_nuisances
    h, l, q = true_nuisances(sec4_small)
    s = 2 * sec4_small.a - 1
    infl = 2.0 + s * q * (sec4_small.y - h - l) - 2.0
    se = np.sqrt(np.mean(infl ** 2) / sec4_small.n)
    assert 0.02 <= se <= 0.04


def test_pdr_on_single_proxy_equals_fpmr(sec4_small):
    data = sec4_small.replace(z=sec4_small.z[:, :1], z_names=())
    fpmr = estimate_fpmr(data, fit_nuisances(data, ModelSpec(gamma=1)))
    pdr = estimate_pdr(data, 1)
    assert pdr.tau_hat == fpmr.tau_hat and pdr.se == fpmr.se
    assert pdr.label == "PDR1" and pdr.method == "PDR"


def test_pdr_index_guard(sec4_small):
    with pytest.raises(ProxyIndexError):
        estimate_pdr(sec4_small, 3)


def test_outcome_shift_equivariance(sec4_small, fitted):
    shifted = sec4_small.replace(y=sec4_small.y + 3.7)
    a = estimate_fpmr(sec4_small, fitted).tau_hat
    b = estimate_fpmr(shifted, fit_nuisances(shifted)).tau_hat
    assert b == pytest.approx(a, abs=1e-8)


def test_direct_and_newton_agree(sec4_small, fitted):
    m, inst = fitted.models, fitted.instruments
    b1, r1, _ = fit_b_r(sec4_small, m.h, m.l, inst, method="direct")
    b2, r2, _ = fit_b_r(sec4_small, m.h, m.l, inst, method="newton")
    np.testing.assert_allclose(b1, b2, atol=1e-9)
    np.testing.assert_allclose(r1, r2, atol=1e-9)


def test_duplicate_c0_is_unidentified(sec4_small, fitted):
    inst = fitted.instruments
    dup = replace(inst, c0=np.column_stack([inst.c0[:, 0], inst.c0[:, 0]]))
    with pytest.raises(IdentificationError) as info:
        fit_b_r(sec4_small, fitted.models.h, fitted.models.l, dup)
    assert info.value.block == "c0"


def test_duplicate_c2_is_unidentified(sec4_small):
    with pytest.raises(IdentificationError):
        fit_nuisances(sec4_small, ModelSpec(c2_terms=("A", "W1", "A*W1", "W1^2", "W1*W1")))


def test_t_moment_at_truth_is_noise(sec4_large):
    data, _ = sec4_large
    fits = fit_nuisances(data)
    proj = fits.projector
    from fortify.estimators import _WeightEquation
    eq = _WeightEquation(data, fits.models.q, fits.instruments, proj, fits.ace, True)
    F, d, _ = eq(TRUE_T)
    inst = fits.instruments
    per_row = inst.c2 * d[:, None] - (inst.c2_a1 - inst.c2_a0)
    se = per_row.std(axis=0, ddof=1) / np.sqrt(data.n)
    assert np.all(np.abs(F) <= 3 * se)


def test_nuisance_recovery(sec4_large):
    data, _ = sec4_large
    fits = fit_nuisances(data)
    assert np.max(np.abs(fits.b_hat - TRUE_B)) < 0.05
    assert np.max(np.abs(fits.r_hat - TRUE_R)) < 0.05
    # t is weakly identified along (intercept, A); compare on its own noise scale
    se_t = np.sqrt(np.mean(_t_influence(data, fits) ** 2, axis=0) / data.n)
    assert np.all(np.abs(fits.t_hat - TRUE_T) <= 4 * se_t)


def test_fit_t_no_root_modes(sec4_small):
    from fortify.dataset import demote_proxies
    reduced = demote_proxies(sec4_small, [2])
    spec = ModelSpec()
    models = spec.resolve(reduced)
    proj = AceProjector(reduced, enumerate_subsets(1, 1))
    from fortify.bridges import build_instruments
    inst = build_instruments(models, reduced, proj)
    t, diag, *_ = fit_t(reduced, models.q, inst, proj, on_no_root="minimize")
    assert not diag.converged and diag.method == "lm-minimize"
    from fortify.errors import FortifyError
    with pytest.raises(FortifyError):
        fit_t(reduced, models.q, inst, proj)


def test_dr_randomized_constant_outcome():
    rng = np.random.default_rng(0)
    n = 2000
    data = ObservedData(y=np.full(n, 4.0), a=rng.integers(0, 2, n), z=rng.normal(size=(n, 2)),
                        w=rng.normal(size=(n, 1)), x=rng.normal(size=(n, 1)))
    assert abs(estimate_dr(data).tau_hat) < 1e-8


def test_dr_confounded_bias(sec4_large):
    data, _ = sec4_large
    bias = estimate_dr(data).tau_hat - 2.0
    assert 0.156 * 0.7 <= bias <= 0.156 * 1.3


def test_dr_separation():
    n = 40
    x = np.linspace(-1, 1, n)
    a = (x > 0).astype(float)
    data = ObservedData(y=x, a=a, z=np.random.default_rng(1).normal(size=(n, 1)), w=np.zeros((n, 0)),
                        x=x[:, None])
    with pytest.raises(PropensityFitError):
        estimate_dr(data)


def test_result_interval_and_json(sec4_small, fitted):
    res = estimate_fpmr(sec4_small, fitted)
    assert res.ci_lower <= res.tau_hat <= res.ci_upper
    assert (res.ci_upper - res.tau_hat) == pytest.approx(1.959963984540054 * res.se)
    out = json.loads(res.to_json())
    assert out["method"] == "fPMR" and out["diagnostics"]["solver"]["t"]["converged"]
    with pytest.raises(DomainError):
        EstimateResult("XYZ", 1.0)


def test_estimator_set_expansion():
    est = estimator_set(["fPMR", "PDR", "DR"], ModelSpec(), 3)
    assert list(est) == ["fortified", "PDR1", "PDR2", "PDR3", "DR"]
    assert isinstance(estimator_set(["PDR2"], ModelSpec(), 2)["PDR2"], PdrEstimator)
    with pytest.raises(ProxyIndexError):
        estimator_set(["PDR4"], ModelSpec(), 2)
    with pytest.raises(DomainError):
        estimator_set(["OLS"], ModelSpec(), 2)


@settings(max_examples=15, deadline=None)
@given(st.floats(-100, 100), st.integers(0, 1000))
def test_fpor_ignores_outcome_shift(c, seed):
    data = _exact_data(n=300, seed=seed + 2)
    data = data.replace(y=data.y + np.random.default_rng(seed).normal(size=data.n))
    shifted = data.replace(y=data.y + c)
    m, inst = _linear_parts(data)
    b1, _, _ = fit_b_r(data, m.h, m.l, inst)
    b2, _, _ = fit_b_r(shifted, m.h, m.l, inst)
    np.testing.assert_allclose(b1, b2, atol=1e-8 * (1 + abs(c)))
