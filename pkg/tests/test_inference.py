from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fortify.errors import DomainError, InferenceError
from fortify.inference import (
    BootstrapConfig,
    bootstrap_se,
    confidence_interval,
    derive_seed,
    mc_study,
    splitmix64,
    trim_counts,
    trimmed_sd,
)
from fortify.simulation import philox


def test_trim_counts_default():
    assert trim_counts(500, 0.01) == (2, 3)
    assert trim_counts(1000, 0.01) == (5, 5)
    assert trim_counts(10, 0.0) == (0, 0)


@given(st.integers(2, 5000), st.floats(0, 0.49))
def test_trim_counts_sum(m, f):
    lo, hi = trim_counts(m, f)
    assert lo <= hi <= lo + 1
    assert lo + hi == pytest.approx(m * f, abs=1.0 + 1e-9)


def test_interval_examples():
    lo, hi = confidence_interval(2.0, 0.03)
    assert lo == pytest.approx(1.9412, abs=1e-4) and hi == pytest.approx(2.0588, abs=1e-4)
    lo, hi = confidence_interval(0.0, 1.0, 0.9)
    assert hi == pytest.approx(1.644854, abs=1e-6) and lo == -hi
    with pytest.raises(DomainError):
        confidence_interval(0.0, -1.0)
    with pytest.raises(DomainError):
        confidence_interval(0.0, 1.0, 1.0)


def test_config_validation():
    with pytest.raises(DomainError):
        BootstrapConfig(b_samples=1)
    with pytest.raises(DomainError):
        BootstrapConfig(trim_fraction=0.5)


def test_constant_estimator_has_zero_se(tiny):
    se, est = bootstrap_se(tiny, lambda d: 1.25, BootstrapConfig(b_samples=20))
    assert se == 0.0 and est.shape == (20,)


def test_trimming_removes_outlier():
    vals = np.r_[np.linspace(-1, 1, 499), 1e6]
    kept = np.sort(vals)[2:497]
    assert trimmed_sd(vals, 0.01) == pytest.approx(np.std(kept, ddof=1), rel=1e-12)
    assert trimmed_sd(vals, 0.01) < 1.0


def test_too_few_after_trimming():
    with pytest.raises(InferenceError):
        trimmed_sd([1.0, 2.0], 0.49)


def test_failing_replicates_are_dropped(tiny):
    calls = iter(range(100))

    def flaky(d):
        from fortify.errors import NonConvergenceError
        if next(calls) % 5 == 0:
            raise NonConvergenceError("stub")
        return float(d.y.mean())

    se, est = bootstrap_se(tiny, flaky, BootstrapConfig(b_samples=20, trim_fraction=0.0))
    assert np.isnan(est).sum() == 4 and se > 0


def test_bootstrap_mean_se_matches_formula():
    from fortify.dataset import ObservedData
    rng = philox(5)
    n = 400
    data = ObservedData(y=rng.standard_normal(n), a=np.r_[np.zeros(n // 2), np.ones(n // 2)],
                        z=rng.standard_normal((n, 1)), w=np.empty((n, 0)), x=np.empty((n, 0)))
    se, _ = bootstrap_se(data, lambda d: float(d.y.mean()), BootstrapConfig(b_samples=400, seed=1))
    assert se == pytest.approx(data.y.std() / np.sqrt(n), rel=0.15)


def test_seed_derivation():
    assert derive_seed(7, 3) == derive_seed(7, 3)
    seeds = {derive_seed(7, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(7, 0) != derive_seed(8, 0)
    # SplitMix64 reference output for state 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def _gauss_dgp(n, seed):
    from fortify.dataset import ObservedData
    rng = philox(seed)
    return ObservedData(y=2.0 + rng.standard_normal(n), a=np.r_[np.zeros(n // 2), np.ones(n - n // 2)],
                        z=np.zeros((n, 1)), w=np.empty((n, 0)), x=np.empty((n, 0)))


class _Mean:
    def __call__(self, data):
        from fortify.estimators import EstimateResult
        return EstimateResult("DR", float(data.y.mean()), se=float(data.y.std(ddof=1) / np.sqrt(data.n)))


class _Exact:
    def __call__(self, data):
        from fortify.estimators import EstimateResult
        return EstimateResult("DR", 2.0, se=0.1)


def test_mc_deterministic_and_serialisable(tmp_path):
    r1 = mc_study(_gauss_dgp, {"m": _Mean()}, 50, 20, seed=3)
    r2 = mc_study(_gauss_dgp, {"m": _Mean()}, 50, 20, seed=3)
    np.testing.assert_array_equal(r1.estimates["DR"], r2.estimates["DR"])
    out = json.loads(r1.to_json(tmp_path / "r.json"))
    assert out["n_reps"] == 20 and len(out["estimates"]["DR"]) == 20
    r1.to_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "method,Bias,SD,SE,Cov,failures"


def test_mc_exact_estimator_covers():
    rep = mc_study(_gauss_dgp, {"e": _Exact()}, 10, 15, seed=0)
    s = rep.methods["DR"]
    assert s.coverage == 1.0 and s.bias == 0.0 and s.sd == 0.0


def test_mc_gaussian_coverage():
    rep = mc_study(_gauss_dgp, {"m": _Mean()}, 200, 2000, seed=11)
    assert abs(rep.methods["DR"].coverage - 0.95) <= 0.02
    assert abs(rep.methods["DR"].bias) < 0.01


def test_mc_counts_failures():
    from fortify.errors import NonConvergenceError

    class Boom:
        labels = ("DR",)

        def __call__(self, data):
            raise NonConvergenceError("stub")

    rep = mc_study(_gauss_dgp, {"b": Boom()}, 10, 5)
    assert rep.methods["DR"].failures == 5
    with pytest.raises(DomainError):
        mc_study(_gauss_dgp, {"b": Boom()}, 10, 0)
