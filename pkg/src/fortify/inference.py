"""Bootstrap standard errors, normal confidence intervals and replicated studies."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.stats import norm

from .dataset import ObservedData, resample
from .errors import DomainError, FortifyError, InferenceError

log = logging.getLogger(__name__)

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = 0xFFFFFFFFFFFFFFFF


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 output mix."""
    z = (x + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Independent 64-bit seed for stream ``index`` of master ``seed``."""
    return splitmix64((int(seed) & _MASK) ^ ((int(index) * _GOLDEN) & _MASK))


def confidence_interval(tau_hat: float, se: float, level: float = 0.95):
    if se < 0:
        raise DomainError("standard error must be nonnegative")
    if not 0 < level < 1:
        raise DomainError("level must lie strictly between 0 and 1")
    half = float(norm.ppf(0.5 + level / 2.0)) * se
    return tau_hat - half, tau_hat + half


@dataclass(frozen=True)
class BootstrapConfig:
    b_samples: int = 500
    trim_fraction: float = 0.01
    seed: int = 0
    ci_level: float = 0.95

    def __post_init__(self):
        if self.b_samples < 2:
            raise DomainError("b_samples must be at least 2")
        if not 0 <= self.trim_fraction < 0.5:
            raise DomainError("trim_fraction must lie in [0, 0.5)")
        if not 0 < self.ci_level < 1:
            raise DomainError("ci_level must lie strictly between 0 and 1")


def trim_counts(m: int, fraction: float):
    """Number of estimates dropped from the (low, high) tails of ``m`` values."""
    total = m * fraction / 2.0
    # guard against 500 * 0.01 / 2 landing a hair above 2.5
    total = round(total, 9)
    return math.floor(total), math.ceil(total)


def trimmed_sd(estimates, fraction: float) -> float:
    est = np.sort(np.asarray(estimates, dtype=float))
    lo, hi = trim_counts(est.size, fraction)
    kept = est[lo:est.size - hi]
    if kept.size < 2:
        raise InferenceError(f"only {kept.size} bootstrap estimate(s) left after trimming")
    return float(np.std(kept, ddof=1))


def _point(result) -> float:
    return float(getattr(result, "tau_hat", result))


def _boot_one(args):
    estimator, data, seed = args
    try:
        return _point(estimator(resample(data, seed)))
    except (FortifyError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.debug("bootstrap replicate failed: %s", exc)
        return float("nan")


def bootstrap_se(data: ObservedData, estimator: Callable, config: BootstrapConfig | None = None,
                 workers: int = 1):
    """Trimmed nonparametric bootstrap standard error.

    Parameters
    ----------
    estimator : callable
        Maps an ``ObservedData`` to a point estimate (a float or an object
        with ``tau_hat``). Failing replicates are dropped and counted.

    Returns
    -------
    se : float
    estimates : ndarray
        All ``b_samples`` estimates in draw order; failures are NaN.
    """
    config = config or BootstrapConfig()
    jobs = [(estimator, data, derive_seed(config.seed, b)) for b in range(config.b_samples)]
    estimates = np.array(_map(_boot_one, jobs, workers))
    ok = estimates[np.isfinite(estimates)]
    failures = estimates.size - ok.size
    if failures:
        log.warning("%d of %d bootstrap replicates failed and were dropped", failures, estimates.size)
    return trimmed_sd(ok, config.trim_fraction), estimates


def _map(fn, jobs, workers):
    if workers and workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [fn(j) for j in jobs]


# --------------------------------------------------------------------------
# replicated studies
# --------------------------------------------------------------------------

@dataclass
class MethodSummary:
    bias: float
    sd: float
    mean_se: float
    coverage: float
    n_reps: int
    n: int
    failures: int
    mean_estimate: float


@dataclass
class McReport:
    """Per-method bias, SD, mean SE and coverage, plus the raw replicate table."""

    tau_star: float
    n: int
    n_reps: int
    se_engine: str
    seed: int
    methods: dict
    estimates: dict = field(default_factory=dict)
    ses: dict = field(default_factory=dict)

    def to_dict(self, include_raw: bool = True) -> dict:
        out = {
            "tau_star": self.tau_star,
            "n": self.n,
            "n_reps": self.n_reps,
            "se_engine": self.se_engine,
            "seed": self.seed,
            "methods": {k: asdict(v) for k, v in self.methods.items()},
        }
        if include_raw:
            out["estimates"] = {k: [None if not np.isfinite(x) else float(x) for x in v]
                                for k, v in self.estimates.items()}
            out["se"] = {k: [None if not np.isfinite(x) else float(x) for x in v] for k, v in self.ses.items()}
        return out

    def to_json(self, path=None, **kw) -> str:
        text = json.dumps(self.to_dict(), indent=1, **kw)
        if path is not None:
            Path(path).write_text(text)
        return text

    def rows(self):
        """Table rows with Bias, SD, SE and Cov scaled by 100."""
        for name, s in self.methods.items():
            yield {
                "method": name,
                "Bias": 100 * s.bias,
                "SD": 100 * s.sd,
                "SE": 100 * s.mean_se,
                "Cov": 100 * s.coverage,
                "failures": s.failures,
            }

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["method", "Bias", "SD", "SE", "Cov", "failures"])
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: (f"{v:.1f}" if isinstance(v, float) else v) for k, v in row.items()})

    def format_table(self) -> str:
        lines = [f"{'method':<10}{'Bias':>8}{'SD':>8}{'SE':>8}{'Cov':>8}"]
        for row in self.rows():
            lines.append(f"{row['method']:<10}{row['Bias']:>8.1f}{row['SD']:>8.1f}{row['SE']:>8.1f}{row['Cov']:>8.1f}")
        return "\n".join(lines)


def _results_as_mapping(out) -> Mapping:
    if isinstance(out, Mapping):
        return out
    return {getattr(out, "label", None) or getattr(out, "method", "estimate"): out}


def _replicate(args):
    dgp, estimators, n, seed, bootstrap, level = args
    data = dgp(n, seed)
    row = {}
    for name, est in estimators.items():
        try:
            results = _results_as_mapping(est(data))
        except (FortifyError, FloatingPointError, np.linalg.LinAlgError) as exc:
            log.info("replicate seed %d: estimator %s failed: %s", seed, name, exc)
            row[name] = {lab: (float("nan"), float("nan")) for lab in getattr(est, "labels", (name,))}
            continue
        out = {}
        for label, res in results.items():
            tau = _point(res)
            se = getattr(res, "se", None)
            if bootstrap is not None:
                cfg = BootstrapConfig(bootstrap.b_samples, bootstrap.trim_fraction,
                                      derive_seed(seed, 0x5EED), level)
                try:
                    se, _ = bootstrap_se(data, _Select(est, label), cfg)
                except FortifyError:
                    se = float("nan")
            out[label] = (tau, float("nan") if se is None else float(se))
        row[name] = out
    return row


@dataclass(frozen=True)
class _Select:
    """Picks one labelled result out of a multi-output estimator."""

    estimator: Callable
    label: str

    def __call__(self, data):
        return _point(_results_as_mapping(self.estimator(data))[self.label])


def mc_study(dgp: Callable, estimators: Mapping[str, Callable], n: int, reps: int, seed: int = 0,
             tau_star: float = 2.0, bootstrap: BootstrapConfig | None = None, level: float = 0.95,
             workers: int = 1) -> McReport:
    """Replicate ``dgp`` and summarise every estimator.

    ``dgp(n, seed)`` returns an ``ObservedData``. Each estimator maps data to
    an ``EstimateResult`` (or a mapping label -> result for estimators that
    share nuisance fits). SEs come from the results themselves unless a
    ``bootstrap`` config is given. Replicate ``r`` uses
    ``derive_seed(seed, r)``; aggregation is ordered by replicate index.
    """
    if reps < 1:
        raise DomainError("reps must be at least 1")
    jobs = [(dgp, dict(estimators), n, derive_seed(seed, r), bootstrap, level) for r in range(reps)]
    rows = _map(_replicate, jobs, workers)
    labels = []
    for row in rows:
        for group in row.values():
            for label in group:
                if label not in labels:
                    labels.append(label)
    est = {lab: np.full(reps, np.nan) for lab in labels}
    ses = {lab: np.full(reps, np.nan) for lab in labels}
    for r, row in enumerate(rows):
        for group in row.values():
            for label, (tau, se) in group.items():
                est[label][r], ses[label][r] = tau, se
    z = float(norm.ppf(0.5 + level / 2.0))
    methods = {}
    for lab in labels:
        e, s = est[lab], ses[lab]
        ok = np.isfinite(e)
        failures = int(reps - ok.sum())
        good = e[ok]
        sd = float(np.std(good, ddof=1)) if good.size > 1 else 0.0
        s_ok = s[ok]
        have_se = np.isfinite(s_ok)
        covered = np.abs(good[have_se] - tau_star) <= z * s_ok[have_se]
        methods[lab] = MethodSummary(
            bias=float(np.mean(good) - tau_star) if good.size else float("nan"),
            sd=sd,
            mean_se=float(np.mean(s_ok[have_se])) if have_se.any() else float("nan"),
            coverage=float(covered.mean()) if have_se.any() else float("nan"),
            n_reps=reps,
            n=n,
            failures=failures,
            mean_estimate=float(np.mean(good)) if good.size else float("nan"),
        )
    return McReport(
        tau_star=tau_star, n=n, n_reps=reps, se_engine="bootstrap" if bootstrap else "analytic",
        seed=seed, methods=methods, estimates=est, ses=ses,
    )
