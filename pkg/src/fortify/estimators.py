"""Nuisance estimating equations and the average-treatment-effect estimators.

Fortified estimators share one nuisance fit:

* (b, r) solve P_n[c0 (Y - h(b) - l(r))] = 0 and P_n[c1 (Y - h(b) - l(r))] = 0;
* t solves P_n[c2 d(s q(t)) - c2(W, 1, X) + c2(W, 0, X)] = 0, where
  s = (-1)^{1-A} and d is the ACE projection (or the identity when the
  weight projection is switched off).

Then fPOR = P_n[h(1) - h(0)], fPIPW = P_n[d(s q) Y] and
fPMR = fPOR + P_n[d(s q) (Y - h - l)].
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .bridges import (
    InstrumentVectors,
    ModelSpec,
    OutcomeBridge,
    ResidualModel,
    ResolvedModels,
    TreatmentBridge,
    build_instruments,
    efficient_c2,
)
from .dataset import ObservedData, demote_proxies
from .errors import (
    DomainError,
    IdentificationError,
    NonConvergenceError,
    PropensityFitError,
    ProxyIndexError,
)
from .inference import confidence_interval
from .projection import AceConfig, AceProjector, SubsetFamily, enumerate_subsets

log = logging.getLogger(__name__)

METHODS = ("fPOR", "fPIPW", "fPMR", "PDR", "DR")

LINEAR_TOL = 1e-10
NEWTON_TOL = 1e-8
MAX_NEWTON = 100
MAX_HALVINGS = 20
COND_LIMIT = 1e12


# --------------------------------------------------------------------------
# result containers
# --------------------------------------------------------------------------

@dataclass
class EstimateResult:
    """Point estimate with optional standard error and normal interval."""

    method: str
    tau_hat: float
    gamma: int | None = None
    se: float | None = None
    ci_lower: float | None = None
    ci_upper: float | None = None
    se_method: str | None = None
    label: str | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method tag {self.method!r}")
        if self.label is None:
            self.label = self.method

    def with_se(self, se: float, how: str, level: float = 0.95) -> "EstimateResult":
        lo, hi = confidence_interval(self.tau_hat, se, level)
        return replace(self, se=float(se), ci_lower=lo, ci_upper=hi, se_method=how)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "label": self.label,
            "gamma": self.gamma,
            "tau_hat": self.tau_hat,
            "se": self.se,
            "ci": None if self.ci_lower is None else [self.ci_lower, self.ci_upper],
            "se_method": self.se_method,
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


@dataclass
class SolverDiagnostics:
    residual_norm: float
    iterations: int
    converged: bool
    scale: float = 0.0
    method: str = ""
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "scale": self.scale,
            "method": self.method,
            "trace": list(map(float, self.trace)),
        }


@dataclass
class NuisanceFit:
    """Fitted (b, r, t) with the projection state and instruments used."""

    models: ResolvedModels
    family: SubsetFamily
    projector: AceProjector
    ace: AceConfig
    instruments: InstrumentVectors
    b_hat: np.ndarray
    r_hat: np.ndarray
    t_hat: np.ndarray
    weight: np.ndarray  # projected s * q(t_hat) on the sample
    jacobian_t: np.ndarray
    br_diagnostics: SolverDiagnostics
    t_diagnostics: SolverDiagnostics
    weight_state: object = None
    t_pilot: np.ndarray | None = None  # set when c2 was built from a pilot fit

    @property
    def gamma(self) -> int:
        return self.family.gamma

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "b_hat": self.b_hat.tolist(),
            "r_hat": self.r_hat.tolist(),
            "t_hat": self.t_hat.tolist(),
            "t_pilot": None if self.t_pilot is None else self.t_pilot.tolist(),
            "models": self.models.to_dict(),
            "solver": {"b_r": self.br_diagnostics.to_dict(), "t": self.t_diagnostics.to_dict()},
            "ace_weight": None if self.weight_state is None else {
                "cycles": self.weight_state.cycles, "converged": self.weight_state.converged},
        }


# --------------------------------------------------------------------------
# (b, r)
# --------------------------------------------------------------------------

def _block_rank(mat) -> int:
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(s > s[0] / COND_LIMIT)) if s[0] > 0 else 0


def _check_identified(G, dim_b):
    s = np.linalg.svd(G, compute_uv=False)
    if s.size and s[0] > 0 and s[-1] > s[0] / COND_LIMIT:
        return
    if _block_rank(G[:dim_b]) < dim_b:
        raise IdentificationError("outcome-bridge moment block (c0) is rank deficient", block="c0")
    if _block_rank(G[dim_b:]) < G.shape[0] - dim_b:
        raise IdentificationError("residual-model moment block (c1) is rank deficient", block="c1")
    raise IdentificationError("stacked (b, r) moment system is singular", block="b_r")


def fit_b_r(data: ObservedData, h: OutcomeBridge, l: ResidualModel, instruments: InstrumentVectors,
            method: str = "direct"):
    """Solve the stacked outcome-bridge and residual-model equations.

    Both models are linear in their coefficients, so the system is square
    and linear; ``method="newton"`` runs damped Newton on the same moments
    as a cross-check.

    Returns
    -------
    b_hat, r_hat, diagnostics
    """
    C = np.column_stack([instruments.c0, instruments.c1])
    D = np.column_stack([h.gradient(data), l.gradient(data)])
    if C.shape[1] != D.shape[1]:
        raise IdentificationError(
            f"{instruments.c0.shape[1]} + {instruments.c1.shape[1]} instruments for "
            f"{h.dim} + {l.dim} coefficients", block="dimensions")
    n = data.n
    G = C.T @ D / n
    rhs = C.T @ data.y / n
    _check_identified(G, h.dim)
    scale = float(np.linalg.norm(np.mean(np.abs(C * data.y[:, None]), axis=0)))

    def moments(theta):
        return rhs - G @ theta

    if method == "direct":
        theta = np.linalg.solve(G, rhs)
        iters, trace = 1, []
    elif method == "newton":
        theta = np.zeros(D.shape[1])
        trace = []
        for iters in range(1, MAX_NEWTON + 1):
            F = moments(theta)
            trace.append(float(np.linalg.norm(F)))
            if trace[-1] <= NEWTON_TOL * 1e-2 * (1 + scale):
                break
            step = np.linalg.solve(G, F)
            theta = _backtrack(lambda th: np.linalg.norm(moments(th)), theta, step, trace[-1])
        else:
            raise NonConvergenceError("(b, r) Newton iterations exhausted", residual_norm=trace[-1],
                                      iterations=MAX_NEWTON)
    else:
        raise DomainError(f"unknown method {method!r}")
    res = float(np.linalg.norm(moments(theta)))
    diag = SolverDiagnostics(res, iters, res <= LINEAR_TOL * (1 + scale) or method == "newton", scale, method, trace)
    return theta[:h.dim], theta[h.dim:], diag


def _backtrack(norm_fn, x, step, f0):
    lam = 1.0
    for _ in range(MAX_HALVINGS + 1):
        cand = x + lam * step
        val = norm_fn(cand)
        if np.isfinite(val) and val < f0:
            return cand
        lam *= 0.5
    raise NonConvergenceError("line search failed to reduce the moment norm", residual_norm=f0)


# --------------------------------------------------------------------------
# t
# --------------------------------------------------------------------------

def _signed(data):
    return 2.0 * data.a - 1.0


class _WeightEquation:
    """Moment map t -> P_n[c2 d(s q(t)) - c2(1) + c2(0)] with batched projections."""

    def __init__(self, data, q: TreatmentBridge, instruments, projector, ace: AceConfig, project: bool):
        self.data, self.q, self.inst = data, q, instruments
        self.projector, self.ace, self.project_weight = projector, ace, project
        self.sign = _signed(data)
        self.contrast = np.mean(instruments.c2_a1 - instruments.c2_a0, axis=0)
        self.scale_contrast = float(np.linalg.norm(np.mean(np.abs(instruments.c2_a1 - instruments.c2_a0), axis=0)))

    def weights(self, ts):
        """Projected weights for each row of ``ts`` (k x dim t); returns (n x k) and state."""
        raw = np.column_stack([self.sign * self.q.evaluate(t, self.data) for t in ts])
        if not self.project_weight:
            return raw, None
        return self.projector.project(raw, tol=self.ace.tol, max_cycles=self.ace.max_cycles, record_trace=False)

    def moments_from(self, d):
        return self.inst.c2.T @ d / self.data.n - self.contrast[:, None]

    def __call__(self, t):
        d, state = self.weights([t])
        return self.moments_from(d)[:, 0], d[:, 0], state

    def scale(self, d):
        return float(np.linalg.norm(np.mean(np.abs(self.inst.c2 * d[:, None]), axis=0))) + self.scale_contrast

    def jacobian(self, t):
        steps = 1e-5 * np.maximum(np.abs(t), 1.0)
        pts = []
        for j in range(t.size):
            e = np.zeros(t.size)
            e[j] = steps[j]
            pts.extend([t + e, t - e])
        d, _ = self.weights(pts)
        F = self.moments_from(d)
        return (F[:, 0::2] - F[:, 1::2]) / (2.0 * steps)


def _check_jacobian(J):
    s = np.linalg.svd(J, compute_uv=False)
    if s[0] == 0 or s[-1] < s[0] / COND_LIMIT:
        raise IdentificationError("treatment-bridge Jacobian is singular; check the c2 instruments", block="t")


def _newton(eq: _WeightEquation, t, method="newton-fd"):
    """Damped Newton from ``t``; returns (t, diag, d, J, state) or raises NonConvergenceError."""
    F, d, state = eq(t)
    trace = [float(np.linalg.norm(F))]
    for it in range(1, MAX_NEWTON + 1):
        tol = NEWTON_TOL * (1.0 + eq.scale(d))
        J = eq.jacobian(t)
        if trace[-1] <= tol:
            return t, SolverDiagnostics(trace[-1], it - 1, True, eq.scale(d), method, trace), d, J, state
        # minimum-norm step: at t = 0 the intercept and treatment columns of
        # the weight derivative coincide after projection
        step = np.linalg.lstsq(J, -F, rcond=1e-10)[0]
        lam, f0 = 1.0, trace[-1]
        for _ in range(MAX_HALVINGS + 1):
            cand = t + lam * step
            F_new, d_new, st_new = eq(cand)
            val = float(np.linalg.norm(F_new))
            if np.isfinite(val) and val < f0:
                break
            lam *= 0.5
        else:
            if f0 <= 10 * tol:
                # stalled at the noise floor of the projection
                return t, SolverDiagnostics(f0, it, True, eq.scale(d), method, trace), d, J, state
            err = NonConvergenceError("treatment-bridge line search failed", residual_norm=f0, iterations=it)
            err.t, err.jacobian = t, J
            raise err
        t, F, d, state = cand, F_new, d_new, st_new
        trace.append(val)
    err = NonConvergenceError("treatment-bridge Newton iterations exhausted", residual_norm=trace[-1],
                              iterations=MAX_NEWTON)
    err.t, err.jacobian = t, eq.jacobian(t)
    raise err


def fit_t(data: ObservedData, q: TreatmentBridge, instruments: InstrumentVectors, family,
          ace: AceConfig | None = None, project: bool = True, t0=None, on_no_root: str = "raise"):
    """Damped Newton solve of the treatment-bridge equation, starting at t = 0.

    ``family`` may be a ``SubsetFamily`` or a prebuilt ``AceProjector``. The
    weight is re-projected at every evaluation and the Jacobian uses central
    differences with step 1e-5 * max(|t_j|, 1). When the Newton path stalls
    at a local minimum of the moment norm, a Levenberg-Marquardt search from
    the same start is tried and its end point polished by Newton; if neither
    reaches a root a ``NonConvergenceError`` is raised, unless
    ``on_no_root="minimize"``, in which case the Levenberg-Marquardt
    least-squares point is returned with ``converged=False``.

    Returns
    -------
    t_hat, diagnostics, weight, jacobian, weight_state
    """
    ace = ace or AceConfig()
    projector = family if isinstance(family, AceProjector) else AceProjector(data, family, ace.basis)
    if instruments.c2.shape[1] != q.dim:
        raise IdentificationError(f"{instruments.c2.shape[1]} c2 instruments for dim(t) = {q.dim}", block="t")
    eq = _WeightEquation(data, q, instruments, projector, ace, project)
    start = np.zeros(q.dim) if t0 is None else np.asarray(t0, dtype=float).copy()
    try:
        out = _newton(eq, start)
    except NonConvergenceError as first:
        lm = least_squares(lambda t: eq(t)[0], start, jac=eq.jacobian, method="lm",
                           xtol=1e-12, ftol=1e-12, max_nfev=50 * (q.dim + 1))
        try:
            out = _newton(eq, lm.x, method="lm+newton-fd")
        except NonConvergenceError:
            if on_no_root != "minimize":
                raise first from None
            F, d, state = eq(lm.x)
            res = float(np.linalg.norm(F))
            log.warning("treatment-bridge equation has no root near the start; using the "
                        "least-squares point with residual norm %.3g", res)
            diag = SolverDiagnostics(res, int(lm.nfev), False, eq.scale(d), "lm-minimize",
                                     [float(first.residual_norm), res])
            out = (lm.x, diag, d, eq.jacobian(lm.x), state)
        else:
            out[1].trace[:0] = [float(first.residual_norm)]
    if out[1].converged:
        _check_jacobian(out[3])
    # iterates may clamp freely; only the returned point is worth a warning
    if q.evaluate(out[0], data, return_clamped=True)[1]:
        log.warning("treatment bridge index exceeds +/-%g at the fitted t; clamped", q.cap)
    return out


# --------------------------------------------------------------------------
# full nuisance fit
# --------------------------------------------------------------------------

def fit_nuisances(data: ObservedData, spec: ModelSpec | None = None) -> NuisanceFit:
    spec = spec or ModelSpec()
    models = spec.resolve(data)
    family = enumerate_subsets(data.k, spec.gamma)
    projector = AceProjector(data, family, spec.ace.basis)
    inst = build_instruments(models, data, projector, spec.ace)
    b, r, br_diag = fit_b_r(data, models.h, models.l, inst)
    pilot = None
    if models.c2_efficient:
        # pilot from the unprojected equation with the fixed basis: better
        # conditioned, and only the direction of the instruments depends on it
        pilot = fit_t(data, models.q, inst, projector, spec.ace, project=False, on_no_root="minimize")[0]
        inst = efficient_c2(inst, models.q, pilot, data, projector, spec.ace, project=models.project_weight)
    t, t_diag, d, J, state = fit_t(data, models.q, inst, projector, spec.ace, project=models.project_weight,
                                   on_no_root=spec.t_no_root)
    return NuisanceFit(
        models=models, family=family, projector=projector, ace=spec.ace, instruments=inst,
        b_hat=b, r_hat=r, t_hat=t, weight=d, jacobian_t=J,
        br_diagnostics=br_diag, t_diagnostics=t_diag, weight_state=state, t_pilot=pilot,
    )


def _contrast(data, fits):
    h = fits.models.h
    return h.evaluate(fits.b_hat, data, a=1.0) - h.evaluate(fits.b_hat, data, a=0.0)


def _residual(data, fits):
    return data.y - fits.models.h.evaluate(fits.b_hat, data) - fits.models.l.evaluate(fits.r_hat, data)


def _diag(fits):
    return {
        "converged": bool(fits.br_diagnostics.converged and fits.t_diagnostics.converged),
        "b_hat": fits.b_hat.tolist(),
        "r_hat": fits.r_hat.tolist(),
        "t_hat": fits.t_hat.tolist(),
        "solver": {"b_r": fits.br_diagnostics.to_dict(), "t": fits.t_diagnostics.to_dict()},
    }


def _br_influence(data, fits):
    """Per-row influence of (b, r) holding the instruments fixed: G^{-1} C_i e_i."""
    C = np.column_stack([fits.instruments.c0, fits.instruments.c1])
    D = np.column_stack([fits.models.h.gradient(data), fits.models.l.gradient(data)])
    G = C.T @ D / data.n
    psi = C * _residual(data, fits)[:, None]
    return np.linalg.solve(G, psi.T).T


def _t_influence(data, fits):
    """Per-row influence of t holding the projection basis fixed: -J^{-1} m_i."""
    inst = fits.instruments
    m = inst.c2 * fits.weight[:, None] - (inst.c2_a1 - inst.c2_a0)
    if fits.t_diagnostics.converged:
        return -np.linalg.solve(fits.jacobian_t, m.T).T
    # least-squares point: the Jacobian may be numerically singular
    return -(np.linalg.pinv(fits.jacobian_t) @ m.T).T


def _weight_gradient(data, fits):
    """d(weight)/dt on the sample: the projection is linear in its input."""
    g = _signed(data)[:, None] * fits.models.q.gradient(fits.t_hat, data)
    if not fits.models.project_weight:
        return g
    out, _ = fits.projector.project(g, tol=fits.ace.tol, max_cycles=fits.ace.max_cycles, record_trace=False)
    return out


def _se(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(np.sqrt(np.mean(np.square(values)) / values.size))


def estimate_fpor(data: ObservedData, fits: NuisanceFit, se: bool = True, level: float = 0.95) -> EstimateResult:
    """Mean counterfactual contrast of the fitted outcome bridge.

    The standard error stacks the (b, r) equations with the contrast,
    treating the projected instruments as fixed.
    """
    contrast = _contrast(data, fits)
    tau = float(np.mean(contrast))
    res = EstimateResult("fPOR", tau, gamma=fits.gamma, diagnostics=_diag(fits))
    if se:
        h = fits.models.h
        grad = np.mean(h.gradient(data, a=1.0) - h.gradient(data, a=0.0), axis=0)
        infl = (contrast - tau) + _br_influence(data, fits)[:, :h.dim] @ grad
        res = res.with_se(_se(infl), "sandwich", level)
    return res


def estimate_fpipw(data: ObservedData, fits: NuisanceFit, family=None, ace_config=None, se: bool = True,
                   level: float = 0.95) -> EstimateResult:
    """Mean of the projected signed weight times the outcome.

    The standard error stacks the t equation with the weighted mean. The
    weight is orthogonal in-sample to every regression it was projected
    against, so the mean equals that of d times the projected outcome P(Y);
    using P(Y) in the influence values accounts for the estimated projection
    to first order.
    """
    vals = fits.weight * data.y
    tau = float(np.mean(vals))
    res = EstimateResult("fPIPW", tau, gamma=fits.gamma, diagnostics=_diag(fits))
    if se:
        y = data.y
        if fits.models.project_weight:
            y = fits.projector.project(y, tol=fits.ace.tol, max_cycles=fits.ace.max_cycles, record_trace=False)[0]
        grad = _weight_gradient(data, fits).T @ y / data.n
        infl = (fits.weight * y - tau) + _t_influence(data, fits) @ grad
        res = res.with_se(_se(infl), "sandwich", level)
    return res


def influence_function(data: ObservedData, fits: NuisanceFit, tau: float | None = None) -> np.ndarray:
    """h(1) - h(0) + d(s q) (Y - h - l) - tau at the fitted nuisances.

    With ``tau`` omitted the fPMR estimate is used, making the sample mean
    zero by construction.
    """
    vals = _contrast(data, fits) + fits.weight * _residual(data, fits)
    if tau is None:
        tau = float(np.mean(vals))
    return vals - tau


def influence_values(h1, h0, weight, residual, tau) -> np.ndarray:
    """Influence-function values from already evaluated components."""
    return np.asarray(h1) - np.asarray(h0) + np.asarray(weight) * np.asarray(residual) - tau


def if_variance(data: ObservedData, fits: NuisanceFit, family=None, ace_config=None,
                tau: float | None = None) -> float:
    """Variance of the fPMR estimate: empirical second moment of the influence function over n."""
    infl = influence_function(data, fits, tau)
    return float(np.mean(np.square(infl)) / data.n)


def estimate_fpmr(data: ObservedData, fits: NuisanceFit, family=None, ace_config=None, se: bool = True,
                  level: float = 0.95) -> EstimateResult:
    vals = _contrast(data, fits) + fits.weight * _residual(data, fits)
    tau = float(np.mean(vals))
    res = EstimateResult("fPMR", tau, gamma=fits.gamma, diagnostics=_diag(fits))
    if se:
        res = res.with_se(float(np.sqrt(if_variance(data, fits, tau=tau))), "influence", level)
    return res


def _pdr_spec(spec: ModelSpec | None) -> ModelSpec:
    spec = spec or ModelSpec()
    # explicit term lists refer to the undemoted layout, so defaults are rebuilt;
    # with an invalid proxy the classical treatment-bridge equation typically
    # has no root, so the least-squares point is kept
    return replace(spec, gamma=1, h_terms=None, l_terms=None, q_terms=None, c2_terms=None,
                   t_no_root="minimize")


def estimate_pdr(data: ObservedData, valid_index: int, spec: ModelSpec | None = None, se: bool = True,
                 level: float = 0.95) -> EstimateResult:
    """Conventional proximal doubly robust estimate trusting proxy ``valid_index`` (1-based).

    The other proxies join the covariates and the fortified pipeline runs
    with K = gamma = 1.
    """
    if not 1 <= int(valid_index) <= data.k:
        raise ProxyIndexError(f"valid_index {valid_index} out of range 1..{data.k}")
    reduced = demote_proxies(data, [valid_index])
    fits = fit_nuisances(reduced, _pdr_spec(spec))
    res = estimate_fpmr(reduced, fits, se=se, level=level)
    res.diagnostics["valid_index"] = int(valid_index)
    return replace(res, method="PDR", label=f"PDR{int(valid_index)}")


# --------------------------------------------------------------------------
# standard AIPW comparator
# --------------------------------------------------------------------------

def _logistic_fit(design, a):
    import statsmodels.api as sm
    from statsmodels.tools.sm_exceptions import PerfectSeparationError, PerfectSeparationWarning

    with warnings.catch_warnings():
        warnings.simplefilter("error", PerfectSeparationWarning)
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            fit = sm.Logit(a, design).fit(disp=0, maxiter=100)
        except (PerfectSeparationError, PerfectSeparationWarning, np.linalg.LinAlgError) as exc:
            raise PropensityFitError(f"logistic propensity fit failed: {exc}") from None
    if not fit.mle_retvals.get("converged", False):
        raise PropensityFitError("logistic propensity fit did not converge")
    return fit.params


def estimate_dr(data: ObservedData, clip=(0.01, 0.99), se: bool = True, level: float = 0.95) -> EstimateResult:
    """AIPW with a linear outcome model on (1, L, A) and a logistic propensity on (1, L), L = (X, Z, W)."""
    L = np.column_stack([np.ones(data.n), data.x, data.z, data.w])
    out_design = np.column_stack([L, data.a])
    coef, *_ = np.linalg.lstsq(out_design, data.y, rcond=None)
    if np.linalg.matrix_rank(out_design) < out_design.shape[1]:
        raise IdentificationError("outcome regression design is rank deficient", block="outcome")
    mu1 = L @ coef[:-1] + coef[-1]
    mu0 = L @ coef[:-1]
    params = _logistic_fit(L, data.a)
    ps = 1.0 / (1.0 + np.exp(-(L @ params)))
    clipped = bool(np.any((ps < clip[0]) | (ps > clip[1])))
    if clipped:
        log.warning("propensity scores clipped to [%g, %g]", *clip)
    ps = np.clip(ps, *clip)
    a, y = data.a, data.y
    vals = mu1 - mu0 + a * (y - mu1) / ps - (1 - a) * (y - mu0) / (1 - ps)
    tau = float(np.mean(vals))
    res = EstimateResult("DR", tau, diagnostics={"propensity_clipped": clipped, "outcome_coef": coef.tolist()})
    if se:
        res = res.with_se(_se(vals - tau), "influence", level)
    return res


# --------------------------------------------------------------------------
# picklable estimator bundles for replicated studies and the CLI
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FortifiedEstimators:
    """Fits the nuisances once and returns the requested fortified estimates."""

    spec: ModelSpec = field(default_factory=ModelSpec)
    methods: tuple = ("fPOR", "fPIPW", "fPMR")
    suffix: str = ""

    @property
    def labels(self):
        return tuple(m + self.suffix for m in self.methods)

    def __call__(self, data: ObservedData) -> dict:
        fits = fit_nuisances(data, self.spec)
        out = {}
        for m in self.methods:
            fn = {"fPOR": estimate_fpor, "fPIPW": estimate_fpipw, "fPMR": estimate_fpmr}[m]
            res = fn(data, fits)
            out[m + self.suffix] = replace(res, label=m + self.suffix)
        return out


@dataclass(frozen=True)
class PdrEstimator:
    valid_index: int
    spec: ModelSpec = field(default_factory=ModelSpec)

    @property
    def labels(self):
        return (f"PDR{self.valid_index}",)

    def __call__(self, data: ObservedData) -> EstimateResult:
        return estimate_pdr(data, self.valid_index, self.spec)


@dataclass(frozen=True)
class DrEstimator:
    labels = ("DR",)

    def __call__(self, data: ObservedData) -> EstimateResult:
        return estimate_dr(data)


def estimator_set(methods: Sequence[str], spec: ModelSpec, k: int) -> dict:
    """Build named estimator callables from method tags.

    ``PDR`` expands to one comparator per proxy; ``PDRj`` picks proxy j.
    """
    out = {}
    fortified = [m for m in methods if m in ("fPOR", "fPIPW", "fPMR")]
    if fortified:
        out["fortified"] = FortifiedEstimators(spec, tuple(fortified))
    for m in methods:
        if m in ("fPOR", "fPIPW", "fPMR"):
            continue
        if m == "DR":
            out["DR"] = DrEstimator()
        elif m == "PDR":
            for j in range(1, k + 1):
                out[f"PDR{j}"] = PdrEstimator(j, spec)
        elif m.startswith("PDR") and m[3:].isdigit():
            j = int(m[3:])
            if not 1 <= j <= k:
                raise ProxyIndexError(f"{m}: proxy index out of range 1..{k}")
            out[m] = PdrEstimator(j, spec)
        else:
            raise DomainError(f"unknown method {m!r}; expected fPOR, fPIPW, fPMR, PDR, PDRj or DR")
    return out
