"""Parametric bridge working models and the instruments for their estimating equations.

Three models are linear (or log-linear) in their coefficients:

* outcome bridge ``h(W, A, X; b) = sum_k b_k T_k(W, A, X)``, every term
  carrying an A or W factor so that h(0, 0, X) = 0;
* residual model ``l(Z, X; r) = sum_k r_k T_k(Z, X)``, every term touching at
  most K - gamma proxies so l stays in the closed sum of L2(Z_{-nu}, X);
* treatment bridge ``q(Z, A, X; t) = 1 + exp(sum_k t_k T_k(Z, A, X))``, with
  an optional sign variant exp((-1)^{1-A} * index).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import BasisDeficiencyError, ConstraintError, DomainError, ShapeError
from .projection import AceConfig, AceProjector, AceWorkingModel
from .terms import Factor, Term, design, labels, parse_term, parse_terms

log = logging.getLogger(__name__)

EXP_CAP = 50.0
SCENARIOS = ("none", "I", "II", "III")


def _coef(v, dim, what):
    v = np.asarray(v, dtype=float).ravel()
    if v.shape[0] != dim:
        raise ShapeError(f"{what} has {v.shape[0]} coefficients, model has {dim} terms")
    return v


@dataclass(frozen=True)
class OutcomeBridge:
    terms: tuple

    def __post_init__(self):
        terms = parse_terms(self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise ConstraintError("outcome bridge needs at least one term")
        for t in terms:
            if t.involves("Z"):
                raise ConstraintError(f"outcome bridge term {t} may not use Z")
            if not (t.involves("A") or t.involves("W")):
                raise ConstraintError(
                    f"outcome bridge term {t} must contain an A or W factor (no intercept or X-only terms)"
                )

    @property
    def dim(self) -> int:
        return len(self.terms)

    def gradient(self, data, a=None) -> np.ndarray:
        return design(self.terms, data, a=a)

    def evaluate(self, b, data, a=None) -> np.ndarray:
        return self.gradient(data, a) @ _coef(b, self.dim, "b")

    def to_dict(self) -> dict:
        return {"terms": labels(self.terms)}


@dataclass(frozen=True)
class ResidualModel:
    terms: tuple
    gamma: int
    k: int

    def __post_init__(self):
        terms = parse_terms(self.terms)
        object.__setattr__(self, "terms", terms)
        if not 1 <= self.gamma <= self.k:
            raise DomainError(f"need 1 <= gamma <= K, got gamma={self.gamma}, K={self.k}")
        limit = self.k - self.gamma
        for t in terms:
            if t.involves("A") or t.involves("W"):
                raise ConstraintError(f"residual model term {t} may only use Z and X")
            bad = [j for j in t.z_support if j > self.k]
            if bad:
                raise ConstraintError(f"residual model term {t} refers to Z{bad[0]} but K={self.k}")
            if len(t.z_support) > limit:
                raise ConstraintError(
                    f"residual model term {t} touches {len(t.z_support)} proxies; at most K - gamma = {limit} allowed"
                )

    @property
    def dim(self) -> int:
        return len(self.terms)

    def gradient(self, data) -> np.ndarray:
        return design(self.terms, data)

    def evaluate(self, r, data) -> np.ndarray:
        return self.gradient(data) @ _coef(r, self.dim, "r")

    def to_dict(self) -> dict:
        return {"terms": labels(self.terms), "gamma": self.gamma, "k": self.k}


@dataclass(frozen=True)
class TreatmentBridge:
    terms: tuple
    sign_variant: bool = False
    cap: float = EXP_CAP

    def __post_init__(self):
        terms = parse_terms(self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise ConstraintError("treatment bridge needs at least one term")
        for t in terms:
            if t.involves("W"):
                raise ConstraintError(f"treatment bridge term {t} may not use W")

    @property
    def dim(self) -> int:
        return len(self.terms)

    def _index(self, t, data, a):
        dmat = design(self.terms, data, a=a)
        eta = dmat @ _coef(t, self.dim, "t")
        aa = data.a if a is None else np.broadcast_to(np.asarray(a, dtype=float), (data.n,))
        sign = 2.0 * aa - 1.0 if self.sign_variant else np.ones(data.n)
        return dmat, sign * eta, sign

    def evaluate(self, t, data, a=None, return_clamped: bool = False):
        _, eta, _ = self._index(t, data, a)
        clamped = bool(np.any(np.abs(eta) > self.cap))
        if clamped:
            log.debug("treatment bridge index exceeds +/-%g; clamped", self.cap)
        q = 1.0 + np.exp(np.clip(eta, -self.cap, self.cap))
        return (q, clamped) if return_clamped else q

    def gradient(self, t, data, a=None) -> np.ndarray:
        dmat, eta, sign = self._index(t, data, a)
        inside = np.abs(eta) <= self.cap
        scale = sign * np.exp(np.clip(eta, -self.cap, self.cap)) * inside
        return dmat * scale[:, None]

    def to_dict(self) -> dict:
        return {"terms": labels(self.terms), "sign_variant": self.sign_variant, "cap": self.cap}


def eval_h(b, data, a_override=None, model: OutcomeBridge | None = None) -> np.ndarray:
    model = model or OutcomeBridge(default_h_terms(data.d_w))
    return model.evaluate(b, data, a=a_override)


def eval_l(r, data, gamma: int, model: ResidualModel | None = None) -> np.ndarray:
    model = model or ResidualModel(default_l_terms(data.k, data.p, gamma), gamma, data.k)
    return model.evaluate(r, data)


def eval_q(t, data, a_override=None, model: TreatmentBridge | None = None, return_clamped: bool = False):
    model = model or TreatmentBridge(default_q_terms(data.k, data.p))
    return model.evaluate(t, data, a=a_override, return_clamped=return_clamped)


# --------------------------------------------------------------------------
# default term sets
# --------------------------------------------------------------------------

def default_h_terms(d_w: int) -> list:
    return ["A"] + [f"W{j}" for j in range(1, d_w + 1)]


def default_l_terms(k: int, p: int, gamma: int) -> list:
    z = [f"Z{j}" for j in range(1, k + 1)] if gamma < k else []
    return ["1"] + z + [f"X{j}" for j in range(1, p + 1)]


def default_q_terms(k: int, p: int) -> list:
    return ["1"] + [f"Z{j}" for j in range(1, k + 1)] + ["A"] + [f"X{j}" for j in range(1, p + 1)]


def default_c2_terms(d_w: int, p: int, dim: int) -> list:
    """Default instruments for the treatment-bridge equation, truncated to ``dim``.

    Functions of X alone are excluded: they contribute an identically zero
    equation because every projected weight has mean zero given X and the
    counterfactual difference of such a function vanishes.
    """
    w = [f"W{j}" for j in range(1, d_w + 1)]
    x = [f"X{k}" for k in range(1, p + 1)]
    pool = ["A"] + w + [f"A*{v}" for v in w] + [f"A*{v}" for v in x]
    pool += [f"{v}^2" for v in w] + [f"{v}*{u}" for v in w for u in x] + [f"A*{v}^2" for v in w]
    pool += [f"A*{v}*{u}" for v in w for u in x]
    pool += [f"{w[i]}*{w[j]}" for i in range(len(w)) for j in range(i + 1, len(w))]
    pool += [f"A*{w[i]}*{w[j]}" for i in range(len(w)) for j in range(i + 1, len(w))]
    pool += [f"A*{x[i]}*{x[j]}" if i != j else f"A*{x[i]}^2" for i in range(len(x)) for j in range(i, len(x))]
    if len(pool) < dim:
        raise BasisDeficiencyError(
            f"default treatment-bridge instrument basis has {len(pool)} functions but dim(t) = {dim}; "
            "supply c2 terms explicitly"
        )
    return pool[:dim]


# --------------------------------------------------------------------------
# scenario rewrites: they change model inputs only, never the data
# --------------------------------------------------------------------------

def _scale_w_by_root_abs_x(f: Factor):
    return [f, Factor("X", 1, 0.5, True)]


def _square_z(f: Factor):
    return [Factor("Z", f.index, 2.0 * f.power, f.absolute)]


def _z_times_x(f: Factor):
    return [f, Factor("X", 1)]


def _rewrite(terms, var, rule):
    return [parse_term(t).substitute(var, rule).label for t in terms]


# --------------------------------------------------------------------------
# model specification
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Working-model choices for one analysis; ``None`` term lists mean defaults.

    ``scenario`` rewrites the resolved term lists: ``"I"`` replaces each W
    factor in h by W*|X1|^0.5; ``"II"`` replaces Z factors by Z^2 in l and by
    Z*X1 in q; ``"III"`` does the q rewrite and skips the projection of the
    treatment-bridge weight. Without ``c2_terms``, ``c2_default`` picks the
    treatment-bridge instruments: ``"efficient"`` predicts the weight
    gradient at a pilot fit from (W, A, X), ``"fixed"`` uses the default
    term list directly. ``t_no_root`` chooses what happens when the
    treatment-bridge equation has no root: ``"raise"`` or ``"minimize"``
    (keep the least-squares point, flagged as not converged).
    """

    gamma: int = 1
    h_terms: tuple | None = None
    l_terms: tuple | None = None
    q_terms: tuple | None = None
    c2_terms: tuple | None = None
    q_sign_variant: bool = False
    project_weight: bool = True
    scenario: str = "none"
    ace: AceConfig = field(default_factory=AceConfig)
    t_no_root: str = "raise"
    c2_default: str = "efficient"

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DomainError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.t_no_root not in ("raise", "minimize"):
            raise DomainError(f"t_no_root must be 'raise' or 'minimize', got {self.t_no_root!r}")
        if self.c2_default not in ("efficient", "fixed"):
            raise DomainError(f"c2_default must be 'efficient' or 'fixed', got {self.c2_default!r}")
        for name in ("h_terms", "l_terms", "q_terms", "c2_terms"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(v))

    def with_gamma(self, gamma: int) -> "ModelSpec":
        return replace(self, gamma=gamma)

    def resolve(self, data) -> "ResolvedModels":
        if not 1 <= self.gamma <= data.k:
            raise DomainError(f"gamma={self.gamma} is outside 1..K={data.k}")
        h_terms = list(self.h_terms) if self.h_terms is not None else default_h_terms(data.d_w)
        l_terms = list(self.l_terms) if self.l_terms is not None else default_l_terms(data.k, data.p, self.gamma)
        q_terms = list(self.q_terms) if self.q_terms is not None else default_q_terms(data.k, data.p)
        project_weight = self.project_weight
        if self.scenario != "none" and data.p < 1:
            raise DomainError(f"scenario {self.scenario} needs at least one covariate column")
        if self.scenario == "I":
            h_terms = _rewrite(h_terms, "W", _scale_w_by_root_abs_x)
        elif self.scenario == "II":
            l_terms = _rewrite(l_terms, "Z", _square_z)
            q_terms = _rewrite(q_terms, "Z", _z_times_x)
        elif self.scenario == "III":
            q_terms = _rewrite(q_terms, "Z", _z_times_x)
            project_weight = False
        h = OutcomeBridge(tuple(h_terms))
        l = ResidualModel(tuple(l_terms), self.gamma, data.k)
        q = TreatmentBridge(tuple(q_terms), sign_variant=self.q_sign_variant)
        c2 = parse_terms(self.c2_terms if self.c2_terms is not None else default_c2_terms(data.d_w, data.p, q.dim))
        if len(c2) != q.dim:
            raise ShapeError(f"{len(c2)} c2 terms supplied for dim(t) = {q.dim}")
        for t in c2:
            if t.involves("Z"):
                raise ConstraintError(f"c2 term {t} may only use W, A and X")
        return ResolvedModels(h=h, l=l, q=q, c2=c2, gamma=self.gamma, project_weight=project_weight,
                              c2_efficient=self.c2_terms is None and self.c2_default == "efficient")

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "h_terms": None if self.h_terms is None else list(self.h_terms),
            "l_terms": None if self.l_terms is None else list(self.l_terms),
            "q_terms": None if self.q_terms is None else list(self.q_terms),
            "c2_terms": None if self.c2_terms is None else list(self.c2_terms),
            "q_sign_variant": self.q_sign_variant,
            "project_weight": self.project_weight,
            "scenario": self.scenario,
            "ace": self.ace.to_dict(),
            "t_no_root": self.t_no_root,
            "c2_default": self.c2_default,
        }


@dataclass(frozen=True)
class ResolvedModels:
    h: OutcomeBridge
    l: ResidualModel
    q: TreatmentBridge
    c2: tuple
    gamma: int
    project_weight: bool = True
    c2_efficient: bool = False

    def to_dict(self) -> dict:
        return {
            "h": self.h.to_dict(),
            "l": self.l.to_dict(),
            "q": self.q.to_dict(),
            "c2": labels(self.c2),
            "c2_efficient": self.c2_efficient,
            "project_weight": self.project_weight,
        }


# --------------------------------------------------------------------------
# instruments
# --------------------------------------------------------------------------

def treatment_prediction_basis(data) -> np.ndarray:
    """Second-order regressors in (A, Z, X) for predicting W-dependent gradients.

    Columns: 1, A, Z, X, A*Z, A*X, Z_i*Z_j (i <= j), Z_j*X_k and X_k^2.
    Cross products X_i*X_k are left out so the width stays moderate when p
    is large.
    """
    a = data.a[:, None]
    z, x = data.z, data.x
    cols = [np.ones((data.n, 1)), a, z, x, a * z, a * x]
    iu = np.triu_indices(z.shape[1])
    cols.append(z[:, iu[0]] * z[:, iu[1]])
    if x.shape[1]:
        cols.append((z[:, :, None] * x[:, None, :]).reshape(data.n, -1))
        cols.append(x ** 2)
    return np.column_stack(cols)


def outcome_side_basis(data, a=None) -> np.ndarray:
    """Second-order regressors in (W, X), repeated once multiplied by A.

    Block columns: 1, W, X, W_i*W_j (i <= j), W_j*X_k and X_k^2. ``a``
    fixes the treatment (for counterfactual evaluation); by default the
    observed A is used.
    """
    a = data.a if a is None else np.full(data.n, float(a))
    w, x = data.w, data.x
    iu = np.triu_indices(w.shape[1])
    block = np.column_stack([
        np.ones(data.n), w, x, w[:, iu[0]] * w[:, iu[1]],
        (w[:, :, None] * x[:, None, :]).reshape(data.n, -1), x ** 2,
    ])
    return np.column_stack([block, a[:, None] * block])


@dataclass
class InstrumentVectors:
    """Instrument matrices evaluated on the sample.

    c0 : (n, dim b) projected directions for the outcome-bridge equations
    c1 : (n, dim r) residual-model gradient
    c2, c2_a1, c2_a0 : (n, dim t) treatment-bridge instruments at the
        observed treatment and at A = 1 and A = 0
    """

    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c2_a1: np.ndarray
    c2_a0: np.ndarray
    c0_raw: np.ndarray
    c0_state: AceWorkingModel | None = None
    c2_labels: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dim_c0": int(self.c0.shape[1]),
            "dim_c1": int(self.c1.shape[1]),
            "dim_c2": int(self.c2.shape[1]),
            "c2_terms": self.c2_labels,
            "c0_ace": None if self.c0_state is None else self.c0_state.to_dict(),
        }


def build_instruments(models: ResolvedModels, data, projector: AceProjector, ace: AceConfig | None = None
                      ) -> InstrumentVectors:
    """Construct c0, c1 and c2.

    c0 projects into H_gamma the least-squares prediction of dh/db from
    (Z, A, X); columns that are already functions of (Z, A, X) are unchanged
    by the prediction. c1 is dl/dr. c2 evaluates the c2 term list.
    """
    ace = ace or AceConfig()
    grad_h = models.h.gradient(data)
    basis = treatment_prediction_basis(data)
    coef, *_ = np.linalg.lstsq(basis, grad_h, rcond=None)
    c0_raw = basis @ coef
    c0, state = projector.project(c0_raw, tol=ace.tol, max_cycles=ace.max_cycles, record_trace=False)
    c1 = models.l.gradient(data)
    return InstrumentVectors(
        c0=c0,
        c1=c1,
        c2=design(models.c2, data),
        c2_a1=design(models.c2, data, a=1.0),
        c2_a0=design(models.c2, data, a=0.0),
        c0_raw=c0_raw,
        c0_state=state,
        c2_labels=labels(models.c2),
    )


def efficient_c2(instruments: InstrumentVectors, q: TreatmentBridge, t_pilot, data, projector: AceProjector,
                 ace: AceConfig | None = None, project: bool = True) -> InstrumentVectors:
    """Swap c2 for the (W, A, X) prediction of the weight gradient at ``t_pilot``.

    The treatment-bridge equation says E[d(t) | W, A, X] equals the signed
    inverse propensity, so the best instruments are E[dd/dt | W, A, X]. They
    are estimated by least squares on ``outcome_side_basis``; c2(W, 1, X)
    and c2(W, 0, X) follow from the same coefficients.
    """
    ace = ace or AceConfig()
    grad = (2.0 * data.a - 1.0)[:, None] * q.gradient(np.asarray(t_pilot, dtype=float), data)
    if project:
        grad, _ = projector.project(grad, tol=ace.tol, max_cycles=ace.max_cycles, record_trace=False)
    basis = outcome_side_basis(data)
    coef, *_ = np.linalg.lstsq(basis, grad, rcond=None)
    return replace(
        instruments,
        c2=basis @ coef,
        c2_a1=outcome_side_basis(data, 1.0) @ coef,
        c2_a0=outcome_side_basis(data, 0.0) @ coef,
        c2_labels=[f"E[dd/dt | W,A,X]:{lab}" for lab in labels(q.terms)],
    )
