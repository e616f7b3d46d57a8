"""Projection onto the constrained moment space H_gamma.

H_gamma holds the functions d(Z, A, X) with E[d | Z_{-nu}, X] = 0 for every
subset nu of the K candidate proxies with |nu| = gamma. Two routes are
provided:

* ``project_ace``: cyclic removal of subset-conditional means, each realised
  as a least-squares fit on a regression basis over (Z_{-nu}, X), refit at
  every step.
* ``project_closed_form``: the change-of-measure map for a finite discrete
  law, weighted by f*/f where f* makes A and the Z_j independent given X.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import AbsoluteContinuityError, DomainError, ShapeError, SupportError

log = logging.getLogger(__name__)

__all__ = [
    "SubsetFamily",
    "AlphaCoefficients",
    "AceBasis",
    "AceProjector",
    "AceWorkingModel",
    "AceConfig",
    "ReferenceLaw",
    "enumerate_subsets",
    "alpha_coefficients",
    "project_ace",
    "project_closed_form",
    "membership_residuals",
    "discrete_conditional_mean",
    "discrete_membership",
]


# --------------------------------------------------------------------------
# subset family and alpha recursion
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SubsetFamily:
    """All size-gamma subsets of {1..k} in lexicographic order (1-based)."""

    k: int
    gamma: int
    subsets: tuple

    @property
    def m(self) -> int:
        return len(self.subsets)

    def complement(self, j: int) -> tuple:
        """1-based indices of the proxies kept when subset ``j`` is conditioned out."""
        nu = set(self.subsets[j])
        return tuple(i for i in range(1, self.k + 1) if i not in nu)

    def to_dict(self) -> dict:
        return {"k": self.k, "gamma": self.gamma, "subsets": [list(s) for s in self.subsets]}


def _check_gamma(k, gamma):
    if not (isinstance(k, (int, np.integer)) and isinstance(gamma, (int, np.integer))):
        raise DomainError("k and gamma must be integers")
    if k < 1 or not 1 <= gamma <= k:
        raise DomainError(f"need 1 <= gamma <= k, got gamma={gamma}, k={k}")


def enumerate_subsets(k: int, gamma: int) -> SubsetFamily:
    _check_gamma(k, gamma)
    subsets = tuple(itertools.combinations(range(1, int(k) + 1), int(gamma)))
    return SubsetFamily(k=int(k), gamma=int(gamma), subsets=subsets)


@dataclass(frozen=True)
class AlphaCoefficients:
    """Weights alpha_i, i = gamma..k, of the inclusion-exclusion recursion.

    ``exact`` holds the rational values; ``values`` the float copies, with
    ``values[0]`` corresponding to i = gamma.
    """

    gamma: int
    k: int
    exact: tuple
    values: np.ndarray

    def __getitem__(self, i: int) -> float:
        if not self.gamma <= i <= self.k:
            raise IndexError(f"alpha index {i} outside {self.gamma}..{self.k}")
        return float(self.values[i - self.gamma])

    def recursion_residuals(self) -> np.ndarray:
        """Float evaluation of sum_j C(gamma, i-j) alpha_j for i = gamma+1..k."""
        out = []
        for i in range(self.gamma + 1, self.k + 1):
            out.append(sum(math.comb(self.gamma, i - j) * self[j] for j in range(self.gamma, i + 1)))
        return np.asarray(out)


def alpha_coefficients(gamma: int, k: int) -> AlphaCoefficients:
    _check_gamma(k, gamma)
    alphas = [Fraction(1)]
    for i in range(gamma + 1, k + 1):
        # C(gamma, 0) = 1 multiplies the new coefficient
        acc = sum(math.comb(gamma, i - j) * alphas[j - gamma] for j in range(gamma, i))
        alphas.append(-acc)
    return AlphaCoefficients(
        gamma=int(gamma), k=int(k), exact=tuple(alphas), values=np.array([float(a) for a in alphas])
    )


# --------------------------------------------------------------------------
# regression bases and the ACE projector
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AceBasis:
    """Regression basis over (Z_{-nu}, X) used for each conditional mean.

    kind
        ``"linear"``: intercept plus the columns themselves.
        ``"quadratic"``: linear plus squares and pairwise products.
        ``"saturated"``: one indicator per distinct value of (Z_{-nu}, X);
        only sensible for discrete data.
    """

    kind: str = "linear"

    def __post_init__(self):
        if self.kind not in ("linear", "quadratic", "saturated"):
            raise DomainError(f"unknown ACE basis kind {self.kind!r}")

    def columns(self, z_keep: np.ndarray, x: np.ndarray, names=None):
        raw = np.column_stack([z_keep, x]) if (z_keep.size or x.size) else np.empty((z_keep.shape[0], 0))
        names = list(names) if names is not None else [f"v{i + 1}" for i in range(raw.shape[1])]
        cols, labels = [np.ones(raw.shape[0])], ["1"]
        for i in range(raw.shape[1]):
            cols.append(raw[:, i])
            labels.append(names[i])
        if self.kind == "quadratic":
            for i in range(raw.shape[1]):
                for j in range(i, raw.shape[1]):
                    cols.append(raw[:, i] * raw[:, j])
                    labels.append(f"{names[i]}*{names[j]}" if i != j else f"{names[i]}^2")
        return np.column_stack(cols), labels

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class AceConfig:
    """Basis, stopping tolerance and cycle cap for ACE runs."""

    basis: AceBasis = field(default_factory=AceBasis)
    tol: float = 1e-8
    max_cycles: int = 500

    def __post_init__(self):
        if isinstance(self.basis, str):
            object.__setattr__(self, "basis", AceBasis(self.basis))
        if not self.tol > 0:
            raise DomainError("ACE tolerance must be positive")
        if self.max_cycles < 1:
            raise DomainError("max_cycles must be at least 1")

    def to_dict(self) -> dict:
        return {"basis": self.basis.kind, "tol": self.tol, "max_cycles": self.max_cycles}


class _LeastSquaresStep:
    """Minimum-norm least-squares projector onto the span of one design."""

    saturated = False

    def __init__(self, design: np.ndarray, labels, subset):
        n, c = design.shape
        if n < c:
            raise ShapeError(f"subset {subset}: n={n} is smaller than the {c} design columns")
        u, s, vt = np.linalg.svd(design, full_matrices=False)
        cutoff = s[0] * max(n, c) * np.finfo(float).eps if s.size else 0.0
        rank = int(np.sum(s > cutoff))
        self.rank_deficient = rank < c
        if self.rank_deficient:
            log.warning("ACE design for subset %s is rank deficient (%d < %d); using minimum-norm fit",
                        subset, rank, c)
        self.u = u[:, :rank]
        self.coef_map = vt[:rank].T / s[:rank]
        self.labels = labels
        self.n_columns = c

    def fit(self, v):
        proj = self.u.T @ v
        return self.u @ proj, self.coef_map @ proj


class _GroupMeanStep:
    """Projection onto indicator functions of distinct covariate patterns."""

    saturated = True
    rank_deficient = False

    def __init__(self, keys: np.ndarray, labels, subset):
        if keys.shape[1] == 0:
            keys = np.zeros((keys.shape[0], 1))
        self.levels, self.inverse = np.unique(keys, axis=0, return_inverse=True)
        self.inverse = self.inverse.ravel()
        self.counts = np.bincount(self.inverse).astype(float)
        self.labels = labels
        self.n_columns = len(self.levels)

    def fit(self, v):
        g = len(self.levels)
        if v.ndim == 1:
            means = np.bincount(self.inverse, weights=v, minlength=g) / self.counts
        else:
            means = np.stack(
                [np.bincount(self.inverse, weights=v[:, i], minlength=g) for i in range(v.shape[1])], axis=1
            ) / self.counts[:, None]
        return means[self.inverse], means


class AceProjector:
    """Precomputed per-subset regression operators for one sample.

    Building the operators once (one SVD per subset) lets many functions be
    projected on the same sample cheaply, which the estimating-equation
    solvers rely on.
    """

    def __init__(self, data, family: SubsetFamily, basis: AceBasis | None = None):
        if data.k != family.k:
            raise ShapeError(f"data has K={data.k} proxies but the subset family has k={family.k}")
        self.family = family
        self.basis = basis or AceBasis()
        self.n = data.n
        self.steps = []
        for j, nu in enumerate(family.subsets):
            keep = [i - 1 for i in family.complement(j)]
            z_keep = data.z[:, keep]
            names = [data.z_names[i] for i in keep] + list(data.x_names)
            if self.basis.kind == "saturated":
                step = _GroupMeanStep(np.column_stack([z_keep, data.x]), names, nu)
            else:
                dmat, labels = self.basis.columns(z_keep, data.x, names)
                step = _LeastSquaresStep(dmat, labels, nu)
            self.steps.append(step)

    def prediction(self, j: int, v: np.ndarray) -> np.ndarray:
        return self.steps[j].fit(np.asarray(v, dtype=float))[0]

    def project(self, d0, tol: float = 1e-8, max_cycles: int = 500, record_trace: bool = True):
        """Run cyclic projections on ``d0`` (vector or n x c matrix)."""
        if tol <= 0:
            raise DomainError("tol must be positive")
        if max_cycles < 1:
            raise DomainError("max_cycles must be at least 1")
        d = np.array(d0, dtype=float, copy=True)
        if d.shape[0] != self.n:
            raise ShapeError(f"function has {d.shape[0]} rows, sample has {self.n}")
        coefs = [None] * self.family.m
        trace = [_rms(d)] if record_trace else []
        converged, change, cycles = False, float("inf"), 0
        for cycle in range(max_cycles):
            start = d.copy()
            for j, step in enumerate(self.steps):
                pred, beta = step.fit(d)
                d -= pred
                coefs[j] = beta if coefs[j] is None else coefs[j] + beta
                if record_trace:
                    trace.append(_rms(d))
            cycles = cycle + 1
            change = _relative_change(d, start)
            # a single subset is an exact one-pass projection
            if self.family.m == 1 or change < tol:
                converged = True
                break
        if not converged:
            log.warning("ACE did not converge in %d cycles (relative change %.3g)", max_cycles, change)
        state = AceWorkingModel(
            family=self.family,
            basis=self.basis,
            labels=[list(s.labels) for s in self.steps],
            coefficients=coefs,
            trace=trace,
            cycles=cycles,
            converged=converged,
            relative_change=float(change) if self.family.m > 1 else 0.0,
            rank_deficient=[list(nu) for nu, s in zip(self.family.subsets, self.steps) if s.rank_deficient],
        )
        return d, state

    def membership_residuals(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        return np.array([_rms(self.prediction(j, d)) for j in range(self.family.m)])


def _rms(v) -> float:
    return float(np.sqrt(np.mean(np.square(v))))


def _relative_change(new, old) -> float:
    diff = np.sqrt(np.mean(np.square(new - old), axis=0))
    scale = np.sqrt(np.mean(np.square(old), axis=0))
    rel = np.where(scale > 0, diff / np.where(scale > 0, scale, 1.0), diff)
    return float(np.max(rel))


@dataclass
class AceWorkingModel:
    """Audit record of one ACE run.

    ``coefficients[j]`` is the total coefficient vector removed at subset j,
    summed over cycles, so the output equals d0 minus the sum over j of
    basis_j @ coefficients[j]. ``trace`` holds the root-mean-square of the
    iterate after every step, starting with d0.
    """

    family: SubsetFamily
    basis: AceBasis
    labels: list
    coefficients: list
    trace: list
    cycles: int
    converged: bool
    relative_change: float
    rank_deficient: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "subsets": [list(s) for s in self.family.subsets],
            "gamma": self.family.gamma,
            "k": self.family.k,
            "basis": self.basis.to_dict(),
            "labels": self.labels,
            "coefficients": [np.asarray(c).tolist() if c is not None else None for c in self.coefficients],
            "trace": list(map(float, self.trace)),
            "cycles": self.cycles,
            "converged": self.converged,
            "relative_change": self.relative_change,
            "rank_deficient": self.rank_deficient,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def project_ace(d0, data, family: SubsetFamily, basis: AceBasis | None = None,
                tol: float = 1e-8, max_cycles: int = 500):
    """Project ``d0`` into the empirical H_gamma by cyclic refitted regressions.

    Returns
    -------
    projected : ndarray
        Final iterate, same shape as ``d0``.
    state : AceWorkingModel
        Fitted coefficients, trace and convergence flag. Non-convergence is
        reported through ``state.converged`` rather than raised.
    """
    return AceProjector(data, family, basis).project(d0, tol=tol, max_cycles=max_cycles)


def membership_residuals(d, data, family: SubsetFamily, basis: AceBasis | None = None) -> np.ndarray:
    """Empirical L2 norm of the fitted conditional mean of ``d`` for each subset."""
    return AceProjector(data, family, basis).membership_residuals(d)


# --------------------------------------------------------------------------
# discrete reference laws and the closed-form map
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReferenceLaw:
    """A law on a finite support of (Z, A, X-stratum).

    ``f`` is the joint probability of each support point under the law of
    interest and ``fstar`` under the reference law in which A and every Z_j
    are mutually independent given the stratum. Both sum to one.
    """

    z: np.ndarray
    a: np.ndarray
    x: np.ndarray
    f: np.ndarray
    fstar: np.ndarray

    def __post_init__(self):
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        if z.shape[0] == 1 and np.asarray(self.z).ndim == 1:
            z = z.T
        s = z.shape[0]
        a = np.asarray(self.a, dtype=float).reshape(s)
        x = np.zeros(s, dtype=int) if self.x is None else np.asarray(self.x).reshape(s)
        f = np.asarray(self.f, dtype=float).reshape(s)
        fstar = np.asarray(self.fstar, dtype=float).reshape(s)
        for name, p in (("f", f), ("fstar", fstar)):
            if np.any(p < 0) or not np.isfinite(p).all():
                raise SupportError(f"{name} has negative or non-finite probabilities")
            if abs(p.sum() - 1.0) > 1e-9:
                raise SupportError(f"{name} sums to {p.sum():.12g}, not 1")
        for k, v in (("z", z), ("a", a), ("x", x), ("f", f), ("fstar", fstar)):
            object.__setattr__(self, k, v)

    @property
    def k(self) -> int:
        return self.z.shape[1]

    @property
    def size(self) -> int:
        return self.z.shape[0]

    def weight(self) -> np.ndarray:
        """f*/f on the support; raises if f* charges a point that f does not."""
        bad = (self.f <= 0) & (self.fstar > 0)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise AbsoluteContinuityError(
                f"reference law charges support point {i} (z={self.z[i].tolist()}, a={self.a[i]}) where f = 0"
            )
        out = np.zeros(self.size)
        pos = self.f > 0
        out[pos] = self.fstar[pos] / self.f[pos]
        return out

    @classmethod
    def product_of_marginals(cls, z, a, f, x=None) -> "ReferenceLaw":
        """Build f* = P(x) P(a | x) prod_j P(z_j | x) from the joint ``f``.

        The support must be the full product grid within each stratum, else
        f* would place mass outside it.
        """
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        a = np.asarray(a, dtype=float)
        f = np.asarray(f, dtype=float)
        s = z.shape[0]
        x = np.zeros(s, dtype=int) if x is None else np.asarray(x)
        fstar = np.empty(s)
        for stratum in np.unique(x):
            rows = np.flatnonzero(x == stratum)
            px = f[rows].sum()
            if px <= 0:
                fstar[rows] = 0.0
                continue
            factor = np.full(rows.size, px)
            for col in [a] + [z[:, j] for j in range(z.shape[1])]:
                vals = col[rows]
                marg = {v: f[rows][vals == v].sum() / px for v in np.unique(vals)}
                factor *= np.array([marg[v] for v in vals])
            fstar[rows] = factor
        if abs(fstar.sum() - 1.0) > 1e-9:
            raise AbsoluteContinuityError(
                "product of marginals puts mass outside the supplied support; supply the full product grid"
            )
        return cls(z=z, a=a, x=x, f=f, fstar=fstar)


def discrete_conditional_mean(values, keys: np.ndarray, weights) -> np.ndarray:
    """E_w[values | keys] evaluated at every support point, by direct summation.

    Groups with zero total weight get conditional mean 0.
    """
    values = np.asarray(values, dtype=float)
    keys = np.asarray(keys)
    if keys.ndim == 1:
        keys = keys[:, None]
    if keys.shape[1] == 0:
        keys = np.zeros((values.shape[0], 1))
    _, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    num = np.bincount(inv, weights=weights * values)
    den = np.bincount(inv, weights=weights)
    means = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return means[inv]


def _keys(law: ReferenceLaw, keep) -> np.ndarray:
    return np.column_stack([law.z[:, [i - 1 for i in keep]], law.x])


def project_closed_form(g, law: ReferenceLaw, alphas: AlphaCoefficients) -> np.ndarray:
    """Closed-form map of ``g`` into H_gamma under ``law``.

    Computes (f*/f) * (g - sum_{i=gamma}^{K} alpha_i sum_{|nu|=i} E*[g | Z_{-nu}, X])
    with conditional means taken under f*.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (law.size,):
        raise ShapeError(f"g has shape {g.shape}, law support has {law.size} points")
    if alphas.k != law.k:
        raise ShapeError(f"alpha coefficients are for K={alphas.k}, law has K={law.k}")
    omega = law.weight()
    correction = np.zeros_like(g)
    for i in range(alphas.gamma, alphas.k + 1):
        fam = enumerate_subsets(law.k, i)
        for j in range(fam.m):
            correction += alphas[i] * discrete_conditional_mean(g, _keys(law, fam.complement(j)), law.fstar)
    return omega * (g - correction)


def discrete_membership(d, law: ReferenceLaw, gamma: int, under: str = "f") -> np.ndarray:
    """Largest |E[d | Z_{-nu}, X]| over the support, for each size-gamma nu.

    Exact up to floating-point summation; zero for every subset means d is
    in H_gamma under the chosen law (``"f"`` or ``"fstar"``).
    """
    weights = law.f if under == "f" else law.fstar
    fam = enumerate_subsets(law.k, gamma)
    out = []
    for j in range(fam.m):
        cm = discrete_conditional_mean(d, _keys(law, fam.complement(j)), weights)
        out.append(float(np.max(np.abs(cm[weights > 0]))) if np.any(weights > 0) else 0.0)
    return np.asarray(out)
