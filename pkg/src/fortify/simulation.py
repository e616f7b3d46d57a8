"""Reference data-generating processes and exact discrete oracles.

The continuous design has one covariate X, two candidate proxies of which
only Z1 is valid (Z2 affects both W and Y directly), one outcome proxy W and
a latent confounder U:

    (X, Z2, U) ~ N(0, S), S = ones on the diagonal, 1/2 elsewhere
    P(A = 1 | X, Z2, U) = expit(2 (U - X/2))
    Z1 ~ N(2 s_A (U - X/2), 0.5^2),        s_A = (-1)^(1 - A)
    W  ~ N(-1 - X - U/2 + Z2/4, 0.5^2)
    Y  ~ N(1 + X + U/4 + tau A - Z2/4, 0.25^2)

Random numbers come from a Philox counter-based generator; normals use
numpy's ziggurat sampler. Draw order: the (n, 3) standard-normal block for
(X, Z2, U), n uniforms for A, then n normals each for Z1, W and Y.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .bridges import SCENARIOS, ModelSpec
from .dataset import ObservedData
from .errors import DomainError, SupportError
from .projection import ReferenceLaw, discrete_conditional_mean

TAU_STAR = 2.0
# true working-model coefficients for the design above, tau = 2
TRUE_B = np.array([2.0, -0.5])  # (A, W)
TRUE_R = np.array([0.5, 0.0, -0.125, 0.5])  # (1, Z1, Z2, X)
TRUE_T = np.array([-0.125, -1.0, 0.0, 0.0, 0.0])  # (1, Z1, Z2, A, X)

_COV = np.array([[1.0, 0.5, 0.5], [0.5, 1.0, 0.5], [0.5, 0.5, 1.0]])
_CHOL = np.linalg.cholesky(_COV)


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class Section4Dgp:
    n: int
    seed: int = 0
    tau_star: float = TAU_STAR

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("n must be at least 1")


def generate_section4(dgp: Section4Dgp):
    """Draw one sample; returns ``(data, u)`` with the latent U kept out of ``data``."""
    rng = philox(dgp.seed)
    n = dgp.n
    xzu = rng.standard_normal((n, 3)) @ _CHOL.T
    x, z2, u = xzu[:, 0], xzu[:, 1], xzu[:, 2]
    p1 = 1.0 / (1.0 + np.exp(-2.0 * (u - 0.5 * x)))
    a = (rng.random(n) < p1).astype(float)
    sign = 2.0 * a - 1.0
    z1 = 2.0 * sign * (u - 0.5 * x) + 0.5 * rng.standard_normal(n)
    w = -1.0 - x - 0.5 * u + 0.25 * z2 + 0.5 * rng.standard_normal(n)
    y = 1.0 + x + 0.25 * u + dgp.tau_star * a - 0.25 * z2 + 0.25 * rng.standard_normal(n)
    data = ObservedData(
        y=y, a=a, z=np.column_stack([z1, z2]), w=w[:, None], x=x[:, None],
        z_names=("z1", "z2"), w_names=("w",), x_names=("x",),
    )
    return data, u


@dataclass(frozen=True)
class Section4Generator:
    """Picklable ``(n, seed) -> ObservedData`` closure for replicated studies."""

    tau_star: float = TAU_STAR

    def __call__(self, n: int, seed: int) -> ObservedData:
        return generate_section4(Section4Dgp(n=n, seed=seed, tau_star=self.tau_star))[0]


def true_nuisances(data: ObservedData, tau_star: float = TAU_STAR):
    """Oracle (h*, l*, q*) evaluated rowwise for the continuous design."""
    w = data.w[:, 0]
    z1, z2 = data.z[:, 0], data.z[:, 1]
    x = data.x[:, 0]
    h = tau_star * data.a - 0.5 * w
    l = 0.5 + 0.5 * x - 0.125 * z2
    q = 1.0 + np.exp(-0.125 - z1)
    return h, l, q


def apply_scenario(tag: str, spec: ModelSpec | None = None) -> ModelSpec:
    """Return ``spec`` with the misspecification scenario ``tag`` applied."""
    if tag not in SCENARIOS:
        raise DomainError(f"unknown scenario {tag!r}; expected one of {SCENARIOS}")
    spec = spec or ModelSpec()
    return replace(spec, scenario=tag)


# --------------------------------------------------------------------------
# discrete toy law on A in {0,1}, Z1, Z2 in {-1,0,1}, optional binary U
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscreteToyLaw:
    """Joint pmf over (U, A, Z1, Z2); ``u`` is all zeros when U is absent."""

    u: np.ndarray
    a: np.ndarray
    z: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise SupportError("toy law probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "p", p)

    @classmethod
    def uniform(cls) -> "DiscreteToyLaw":
        grid = np.array(list(itertools.product([0, 1], [-1, 0, 1], [-1, 0, 1])), dtype=float)
        return cls(u=np.zeros(len(grid)), a=grid[:, 0], z=grid[:, 1:], p=np.full(len(grid), 1 / len(grid)))

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteToyLaw":
        cells = d["cells"]
        u = np.array([c.get("u", 0) for c in cells], dtype=float)
        a = np.array([c["a"] for c in cells], dtype=float)
        z = np.array([[c["z1"], c["z2"]] for c in cells], dtype=float)
        p = np.array([c["p"] for c in cells], dtype=float)
        return cls(u=u, a=a, z=z, p=p)

    @classmethod
    def from_json(cls, path) -> "DiscreteToyLaw":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def fixture(cls) -> "DiscreteToyLaw":
        """The shipped correlated-U law."""
        text = resources.files("fortify.fixtures").joinpath("toy_law_correlated_u.json").read_text()
        return cls.from_dict(json.loads(text))

    def marginal(self) -> ReferenceLaw:
        """Law of (A, Z1, Z2) with U summed out, paired with its product of marginals."""
        keys = np.column_stack([self.a, self.z])
        levels, inv = np.unique(keys, axis=0, return_inverse=True)
        f = np.bincount(inv.ravel(), weights=self.p, minlength=len(levels))
        return ReferenceLaw.product_of_marginals(levels[:, 1:], levels[:, 0], f)

    def sample(self, n: int, seed: int) -> ObservedData:
        """Draw n i.i.d. (A, Z1, Z2) rows; Y and W are zero placeholders."""
        rng = philox(seed)
        idx = rng.choice(len(self.p), size=n, p=self.p)
        return ObservedData(
            y=np.zeros(n), a=self.a[idx], z=self.z[idx], w=np.empty((n, 0)), x=np.empty((n, 0))
        )


@dataclass(frozen=True, eq=False)
class ToyTables:
    """Exact expectations on the (A, Z1, Z2) support of a toy law."""

    law: ReferenceLaw

    @property
    def omega(self) -> np.ndarray:
        return self.law.weight()

    def mean(self, g) -> float:
        return float(np.sum(self.law.f * np.asarray(g, dtype=float)))

    def conditional_mean(self, g, given) -> np.ndarray:
        """E[g | Z_j, j in ``given``] at each support point (``given`` 1-based)."""
        keys = self.law.z[:, [j - 1 for j in given]] if given else np.zeros((self.law.size, 0))
        return discrete_conditional_mean(g, keys, self.law.f)

    def basis_b1(self) -> dict:
        """The 13 weighted, centred products spanning H_1 for K = 2 without X.

        Each element multiplies the weight f*/f once by a product of centred
        factors A - E A, Z_i - E Z_i and Z_i^2 - E Z_i^2.
        """
        law = self.law
        f = law.f
        centred = {
            "A": law.a - np.sum(f * law.a),
            "Z1": law.z[:, 0] - np.sum(f * law.z[:, 0]),
            "Z2": law.z[:, 1] - np.sum(f * law.z[:, 1]),
            "Z1^2": law.z[:, 0] ** 2 - np.sum(f * law.z[:, 0] ** 2),
            "Z2^2": law.z[:, 1] ** 2 - np.sum(f * law.z[:, 1] ** 2),
        }
        names = [
            ("A",), ("A", "Z1"), ("A", "Z2"), ("A", "Z1", "Z2"), ("A", "Z1^2"), ("A", "Z2^2"),
            ("A", "Z1^2", "Z2"), ("A", "Z1", "Z2^2"), ("A", "Z1^2", "Z2^2"),
            ("Z1", "Z2"), ("Z1^2", "Z2"), ("Z1", "Z2^2"), ("Z1^2", "Z2^2"),
        ]
        omega = self.omega
        out = {}
        for combo in names:
            v = omega.copy()
            for c in combo:
                v = v * centred[c]
            out["*".join(combo)] = v
        return out


def toy_law_tables(law: DiscreteToyLaw) -> ToyTables:
    """Exact tables for a full-support toy law; zero cells raise a support error."""
    ref = law.marginal()
    if np.any(ref.f <= 0):
        raise SupportError("toy law has a zero-probability (A, Z1, Z2) cell; the weight is undefined")
    return ToyTables(ref)


def structural_residual_mean(law: DiscreteToyLaw, d_on_marginal: np.ndarray) -> float:
    """E[d (Y - A - 2W)] under the linear structural toy model.

    Uses E[W | A, Z, U] = Z2 + U and E[Y | A, W, Z, U] = A + 2 Z2 + W + U, so
    E[Y - A - 2W | A, Z, U] = Z2. ``d_on_marginal`` is indexed by the
    (A, Z1, Z2) support of ``law.marginal()``.
    """
    ref = law.marginal()
    keys = np.column_stack([ref.a, ref.z])
    lookup = {tuple(k): i for i, k in enumerate(keys)}
    idx = np.array([lookup[(a, z1, z2)] for a, (z1, z2) in zip(law.a, law.z)])
    ew = law.z[:, 1] + law.u
    ey = law.a + 2.0 * law.z[:, 1] + ew + law.u
    return float(np.sum(law.p * d_on_marginal[idx] * (ey - law.a - 2.0 * ew)))
