"""Self-contained oracle checks bundled by ``fortify oracle-check``.

Each check returns ``{"name", "passed", "detail"}``. Checks that need the
weight f*/f of the toy law report a support error, instead of running, when
the law has a zero-probability cell; the remaining checks run regardless.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import FortifyError
from .projection import (
    AceBasis,
    ReferenceLaw,
    alpha_coefficients,
    discrete_membership,
    enumerate_subsets,
    project_ace,
    project_closed_form,
)
from .simulation import (
    TAU_STAR,
    DiscreteToyLaw,
    Section4Dgp,
    generate_section4,
    philox,
    structural_residual_mean,
    toy_law_tables,
    true_nuisances,
)

EXACT_TOL = 1e-12


def _result(name, passed, detail):
    return {"name": name, "passed": bool(passed), "detail": detail}


def check_alpha_recursion(max_k: int = 6):
    worst, worst_closed = 0.0, 0.0
    for k in range(1, max_k + 1):
        for gamma in range(1, k + 1):
            al = alpha_coefficients(gamma, k)
            res = al.recursion_residuals()
            if res.size:
                worst = max(worst, float(np.max(np.abs(res))))
            for i in range(gamma, k + 1):
                closed = (-1) ** (i - gamma) * math.comb(i - 1, gamma - 1)
                worst_closed = max(worst_closed, abs(al[i] - closed))
    ok = worst <= EXACT_TOL and worst_closed <= EXACT_TOL
    return _result("alpha_recursion", ok,
                   f"K<={max_k}: max recursion residual {worst:.3g}, max gap to closed form {worst_closed:.3g}")


def _grid_law(k: int, rng) -> ReferenceLaw:
    grid = np.array(list(itertools.product([0.0, 1.0], *[[-1.0, 0.0, 1.0]] * k)))
    f = rng.dirichlet(np.ones(len(grid)))
    return ReferenceLaw.product_of_marginals(grid[:, 1:], grid[:, 0], f)


def check_closed_form_membership(seed: int = 0, max_k: int = 3):
    """d-dagger lies in H_gamma, and hence in every H_gamma' with gamma' >= gamma."""
    rng = philox(seed)
    worst = 0.0
    for k in range(1, max_k + 1):
        law = _grid_law(k, rng)
        g = rng.standard_normal(law.size)
        for gamma in range(1, k + 1):
            d = project_closed_form(g, law, alpha_coefficients(gamma, k))
            for g2 in range(gamma, k + 1):
                worst = max(worst, float(np.max(discrete_membership(d, law, g2))))
    return _result("closed_form_membership", worst <= EXACT_TOL,
                   f"K<={max_k}, random full-support laws: max |conditional mean| {worst:.3g}")


def check_b1_membership(law: DiscreteToyLaw):
    try:
        tables = toy_law_tables(law)
        basis = tables.basis_b1()
    except FortifyError as exc:
        return _result("b1_membership", False, f"support error: {exc}")
    worst = {name: float(np.max(discrete_membership(v, tables.law, 1))) for name, v in basis.items()}
    bad = [n for n, v in worst.items() if v > EXACT_TOL]
    return _result("b1_membership", not bad,
                   f"{len(basis)} elements, max |conditional mean| {max(worst.values()):.3g}"
                   + (f"; failing: {bad}" if bad else ""))


def check_structural_residual(law: DiscreteToyLaw):
    """Every H_1 element is orthogonal to the structural residual Y - A - 2W."""
    try:
        tables = toy_law_tables(law)
        basis = tables.basis_b1()
    except FortifyError as exc:
        return _result("structural_residual", False, f"support error: {exc}")
    worst = max(abs(structural_residual_mean(law, v)) for v in basis.values())
    return _result("structural_residual", worst <= EXACT_TOL, f"max |E[d (Y - A - 2W)]| {worst:.3g}")


def check_ace_vs_closed_form(seed: int = 0, n: int = 20000, n_functions: int = 5, tol: float = 0.05):
    """Sample ACE with a saturated basis against the exact map on the uniform law."""
    toy = DiscreteToyLaw.uniform()
    ref = toy.marginal()
    data = toy.sample(n, seed)
    lookup = {(a, z1, z2): i for i, (a, (z1, z2)) in enumerate(zip(ref.a, ref.z))}
    idx = np.array([lookup[(a, z1, z2)] for a, (z1, z2) in zip(data.a, data.z)])
    rng = philox(seed + 1)
    fam = enumerate_subsets(2, 1)
    alphas = alpha_coefficients(1, 2)
    dists = []
    for _ in range(n_functions):
        g = rng.standard_normal(ref.size)
        exact = project_closed_form(g, ref, alphas)[idx]
        ace, _ = project_ace(g[idx], data, fam, AceBasis("saturated"))
        dists.append(float(np.sqrt(np.mean((ace - exact) ** 2))))
    return _result("ace_vs_closed_form", max(dists) < tol,
                   f"n={n}, empirical L2 distances {[round(x, 4) for x in dists]} (tol {tol})")


def check_moment_identities(seed: int = 0, n: int = 200000, z_crit: float = 4.0):
    """True bridges solve their moment equations on a large sample of the continuous design.

    Checks E[c (Y - h* - l*)] = 0 for c in (1, Z1, Z2, X, A Z1) and
    E[s q* g] = E[g(W, 1, X) - g(W, 0, X)] for g in (A, W, A W, A X), each
    within ``z_crit`` Monte Carlo standard errors.
    """
    data, _ = generate_section4(Section4Dgp(n, seed))
    h, l, q = true_nuisances(data, TAU_STAR)
    s = 2.0 * data.a - 1.0
    w, x, z1, z2, a = data.w[:, 0], data.x[:, 0], data.z[:, 0], data.z[:, 1], data.a
    resid = data.y - h - l
    kernels = {f"outcome:{k}": c * resid for k, c in
               {"1": np.ones(n), "Z1": z1, "Z2": z2, "X": x, "A*Z1": a * z1}.items()}
    g1 = {"A": (a, 1.0, 0.0), "W": (w, w, w), "A*W": (a * w, w, 0.0), "A*X": (a * x, x, 0.0)}
    for k, (g, at1, at0) in g1.items():
        kernels[f"treatment:{k}"] = s * q * g - (at1 - at0)
    worst = 0.0
    stats = {}
    for k, v in kernels.items():
        zval = abs(v.mean()) / (v.std(ddof=1) / math.sqrt(n))
        stats[k] = round(float(zval), 2)
        worst = max(worst, zval)
    return _result("moment_identities", worst <= z_crit, f"n={n}, |mean|/se per kernel {stats}")


def run_oracle_checks(fixture=None, seed: int = 0):
    """Run every check; ``fixture`` is a toy-law JSON path (default: the shipped one)."""
    law = DiscreteToyLaw.fixture() if fixture is None else DiscreteToyLaw.from_json(fixture)
    return [
        check_alpha_recursion(),
        check_closed_form_membership(seed),
        check_b1_membership(law),
        check_structural_residual(law),
        check_ace_vs_closed_form(seed),
        check_moment_identities(seed),
    ]
