"""Average treatment effects with proxies of which only some are valid.

Fortified proximal estimators (fPOR, fPIPW, fPMR) for data (Y, A, Z, W, X)
with K candidate treatment-side proxies Z, of which at most K - gamma may
be invalid, plus the conventional proximal (PDR) and AIPW (DR) comparators.
"""

from .bridges import ModelSpec, build_instruments, eval_h, eval_l, eval_q
from .dataset import ColumnRoles, ObservedData, ProxySpec, demote_proxies, load_csv, resample, write_csv
from .errors import FortifyError
from .estimators import (
    EstimateResult,
    NuisanceFit,
    estimate_dr,
    estimate_fpipw,
    estimate_fpmr,
    estimate_fpor,
    estimate_pdr,
    fit_b_r,
    fit_nuisances,
    fit_t,
    if_variance,
)
from .inference import BootstrapConfig, McReport, bootstrap_se, confidence_interval, mc_study
from .projection import (
    AceBasis,
    AceConfig,
    ReferenceLaw,
    alpha_coefficients,
    enumerate_subsets,
    membership_residuals,
    project_ace,
    project_closed_form,
)
from .simulation import DiscreteToyLaw, Section4Dgp, Section4Generator, generate_section4, toy_law_tables

__version__ = "0.1.0"

__all__ = [
    "AceBasis", "AceConfig", "BootstrapConfig", "ColumnRoles", "DiscreteToyLaw", "EstimateResult",
    "FortifyError", "McReport", "ModelSpec", "NuisanceFit", "ObservedData", "ProxySpec", "ReferenceLaw",
    "Section4Dgp", "Section4Generator", "alpha_coefficients", "bootstrap_se", "build_instruments",
    "confidence_interval", "demote_proxies", "enumerate_subsets", "estimate_dr", "estimate_fpipw",
    "estimate_fpmr", "estimate_fpor", "estimate_pdr", "eval_h", "eval_l", "eval_q", "fit_b_r",
    "fit_nuisances", "fit_t", "generate_section4", "if_variance", "load_csv", "mc_study",
    "membership_residuals", "project_ace", "project_closed_form", "resample", "toy_law_tables", "write_csv",
]
