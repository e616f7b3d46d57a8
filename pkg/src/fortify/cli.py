"""Command-line front end: ``fortify {estimate,simulate,mc,oracle-check}``.

Settings come from an optional JSON config file; command-line flags win.
Every command writes its outputs under ``--out``; any error is written to
``errors.json`` there and the process exits with a nonzero code.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bridges import SCENARIOS, ModelSpec
from .dataset import ColumnRoles, load_csv, write_csv
from .errors import ConfigError, FortifyError
from .estimators import (
    METHODS,
    estimate_dr,
    estimate_fpipw,
    estimate_fpmr,
    estimate_fpor,
    estimate_pdr,
    estimator_set,
    fit_nuisances,
)
from .inference import BootstrapConfig, bootstrap_se, mc_study
from .projection import AceConfig
from .simulation import Section4Dgp, Section4Generator, generate_section4

log = logging.getLogger("fortify")

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_CHECK_FAILED = 1


@dataclass
class RunConfig:
    command: str
    data: str | None = None
    roles: ColumnRoles | None = None
    gammas: list = field(default_factory=lambda: [1])
    methods: list = field(default_factory=lambda: ["fPOR", "fPIPW", "fPMR"])
    models: dict = field(default_factory=dict)
    ace: AceConfig = field(default_factory=AceConfig)
    bootstrap: BootstrapConfig | None = None
    seed: int = 0
    workers: int = 1
    out: str = "."
    reps: int = 200
    n: int = 3000
    scenario: str = "none"
    fixture: str | None = None

    def model_spec(self, gamma: int) -> ModelSpec:
        m = self.models
        return ModelSpec(
            gamma=gamma,
            h_terms=m.get("h_terms"),
            l_terms=m.get("l_terms"),
            q_terms=m.get("q_terms"),
            c2_terms=m.get("c2_terms"),
            q_sign_variant=bool(m.get("q_sign_variant", False)),
            project_weight=bool(m.get("project_weight", True)),
            scenario=self.scenario,
            ace=self.ace,
            t_no_root=m.get("t_no_root", "raise"),
        )


def _split(text, cast=str):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [cast(v) for v in text]
    return [cast(v.strip()) for v in str(text).split(",") if v.strip()]


def build_config(args) -> RunConfig:
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")

    def pick(flag, key, default=None):
        value = getattr(args, flag, None)
        return value if value is not None else raw.get(key, default)

    seed = pick("seed", "seed")
    if seed is None:
        seed = os.environ.get("FORTIFY_SEED", 0)
    try:
        seed = int(seed)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {seed!r}") from None

    gamma_raw = pick("gamma", "gamma", [1])
    try:
        gammas = [int(gamma_raw)] if isinstance(gamma_raw, int) else _split(gamma_raw, int)
    except ValueError:
        raise ConfigError(f"gamma list must hold integers, got {gamma_raw!r}") from None
    if not gammas:
        raise ConfigError("gamma list is empty")
    methods = _split(pick("methods", "methods", ["fPOR", "fPIPW", "fPMR"]))
    if not methods:
        raise ConfigError("method list is empty")
    for m in methods:
        if m not in METHODS and not (m.startswith("PDR") and m[3:].isdigit()):
            raise ConfigError(f"unknown method {m!r}")

    ace_raw = raw.get("ace", {})
    try:
        ace = AceConfig(basis=ace_raw.get("basis", "linear"), tol=float(ace_raw.get("tol", 1e-8)),
                        max_cycles=int(ace_raw.get("max_cycles", 500)))
    except FortifyError as exc:
        raise ConfigError(str(exc)) from None

    boot_raw = dict(raw.get("bootstrap", {}) or {})
    b = args.bootstrap if getattr(args, "bootstrap", None) is not None else boot_raw.get("b_samples", 0)
    bootstrap = None
    if b:
        try:
            bootstrap = BootstrapConfig(
                b_samples=int(b), trim_fraction=float(boot_raw.get("trim_fraction", 0.01)),
                seed=int(boot_raw.get("seed", seed)), ci_level=float(boot_raw.get("ci_level", 0.95)))
        except FortifyError as exc:
            raise ConfigError(str(exc)) from None

    roles = None
    if "roles" in raw:
        roles = ColumnRoles.from_dict(raw["roles"])

    scenario = pick("scenario", "scenario", "none")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}")

    return RunConfig(
        command=args.command,
        data=pick("data", "data"),
        roles=roles,
        gammas=gammas,
        methods=methods,
        models=dict(raw.get("models", {}) or {}),
        ace=ace,
        bootstrap=bootstrap,
        seed=seed,
        workers=int(pick("workers", "workers", 1)),
        out=pick("out", "out", "."),
        reps=int(pick("reps", "reps", 200)),
        n=int(pick("n", "n", 3000)),
        scenario=scenario,
        fixture=pick("fixture", "fixture"),
    )


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

_REPORT_FIELDS = ["gamma", "method", "label", "tau_hat", "se", "ci_lower", "ci_upper", "se_method"]


def _write_report(out: Path, rows: list, extra: dict) -> None:
    with (out / "report.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_REPORT_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in _REPORT_FIELDS})
    (out / "report.json").write_text(json.dumps({**extra, "results": rows}, indent=1))


def _row(res, gamma=None) -> dict:
    d = res.to_dict()
    return {
        "gamma": gamma,
        "method": d["method"],
        "label": d["label"],
        "tau_hat": d["tau_hat"],
        "se": d["se"],
        "ci_lower": None if d["ci"] is None else d["ci"][0],
        "ci_upper": None if d["ci"] is None else d["ci"][1],
        "se_method": d["se_method"],
        "diagnostics": d["diagnostics"],
    }


def _with_bootstrap(res, data, estimator, cfg: RunConfig):
    se, est = bootstrap_se(data, estimator, cfg.bootstrap, workers=cfg.workers)
    out = res.with_se(se, "bootstrap", cfg.bootstrap.ci_level)
    out.diagnostics["bootstrap_failures"] = int(np.sum(~np.isfinite(est)))
    return out


@dataclass(frozen=True)
class _Point:
    """Picklable point-estimate closure used by the bootstrap."""

    method: str
    spec: ModelSpec | None = None
    valid_index: int = 0

    def __call__(self, data):
        if self.method == "DR":
            return estimate_dr(data, se=False).tau_hat
        if self.method == "PDR":
            return estimate_pdr(data, self.valid_index, self.spec, se=False).tau_hat
        fits = fit_nuisances(data, self.spec)
        fn = {"fPOR": estimate_fpor, "fPIPW": estimate_fpipw, "fPMR": estimate_fpmr}[self.method]
        return fn(data, fits, se=False).tau_hat


def cmd_estimate(cfg: RunConfig) -> int:
    if not cfg.data:
        raise ConfigError("estimate needs --data")
    if cfg.roles is None:
        raise ConfigError("estimate needs a 'roles' object in the config file")
    data = load_csv(cfg.data, cfg.roles)
    bad = [g for g in cfg.gammas if not 1 <= g <= data.k]
    if bad:
        raise ConfigError(f"gamma {bad[0]} is outside 1..K={data.k}")
    out = Path(cfg.out)
    rows = []
    fortified = [m for m in cfg.methods if m in ("fPOR", "fPIPW", "fPMR")]
    for gamma in cfg.gammas:
        if not fortified:
            break
        spec = cfg.model_spec(gamma)
        fits = fit_nuisances(data, spec)
        for m in fortified:
            fn = {"fPOR": estimate_fpor, "fPIPW": estimate_fpipw, "fPMR": estimate_fpmr}[m]
            res = fn(data, fits)
            if cfg.bootstrap:
                res = _with_bootstrap(res, data, _Point(m, spec), cfg)
            rows.append(_row(res, gamma))
    base = cfg.model_spec(1)
    for m in cfg.methods:
        if m == "DR":
            res = estimate_dr(data)
            if cfg.bootstrap:
                res = _with_bootstrap(res, data, _Point("DR"), cfg)
            rows.append(_row(res))
        elif m.startswith("PDR"):
            idx = range(1, data.k + 1) if m == "PDR" else [int(m[3:])]
            for j in idx:
                res = estimate_pdr(data, j, base)
                if cfg.bootstrap:
                    res = _with_bootstrap(res, data, _Point("PDR", base, j), cfg)
                rows.append(_row(res))
    _write_report(out, rows, {"command": "estimate", "data": str(cfg.data), "n": data.n, "k": data.k,
                              "gammas": cfg.gammas, "seed": cfg.seed})
    for r in rows:
        g = "" if r["gamma"] is None else f"gamma={r['gamma']} "
        ci = "" if r["ci_lower"] is None else f" [{r['ci_lower']:.4f}, {r['ci_upper']:.4f}]"
        print(f"{g}{r['label']}: {r['tau_hat']:.4f}{ci}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    data, u = generate_section4(Section4Dgp(n=cfg.n, seed=cfg.seed))
    out = Path(cfg.out)
    roles = write_csv(data, out / "data.csv")
    np.savetxt(out / "latent_u.csv", u, fmt="%.17g", header="u", comments="")
    (out / "roles.json").write_text(json.dumps({"roles": roles.to_dict()}, indent=1))
    (out / "report.json").write_text(json.dumps({"command": "simulate", "n": cfg.n, "seed": cfg.seed,
                                                 "files": ["data.csv", "latent_u.csv", "roles.json"]}, indent=1))
    print(f"wrote {cfg.n} rows to {out / 'data.csv'}")
    return EXIT_OK


def cmd_mc(cfg: RunConfig) -> int:
    spec = cfg.model_spec(1)
    estimators = estimator_set(cfg.methods, spec, k=2)
    report = mc_study(Section4Generator(), estimators, n=cfg.n, reps=cfg.reps, seed=cfg.seed,
                      bootstrap=cfg.bootstrap, workers=cfg.workers)
    out = Path(cfg.out)
    report.to_csv(out / "report.csv")
    payload = report.to_dict()
    payload["summary"] = payload.pop("methods")
    payload.update({"command": "mc", "scenario": cfg.scenario, "methods": cfg.methods})
    (out / "report.json").write_text(json.dumps(payload, indent=1))
    print(f"scenario {cfg.scenario}, n={cfg.n}, reps={cfg.reps} (x100)")
    print(report.format_table())
    return EXIT_OK


def cmd_oracle_check(cfg: RunConfig) -> int:
    from .oracles import run_oracle_checks

    results = run_oracle_checks(fixture=cfg.fixture, seed=cfg.seed)
    out = Path(cfg.out)
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status}  {r['name']}: {r['detail']}")
    (out / "report.json").write_text(json.dumps({"command": "oracle-check", "checks": results}, indent=1))
    failed = [r for r in results if not r["passed"]]
    if failed:
        (out / "errors.json").write_text(json.dumps(
            {"error": "check_failed", "failed": [r["name"] for r in failed],
             "details": {r["name"]: r["detail"] for r in failed}}, indent=1))
        return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "mc": cmd_mc, "oracle-check": cmd_oracle_check}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fortify", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--data", help="input CSV (estimate)")
        p.add_argument("--gamma", help="comma-separated gamma values, e.g. 2,4,6")
        p.add_argument("--methods", help="comma-separated methods: fPOR,fPIPW,fPMR,PDR,PDRj,DR")
        p.add_argument("--reps", type=int, help="Monte Carlo replicates (mc)")
        p.add_argument("--n", type=int, help="sample size (simulate, mc)")
        p.add_argument("--bootstrap", type=int, help="bootstrap resamples; 0 uses analytic SEs")
        p.add_argument("--seed", type=int, help="master seed; falls back to FORTIFY_SEED")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--out", help="output directory")
        p.add_argument("--scenario", choices=SCENARIOS, help="model misspecification scenario")
        p.add_argument("--fixture", help="toy-law JSON fixture (oracle-check)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out or ".")
    try:
        cfg = build_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        err = out / "errors.json"
        if err.exists():
            err.unlink()
        return COMMANDS[cfg.command](cfg)
    except FortifyError as exc:
        out.mkdir(parents=True, exist_ok=True)
        (out / "errors.json").write_text(json.dumps(exc.to_dict(), indent=1))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
