"""Observed samples O = (Y, A, Z, W, X): construction, CSV I/O and resampling.

Proxy indices are 1-based throughout the public API, matching how the
candidate treatment confounding proxies are numbered in reports.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ParseError, ProxyIndexError, RoleError, ShapeError


def _frozen(arr, ndim):
    arr = np.array(arr, dtype=float, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != ndim:
        raise ShapeError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ObservedData:
    """An immutable sample with outcome, treatment, proxies and covariates.

    Parameters
    ----------
    y : (n,) outcome
    a : (n,) binary treatment coded 0/1
    z : (n, K) candidate treatment confounding proxies, K >= 1
    w : (n, d_W) outcome confounding proxies
    x : (n, p) baseline covariates; p may be 0
    """

    y: np.ndarray
    a: np.ndarray
    z: np.ndarray
    w: np.ndarray
    x: np.ndarray
    z_names: tuple = ()
    w_names: tuple = ()
    x_names: tuple = ()
    outcome_name: str = "y"
    treatment_name: str = "a"

    def __post_init__(self):
        y = _frozen(self.y, 1)
        a = _frozen(self.a, 1)
        n = y.shape[0]
        z = _frozen(self.z, 2)
        w = _frozen(self.w, 2)
        x = np.asarray(self.x, dtype=float)
        if x.size == 0:
            x = np.empty((n, 0))
        x = _frozen(x, 2)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)

        if n < 1:
            raise ShapeError("ObservedData needs at least one row")
        for name, arr in (("a", a), ("z", z), ("w", w), ("x", x)):
            if arr.shape[0] != n:
                raise ShapeError(f"column block {name!r} has {arr.shape[0]} rows, expected {n}")
        if z.shape[1] < 1:
            raise ShapeError("at least one candidate proxy column (K >= 1) is required")
        for name, arr in (("y", y), ("a", a), ("z", z), ("w", w), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"column block {name!r} contains missing or non-finite values")
        if not np.all((a == 0.0) | (a == 1.0)):
            raise DomainError("treatment must contain only 0 and 1")
        if n > 1 and (a.min() == a.max()):
            raise DomainError("treatment must take both values 0 and 1")

        defaults = {
            "z_names": [f"z{j + 1}" for j in range(z.shape[1])],
            "w_names": [f"w{j + 1}" for j in range(w.shape[1])],
            "x_names": [f"x{j + 1}" for j in range(x.shape[1])],
        }
        for attr, width in (("z_names", z.shape[1]), ("w_names", w.shape[1]), ("x_names", x.shape[1])):
            names = tuple(getattr(self, attr)) or tuple(defaults[attr])
            if len(names) != width:
                raise ShapeError(f"{attr} has {len(names)} entries for {width} columns")
            object.__setattr__(self, attr, names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def k(self) -> int:
        return self.z.shape[1]

    @property
    def d_w(self) -> int:
        return self.w.shape[1]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def take(self, rows) -> "ObservedData":
        """Row subset (or bootstrap draw) keeping column metadata."""
        rows = np.asarray(rows)
        return ObservedData(
            y=self.y[rows], a=self.a[rows], z=self.z[rows], w=self.w[rows], x=self.x[rows],
            z_names=self.z_names, w_names=self.w_names, x_names=self.x_names,
            outcome_name=self.outcome_name, treatment_name=self.treatment_name,
        )

    def replace(self, **changes) -> "ObservedData":
        fields = dict(
            y=self.y, a=self.a, z=self.z, w=self.w, x=self.x,
            z_names=self.z_names, w_names=self.w_names, x_names=self.x_names,
            outcome_name=self.outcome_name, treatment_name=self.treatment_name,
        )
        fields.update(changes)
        return ObservedData(**fields)

    def equals(self, other: "ObservedData") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in ("y", "a", "z", "w", "x")
        )


@dataclass(frozen=True)
class ColumnRoles:
    """Binding of CSV header names to the five variable roles."""

    outcome: str
    treatment: str
    proxies_z: tuple
    proxies_w: tuple = ()
    covariates_x: tuple = ()

    def __post_init__(self):
        for attr in ("proxies_z", "proxies_w", "covariates_x"):
            value = getattr(self, attr)
            if isinstance(value, str):
                value = (value,)
            object.__setattr__(self, attr, tuple(value))
        if not self.proxies_z:
            raise RoleError("proxies_z must name at least one column")
        names = self.all_columns()
        if len(set(names)) != len(names):
            dup = sorted({c for c in names if names.count(c) > 1})
            raise RoleError(f"column(s) assigned to more than one role: {', '.join(dup)}")

    def all_columns(self) -> list:
        return [self.outcome, self.treatment, *self.proxies_z, *self.proxies_w, *self.covariates_x]

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnRoles":
        try:
            return cls(
                outcome=d["outcome"],
                treatment=d["treatment"],
                proxies_z=tuple(d["proxies_z"]),
                proxies_w=tuple(d.get("proxies_w", ())),
                covariates_x=tuple(d.get("covariates_x", ())),
            )
        except KeyError as exc:
            raise RoleError(f"roles configuration is missing {exc.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "treatment": self.treatment,
            "proxies_z": list(self.proxies_z),
            "proxies_w": list(self.proxies_w),
            "covariates_x": list(self.covariates_x),
        }


@dataclass(frozen=True)
class ProxySpec:
    gamma: int
    k: int

    def __post_init__(self):
        if not (1 <= self.gamma <= self.k):
            raise DomainError(f"gamma must satisfy 1 <= gamma <= K, got gamma={self.gamma}, K={self.k}")


def _parse_cell(text: str, row: int, column: str) -> float:
    s = text.strip()
    if s == "":
        raise ParseError(f"missing value in column {column!r} at data row {row}", row=row, column=column)
    try:
        value = float(s)
    except ValueError:
        raise ParseError(
            f"non-numeric value {text!r} in column {column!r} at data row {row}", row=row, column=column
        ) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {text!r} in column {column!r} at data row {row}", row=row, column=column)
    return value


def load_csv(path, roles: ColumnRoles) -> ObservedData:
    """Read a headed, comma-delimited UTF-8 file and bind its columns to roles.

    Data rows are reported 1-based, not counting the header. Only the columns
    named in ``roles`` are parsed; other columns are ignored.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path} is empty; a header row is required") from None
        missing = [c for c in roles.all_columns() if c not in header]
        if missing:
            raise RoleError(f"column(s) named in roles but absent from {path.name}: {', '.join(missing)}")
        index = {name: header.index(name) for name in roles.all_columns()}
        rows = []
        for i, record in enumerate(reader, start=1):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) < len(header):
                raise ParseError(f"data row {i} has {len(record)} fields, header has {len(header)}", row=i)
            rows.append([_parse_cell(record[index[c]], i, c) for c in roles.all_columns()])
    if not rows:
        raise ParseError(f"{path} has no data rows")
    table = np.asarray(rows, dtype=float)

    kz, kw = len(roles.proxies_z), len(roles.proxies_w)
    a = table[:, 1]
    bad = np.flatnonzero((a != 0.0) & (a != 1.0))
    if bad.size:
        raise DomainError(
            f"treatment column {roles.treatment!r} must be 0/1; row {bad[0] + 1} has {a[bad[0]]!r}"
        )
    return ObservedData(
        y=table[:, 0],
        a=a,
        z=table[:, 2:2 + kz],
        w=table[:, 2 + kz:2 + kz + kw],
        x=table[:, 2 + kz + kw:],
        z_names=roles.proxies_z,
        w_names=roles.proxies_w,
        x_names=roles.covariates_x,
        outcome_name=roles.outcome,
        treatment_name=roles.treatment,
    )


def default_roles(data: ObservedData) -> ColumnRoles:
    return ColumnRoles(
        outcome=data.outcome_name,
        treatment=data.treatment_name,
        proxies_z=data.z_names,
        proxies_w=data.w_names,
        covariates_x=data.x_names,
    )


def write_csv(data: ObservedData, path, roles: ColumnRoles | None = None) -> ColumnRoles:
    """Write ``data`` with 17 significant digits so that reading it back is lossless."""
    roles = roles or default_roles(data)
    table = np.column_stack([data.y, data.a, data.z, data.w, data.x])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(roles.all_columns())
        for row in table:
            writer.writerow([format(v, ".17g") for v in row])
    return roles


def demote_proxies(data: ObservedData, keep: Iterable[int]) -> ObservedData:
    """Keep the listed candidate proxies (1-based) and move the rest into X.

    Demoted columns are appended after the existing covariates, in their
    original order.
    """
    keep = sorted(set(int(j) for j in keep))
    if not keep:
        raise ProxyIndexError("keep must name at least one proxy")
    out = [j for j in keep if not 1 <= j <= data.k]
    if out:
        raise ProxyIndexError(f"proxy index {out[0]} out of range 1..{data.k}")
    if len(keep) == data.k:
        return data
    kept = [j - 1 for j in keep]
    dropped = [j for j in range(data.k) if j not in kept]
    return data.replace(
        z=data.z[:, kept],
        x=np.column_stack([data.x, data.z[:, dropped]]),
        z_names=tuple(data.z_names[j] for j in kept),
        x_names=tuple(data.x_names) + tuple(data.z_names[j] for j in dropped),
    )


def resample(data: ObservedData, seed: int) -> ObservedData:
    """Nonparametric bootstrap draw: n rows with replacement, jointly across columns."""
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, data.n, size=data.n)
    return data.take(rows)
