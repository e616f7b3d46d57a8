"""A small term grammar for linear-in-parameter working models.

A term is a product of factors joined by ``*``. Each factor is one of

* ``1`` (the constant),
* ``A`` (treatment),
* ``Zj``, ``Wj``, ``Xj`` (1-based column of the matching block),
* ``abs(F)`` for a variable factor ``F``,

optionally raised to a real power with ``^p``. Examples: ``A``, ``W1``,
``A*X2``, ``Z1^2``, ``W1*abs(X1)^0.5``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConstraintError, ShapeError

_FACTOR = re.compile(
    r"^\s*(?:(?P<abs>abs)\(\s*(?P<inner>[AZWX]\d*)\s*\)|(?P<var>[AZWX]\d*|1))\s*(?:\^\s*(?P<pow>[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?))?\s*$"
)


@dataclass(frozen=True)
class Factor:
    var: str  # one of "A", "Z", "W", "X"
    index: int  # 1-based column; 0 for A
    power: float = 1.0
    absolute: bool = False

    def label(self) -> str:
        core = self.var if self.var == "A" else f"{self.var}{self.index}"
        if self.absolute:
            core = f"abs({core})"
        if self.power != 1.0:
            p = int(self.power) if float(self.power).is_integer() else self.power
            core = f"{core}^{p}"
        return core


@dataclass(frozen=True)
class Term:
    factors: tuple = ()

    @property
    def label(self) -> str:
        return "*".join(f.label() for f in self.factors) or "1"

    def __str__(self) -> str:
        return self.label

    def involves(self, var: str) -> bool:
        return any(f.var == var for f in self.factors)

    @property
    def z_support(self) -> frozenset:
        return frozenset(f.index for f in self.factors if f.var == "Z")

    def substitute(self, var: str, replacement) -> "Term":
        """Replace every factor of block ``var`` using ``replacement(factor) -> list of factors``."""
        out = []
        for f in self.factors:
            out.extend(replacement(f) if f.var == var else [f])
        return Term(tuple(out))

    def evaluate(self, data, a=None, z=None) -> np.ndarray:
        """Evaluate rowwise on ``data``; ``a`` and ``z`` override the treatment and proxies."""
        n = data.n
        a = data.a if a is None else np.broadcast_to(np.asarray(a, dtype=float), (n,))
        z = data.z if z is None else z
        out = np.ones(n)
        for f in self.factors:
            if f.var == "A":
                col = a
            else:
                block = {"Z": z, "W": data.w, "X": data.x}[f.var]
                if not 1 <= f.index <= block.shape[1]:
                    raise ShapeError(
                        f"term {self.label!r} needs column {f.var}{f.index}, data has {block.shape[1]}"
                    )
                col = block[:, f.index - 1]
            if f.absolute:
                col = np.abs(col)
            if f.power != 1.0:
                col = np.power(col, f.power)
            out = out * col
        return out


def parse_term(text) -> Term:
    if isinstance(text, Term):
        return text
    text = str(text).strip()
    if not text:
        raise ConstraintError("empty term")
    factors = []
    for piece in text.split("*"):
        m = _FACTOR.match(piece)
        if m is None:
            raise ConstraintError(f"cannot parse factor {piece.strip()!r} in term {text!r}")
        name = m.group("inner") or m.group("var")
        power = float(m.group("pow")) if m.group("pow") else 1.0
        if name == "1":
            continue
        var, digits = name[0], name[1:]
        if var == "A":
            if digits:
                raise ConstraintError(f"treatment factor takes no index: {piece.strip()!r}")
            index = 0
        else:
            if not digits or int(digits) < 1:
                raise ConstraintError(f"factor {piece.strip()!r} needs a 1-based column index")
            index = int(digits)
        factors.append(Factor(var, index, power, bool(m.group("abs"))))
    return Term(tuple(factors))


def parse_terms(items: Iterable) -> tuple:
    terms = tuple(parse_term(t) for t in items)
    labels = [t.label for t in terms]
    if len(set(labels)) != len(labels):
        dup = sorted({l for l in labels if labels.count(l) > 1})
        raise ConstraintError(f"duplicate term(s): {', '.join(dup)}")
    return terms


def design(terms: Sequence[Term], data, a=None, z=None) -> np.ndarray:
    """Stack term evaluations as columns of an (n, len(terms)) matrix."""
    if not terms:
        return np.empty((data.n, 0))
    return np.column_stack([t.evaluate(data, a=a, z=z) for t in terms])


def labels(terms: Sequence[Term]) -> list:
    return [t.label for t in terms]
