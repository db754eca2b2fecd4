"""Physical dimensions as elements of a free abelian group.

A :class:`Dimension` is a pair of sparse exponent maps: one over base
dimensions (``kg``, ``m``, ``s``, ...) and one over dimension variables
(written ``'a`` in text).  Multiplication adds exponents, so the whole module
is integer vector arithmetic with a canonical sparse representation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

SI_BASE = ("kg", "m", "s", "A", "K", "mol", "cd")

# Expanded at parse time so equality is plain exponent comparison.
DERIVED_UNITS: dict[str, dict[str, int]] = {
    "N": {"kg": 1, "m": 1, "s": -2},
    "J": {"kg": 1, "m": 2, "s": -2},
    "W": {"kg": 1, "m": 2, "s": -3},
    "Pa": {"kg": 1, "m": -1, "s": -2},
    "Hz": {"s": -1},
    "C": {"A": 1, "s": 1},
    "V": {"kg": 1, "m": 2, "s": -3, "A": -1},
}

VAR_NAME = r"[A-Za-z_][A-Za-z0-9_]*(?:[.:][A-Za-z0-9_.:]+)?"
_SYMBOL_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_UNIT_RE = re.compile(r"^\s*('?)(" + VAR_NAME + r")\s*(?:\^\s*([+-]?\d+))?\s*$")


class DimensionError(ValueError):
    """Raised for malformed dimension text or basis declarations."""


def _natural_key(name: str) -> tuple:
    return tuple(int(p) if p.isdigit() else p for p in re.split(r"(\d+)", name))


def _canonical(items: Iterable[tuple[str, int]], key=None) -> tuple[tuple[str, int], ...]:
    acc: dict[str, int] = {}
    for k, v in items:
        acc[k] = acc.get(k, 0) + int(v)
    return tuple(sorted(((k, v) for k, v in acc.items() if v != 0), key=lambda kv: (key or _natural_key)(kv[0])))


@dataclass(frozen=True)
class BaseDimension:
    symbol: str
    index: int


class Basis:
    """Ordered set of base dimensions plus the derived aliases it admits."""

    def __init__(self, symbols: Iterable[str] = SI_BASE, aliases: Mapping[str, Mapping[str, int]] | None = None):
        self.dims = tuple(BaseDimension(s, i) for i, s in enumerate(symbols))
        seen = set()
        for d in self.dims:
            if not _SYMBOL_RE.match(d.symbol):
                raise DimensionError(f"invalid base symbol {d.symbol!r}")
            if d.symbol in seen:
                raise DimensionError(f"duplicate base symbol {d.symbol!r}")
            seen.add(d.symbol)
        self._index = {d.symbol: d.index for d in self.dims}
        source = DERIVED_UNITS if aliases is None else aliases
        # an alias is only meaningful if its expansion lives in this basis
        self.aliases = {
            name: dict(exps)
            for name, exps in source.items()
            if name not in self._index and all(s in self._index for s in exps)
        }

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(d.symbol for d in self.dims)

    def index(self, symbol: str) -> int:
        return self._index[symbol]

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Basis) and self.symbols == other.symbols and self.aliases == other.aliases

    def __hash__(self) -> int:
        return hash(self.symbols)

    def __repr__(self) -> str:
        return f"Basis({list(self.symbols)!r})"

    def sort_key(self, symbol: str) -> tuple:
        # symbols outside the basis sort after it, by name
        return (0, self._index[symbol]) if symbol in self._index else (1, symbol)


SI = Basis()


@dataclass(frozen=True)
class DimVariable:
    id: str
    origin: str | None = field(default=None, compare=False)

    def __str__(self) -> str:
        return "'" + self.id


@dataclass(frozen=True)
class Dimension:
    """Sparse exponent vector over base symbols and variable ids.

    Construct through :meth:`of` or the parser; the raw constructor expects
    already-canonical tuples.
    """

    base: tuple[tuple[str, int], ...] = ()
    vars: tuple[tuple[str, int], ...] = ()

    @classmethod
    def of(cls, base: Mapping[str, int] | None = None, vars: Mapping[str, int] | None = None) -> Dimension:
        return cls(_canonical((base or {}).items(), key=lambda s: s), _canonical((vars or {}).items()))

    @classmethod
    def var(cls, name: str, power: int = 1) -> Dimension:
        return cls.of(vars={name: power})

    @property
    def base_exponents(self) -> dict[str, int]:
        return dict(self.base)

    @property
    def var_exponents(self) -> dict[str, int]:
        return dict(self.vars)

    def is_ground(self) -> bool:
        return not self.vars

    def is_identity(self) -> bool:
        return not self.base and not self.vars

    def combine(self, other: Dimension, k: int = 1) -> Dimension:
        if k == 0:
            return self
        base = _canonical([*self.base, *((s, k * e) for s, e in other.base)], key=lambda s: s)
        vs = _canonical([*self.vars, *((v, k * e) for v, e in other.vars)])
        return Dimension(base, vs)

    def __mul__(self, other: Dimension) -> Dimension:
        return self.combine(other, 1)

    def __truediv__(self, other: Dimension) -> Dimension:
        return self.combine(other, -1)

    def __pow__(self, k: int) -> Dimension:
        return Dimension().combine(self, k)

    def inv(self) -> Dimension:
        return self ** -1

    def __str__(self) -> str:
        return format_dimension(self)

    def __repr__(self) -> str:
        return f"<{format_dimension(self)}>"


IDENTITY = Dimension()


def dim_combine(a: Dimension, b: Dimension, k: int) -> Dimension:
    """Return ``a * b**k``."""
    return a.combine(b, k)


def gradient_dimension(d_out: Dimension, d_in: Dimension) -> Dimension:
    """Dimension carried by the derivative of a ``d_in -> d_out`` map."""
    return d_out.combine(d_in, -1)


def parse_dimension(text: str, basis: Basis = SI) -> Dimension:
    """Parse ``unit (("*"|"/") unit)*`` where ``unit = symbol ("^" int)?``.

    Symbols are base dimensions, derived aliases of ``basis`` (expanded), or
    variables written with a leading apostrophe.  ``"1"`` is the identity.
    """
    if not isinstance(text, str):
        raise DimensionError(f"dimension must be a string, got {type(text).__name__}")
    stripped = text.strip()
    if stripped == "1":
        return IDENTITY
    if not stripped:
        raise DimensionError("empty dimension (use '1' for dimensionless)")
    tokens = re.split(r"([*/])", stripped)
    base: dict[str, int] = {}
    vs: dict[str, int] = {}
    sign = 1
    for pos, tok in enumerate(tokens):
        if pos % 2 == 1:
            sign = 1 if tok == "*" else -1
            continue
        if tok.strip() == "1" and pos > 0:
            continue
        m = _UNIT_RE.match(tok)
        if not m:
            raise DimensionError(f"malformed unit {tok.strip()!r} in {text!r}")
        quote, name, exp = m.groups()
        power = sign * (int(exp) if exp is not None else 1)
        if quote:
            vs[name] = vs.get(name, 0) + power
        elif name in basis:
            base[name] = base.get(name, 0) + power
        elif name in basis.aliases:
            for s, e in basis.aliases[name].items():
                base[s] = base.get(s, 0) + power * e
        else:
            raise DimensionError(f"unknown dimension symbol {name!r} in {text!r}")
    return Dimension.of(base, vs)


def format_dimension(d: Dimension, basis: Basis = SI) -> str:
    """Render ``d`` so that ``parse_dimension(format_dimension(d)) == d``."""
    parts = []
    for sym, e in sorted(d.base, key=lambda kv: basis.sort_key(kv[0])):
        parts.append(sym if e == 1 else f"{sym}^{e}")
    for v, e in d.vars:
        parts.append(f"'{v}" if e == 1 else f"'{v}^{e}")
    return "*".join(parts) if parts else "1"
