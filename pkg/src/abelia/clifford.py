"""Cayley tables and grade inference for Clifford algebras Cl(p, q, r).

Blades are bitmasks over the generators.  Generators are indexed degenerate
first, then positive, then negative, so Cl(3,0,1) puts the null generator at
index 0 as in the usual PGA layout (``e0``).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product
from typing import Iterable, Mapping

MAX_GENERATORS = 12


class SignatureError(ValueError):
    pass


@dataclass(frozen=True)
class Signature:
    p: int
    q: int = 0
    r: int = 0

    def __post_init__(self):
        if min(self.p, self.q, self.r) < 0:
            raise SignatureError(f"negative generator count in {self}")
        if self.n > MAX_GENERATORS:
            raise SignatureError(f"Cl{self.pqr} has {self.n} generators; at most {MAX_GENERATORS} supported")

    @property
    def n(self) -> int:
        return self.p + self.q + self.r

    @property
    def pqr(self) -> tuple[int, int, int]:
        return (self.p, self.q, self.r)

    @property
    def metric(self) -> tuple[int, ...]:
        """Square of each generator, in index order."""
        return (0,) * self.r + (1,) * self.p + (-1,) * self.q

    @property
    def degenerate_mask(self) -> int:
        return (1 << self.r) - 1

    def __str__(self) -> str:
        return f"Cl({self.p},{self.q},{self.r})"


def grade(mask: int) -> int:
    return bin(mask).count("1")


def blade_name(mask: int, sig: Signature) -> str:
    if not mask:
        return "1"
    # indices start at 0 when there is a null generator, else at 1
    base = 0 if sig.r else 1
    return "e" + "".join(str(i + base) for i in range(sig.n) if mask >> i & 1)


def reorder_sign(a: int, b: int) -> int:
    """Sign from sorting the generator word ``a b`` by adjacent transpositions."""
    a >>= 1
    swaps = 0
    while a:
        swaps += grade(a & b)
        a >>= 1
    return -1 if swaps & 1 else 1


def blade_product(a: int, b: int, metric: tuple[int, ...]) -> tuple[int, int]:
    sign = reorder_sign(a, b)
    common = a & b
    i = 0
    while common:
        if common & 1:
            sign *= metric[i]
            if not sign:
                break
        common >>= 1
        i += 1
    return sign, a ^ b


class CayleyTable:
    """All ``2^n x 2^n`` blade products as ``(sign, result_mask)``."""

    def __init__(self, sig: Signature):
        self.signature = sig
        size = 1 << sig.n
        metric = sig.metric
        self.size = size
        self.signs = [[0] * size for _ in range(size)]
        for a in range(size):
            row = self.signs[a]
            for b in range(size):
                row[b] = blade_product(a, b, metric)[0]

    def entry(self, a: int, b: int) -> tuple[int, int]:
        return self.signs[a][b], a ^ b

    @property
    def n(self) -> int:
        return self.signature.n

    def __len__(self) -> int:
        return self.size * self.size

    @cached_property
    def blades_by_grade(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {k: [] for k in range(self.n + 1)}
        for mask in range(self.size):
            out[grade(mask)].append(mask)
        return out

    def blades_of(self, grades: Iterable[int]) -> list[int]:
        return sorted(m for g in set(grades) for m in self.blades_by_grade.get(g, ()))

    def rows(self) -> list[dict]:
        return [
            {"a": blade_name(a, self.signature), "b": blade_name(b, self.signature),
             "sign": self.signs[a][b], "result": blade_name(a ^ b, self.signature)}
            for a in range(self.size)
            for b in range(self.size)
        ]


_TABLES: dict[Signature, CayleyTable] = {}


def build_cayley(sig: Signature | tuple[int, int, int]) -> CayleyTable:
    if not isinstance(sig, Signature):
        sig = Signature(*sig)
    table = _TABLES.get(sig)
    if table is None:
        table = _TABLES[sig] = CayleyTable(sig)
    return table


def _check_grade(k: int, n: int) -> None:
    if not 0 <= k <= n:
        raise ValueError(f"grade {k} outside 0..{n}")


def grade_outer(j: int, k: int, n: int) -> frozenset[int]:
    _check_grade(j, n)
    _check_grade(k, n)
    return frozenset({j + k}) if j + k <= n else frozenset()


def grade_geometric(j: int, k: int, n: int) -> frozenset[int]:
    _check_grade(j, n)
    _check_grade(k, n)
    return frozenset(g for g in (abs(k - j) + 2 * i for i in range(min(j, k) + 1)) if g <= n)


def grade_product_set(t: CayleyTable, A: Iterable[int], B: Iterable[int]) -> frozenset[int]:
    """Grades reachable by a nonzero table entry between grade-A and grade-B blades."""
    out = set()
    bs = t.blades_of(B)
    for a in t.blades_of(A):
        row = t.signs[a]
        for b in bs:
            if row[b]:
                out.add(grade(a ^ b))
    return frozenset(out)


def sparsity_count(t: CayleyTable, A: Iterable[int], B: Iterable[int]) -> tuple[int, int]:
    as_, bs = t.blades_of(A), t.blades_of(B)
    nonzero = sum(1 for a in as_ for b in bs if t.signs[a][b])
    return nonzero, len(as_) * len(bs)


def outer_product_set(A: Iterable[int], B: Iterable[int], n: int) -> frozenset[int]:
    out: set[int] = set()
    for j, k in product(set(A), set(B)):
        out |= grade_outer(j, k, n)
    return frozenset(out)


def max_fan_in(t: CayleyTable, A: Iterable[int], B: Iterable[int]) -> int:
    """Largest number of nonzero blade pairs landing on one output blade."""
    counts: dict[int, int] = {}
    bs = t.blades_of(B)
    for a in t.blades_of(A):
        row = t.signs[a]
        for b in bs:
            if row[b]:
                counts[a ^ b] = counts.get(a ^ b, 0) + 1
    return max(counts.values(), default=0)


class Multivector:
    """Sparse real multivector; zero coefficients are never stored."""

    __slots__ = ("signature", "coeffs")

    def __init__(self, signature: Signature, coeffs: Mapping[int, float] | None = None):
        self.signature = signature
        self.coeffs = {int(k): v for k, v in (coeffs or {}).items() if v != 0}

    @classmethod
    def scalar(cls, sig: Signature, value: float) -> Multivector:
        return cls(sig, {0: value})

    @classmethod
    def blade(cls, sig: Signature, mask: int, value: float = 1.0) -> Multivector:
        return cls(sig, {mask: value})

    def grade_set(self) -> frozenset[int]:
        return frozenset(grade(m) for m in self.coeffs)

    def grade_part(self, k: int) -> Multivector:
        return Multivector(self.signature, {m: v for m, v in self.coeffs.items() if grade(m) == k})

    def _check(self, other: Multivector) -> None:
        if not isinstance(other, Multivector) or other.signature != self.signature:
            raise SignatureError("multivector signature mismatch")

    def __add__(self, other: Multivector) -> Multivector:
        if not isinstance(other, Multivector):
            return self + Multivector.scalar(self.signature, other)
        self._check(other)
        out = dict(self.coeffs)
        for m, v in other.coeffs.items():
            out[m] = out.get(m, 0) + v
        return Multivector(self.signature, out)

    __radd__ = __add__

    def __neg__(self) -> Multivector:
        return Multivector(self.signature, {m: -v for m, v in self.coeffs.items()})

    def __sub__(self, other: Multivector) -> Multivector:
        return self + (-other)

    def __rsub__(self, other) -> Multivector:
        return (-self) + other

    def scale(self, c: float) -> Multivector:
        return Multivector(self.signature, {m: c * v for m, v in self.coeffs.items()})

    def __mul__(self, other):
        if isinstance(other, Multivector):
            return mv_geometric_product(build_cayley(self.signature), self, other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __truediv__(self, c: float) -> Multivector:
        return Multivector(self.signature, {m: v / c for m, v in self.coeffs.items()})

    def __eq__(self, other) -> bool:
        if isinstance(other, Multivector):
            return self.signature == other.signature and self.coeffs == other.coeffs
        if not self.coeffs:
            return other == 0
        return set(self.coeffs) == {0} and self.coeffs[0] == other

    def __hash__(self):
        return hash((self.signature, frozenset(self.coeffs.items())))

    def scalar_part(self) -> float:
        return self.coeffs.get(0, 0.0)

    def max_abs(self) -> float:
        return max((abs(v) for v in self.coeffs.values()), default=0.0)

    def __repr__(self) -> str:
        if not self.coeffs:
            return "0"
        return " + ".join(f"{v!r}*{blade_name(m, self.signature)}" for m, v in sorted(self.coeffs.items()))


def _bilinear(t: CayleyTable, x: Multivector, y: Multivector, keep) -> Multivector:
    from .numeric import ExactAccumulator

    if x.signature != t.signature or y.signature != t.signature:
        raise SignatureError(f"multivector signature does not match table {t.signature}")
    accs: dict[int, ExactAccumulator] = {}
    for a, xa in x.coeffs.items():
        row = t.signs[a]
        for b, yb in y.coeffs.items():
            s = row[b]
            if s and keep(a, b):
                acc = accs.get(a ^ b)
                if acc is None:
                    acc = accs[a ^ b] = ExactAccumulator()
                acc.add_product(xa if s > 0 else -xa, yb)
    return Multivector(t.signature, {m: acc.to_float() for m, acc in accs.items()})


def mv_geometric_product(t: CayleyTable, x: Multivector, y: Multivector) -> Multivector:
    """Geometric product with each output coefficient accumulated exactly."""
    return _bilinear(t, x, y, lambda a, b: True)


def mv_outer_product(t: CayleyTable, x: Multivector, y: Multivector) -> Multivector:
    return _bilinear(t, x, y, lambda a, b: not a & b)


def mv_scalar_product(t: CayleyTable, x: Multivector, y: Multivector) -> Multivector:
    return _bilinear(t, x, y, lambda a, b: a == b)
