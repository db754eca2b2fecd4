"""Exact (Kulisch-style) accumulation and structural-zero drift probes.

The accumulator is a two's-complement fixed-point integer scaled by
``2**FRAC_BITS``.  ``FRAC_BITS`` is chosen so the product of the two smallest
binary64 subnormals is still an integer multiple of the unit in the last
place, and the integer part covers the square of the largest finite value
plus a 64-bit carry guard.  Python ints supply the width; the constants only
document which register a hardware quire would need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

FRAC_BITS = 2 * 1074  # 2**-1074 * 2**-1074
INT_BITS = 2 * 1024
CARRY_BITS = 64
# 4260 bits, padded to whole 64-bit words: 4288
ACCUMULATOR_BITS = -(-(FRAC_BITS + INT_BITS + CARRY_BITS) // 64) * 64


@dataclass(frozen=True)
class FloatFormat:
    name: str
    precision: int  # significand bits including the hidden one
    emin: int
    emax: int
    dtype: type

    @property
    def max_finite(self) -> float:
        return math.ldexp(2.0 - math.ldexp(1.0, 1 - self.precision), self.emax)


BINARY32 = FloatFormat("binary32", 24, -126, 127, np.float32)
BINARY64 = FloatFormat("binary64", 53, -1022, 1023, np.float64)
FORMATS = {"binary32": BINARY32, "f32": BINARY32, "binary64": BINARY64, "f64": BINARY64}


def get_format(fmt: str | FloatFormat) -> FloatFormat:
    if isinstance(fmt, FloatFormat):
        return fmt
    try:
        return FORMATS[fmt]
    except KeyError:
        raise ValueError(f"unknown format {fmt!r}; expected one of {sorted(FORMATS)}") from None


def round_scaled(v: int, scale_bits: int, fmt: FloatFormat = BINARY64) -> float:
    """Round ``v * 2**-scale_bits`` to ``fmt`` with round-half-even.

    The result is returned as a Python float, which holds every binary32 value
    exactly.
    """
    if v == 0:
        return 0.0
    neg = v < 0
    a = -v if neg else v
    e = a.bit_length() - 1 - scale_bits  # exponent of the leading bit
    q = max(e, fmt.emin) - (fmt.precision - 1)  # exponent of the result ulp
    shift = q + scale_bits
    if shift > 0:
        m = a >> shift
        rem = a - (m << shift)
        half = 1 << (shift - 1)
        if rem > half or (rem == half and m & 1):
            m += 1
    else:
        m = a << -shift
    if m.bit_length() + q - 1 > fmt.emax:
        out = math.inf
    else:
        out = math.ldexp(float(m), q)  # m fits in 53 bits, so this is exact
    return -out if neg else out


def _check_finite(x: float) -> None:
    if not math.isfinite(x):
        raise ValueError(f"non-finite input {x!r}")


class ExactAccumulator:
    """Sum of binary64 products with no intermediate rounding."""

    __slots__ = ("acc",)

    def __init__(self):
        self.acc = 0

    def add_product(self, x: float, y: float) -> None:
        nx, dx = float(x).as_integer_ratio()
        ny, dy = float(y).as_integer_ratio()
        # denominators are powers of two
        shift = FRAC_BITS - (dx.bit_length() - 1) - (dy.bit_length() - 1)
        self.acc += (nx * ny) << shift

    def add(self, x: float) -> None:
        self.add_product(x, 1.0)

    def value(self) -> Fraction:
        return Fraction(self.acc, 1 << FRAC_BITS)

    def to_float(self, fmt: str | FloatFormat = BINARY64) -> float:
        return round_scaled(self.acc, FRAC_BITS, get_format(fmt))

    def is_zero(self) -> bool:
        return self.acc == 0


def _validate(a: Sequence[float], b: Sequence[float]) -> None:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")


def exact_dot(a: Sequence[float], b: Sequence[float], fmt: str | FloatFormat = BINARY64) -> tuple[Fraction, float]:
    """Return the exact rational dot product and its single rounding to ``fmt``."""
    _validate(a, b)
    fmt = get_format(fmt)
    acc = ExactAccumulator()
    for x, y in zip(a, b):
        x, y = float(x), float(y)
        _check_finite(x)
        _check_finite(y)
        if fmt is BINARY32 and (float(np.float32(x)) != x or float(np.float32(y)) != y):
            raise ValueError("input not representable in binary32")
        acc.add_product(x, y)
    return acc.value(), acc.to_float(fmt)


_CHUNK = 1 << 22


def naive_dot(a, b, fmt: str | FloatFormat = BINARY64) -> float:
    """Left-to-right dot product, rounding every product and every partial sum."""
    fmt = get_format(fmt)
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    dt = fmt.dtype
    carry = dt(0)
    n = a.shape[0]
    for start in range(0, n, _CHUNK):
        xa = a[start:start + _CHUNK].astype(dt, copy=False)
        xb = b[start:start + _CHUNK].astype(dt, copy=False)
        if not (np.isfinite(xa).all() and np.isfinite(xb).all()):
            raise ValueError("non-finite input")
        prods = np.empty(xa.shape[0] + 1, dtype=dt)
        prods[0] = carry
        np.multiply(xa, xb, out=prods[1:])
        # ufunc accumulate is strictly sequential, unlike np.sum
        carry = np.add.accumulate(prods)[-1]
    return float(carry)


@dataclass(frozen=True)
class DriftResult:
    steps: int
    format: str
    structural_zero_grades: tuple[int, ...]
    exact_max: float
    naive_max: float
    exact_nonzero_steps: int
    naive_nonzero_steps: int
    first_naive_step: int | None

    def to_json(self) -> dict:
        return {
            "steps": self.steps,
            "format": self.format,
            "structural_zero_grades": list(self.structural_zero_grades),
            "exact_max": self.exact_max,
            "naive_max": self.naive_max,
            "exact_nonzero_steps": self.exact_nonzero_steps,
            "naive_nonzero_steps": self.naive_nonzero_steps,
            "first_naive_step": self.first_naive_step,
        }


def _renormalize(state: dict[int, float]) -> dict[int, float]:
    # scale by an exact power of two so the loop neither overflows nor decays
    peak = max((abs(v) for v in state.values()), default=0.0)
    if peak == 0.0:
        return state
    k = math.frexp(peak)[1]
    return {m: math.ldexp(v, -k) for m, v in state.items()}


def drift_probe(table, steps: int, fmt: str | FloatFormat = BINARY32, seed: int = 0,
                integers: bool = False) -> DriftResult:
    """Closed-loop commutator iteration ``X <- (X B - B X) / 2`` on bivectors.

    The commutator of two bivectors is a bivector, so every other grade is a
    structural zero of the loop: the contributions to grades 0 and 4 cancel
    pairwise by the algebra, not by coincidence.  Each output coefficient is
    one sum over all contributing blade pairs.  Exact mode accumulates it in an
    :class:`ExactAccumulator` and rounds once; naive mode rounds every product
    and partial sum in ``fmt``.  Both modes see the same random ``B`` sequence
    and feed their own rounded output back in.  ``integers`` draws small
    integer coefficients instead of Gaussian ones.
    """
    from .clifford import grade as blade_grade

    fmt = get_format(fmt)
    dt = fmt.dtype
    rng = np.random.default_rng(seed)
    blades = table.blades_of([2])
    if not blades:
        raise ValueError(f"{table.signature} has no bivectors")
    signs = table.signs
    keep = {2}
    zero_grades = tuple(g for g in range(table.n + 1) if g not in keep)

    def draw() -> dict[int, float]:
        if integers:
            vals = rng.integers(-3, 4, len(blades)).astype(dt)
        else:
            vals = rng.standard_normal(len(blades)).astype(dt)
        return {m: float(v) for m, v in zip(blades, vals)}

    # factor pairs per output blade: X B terms first, then -B X
    def terms(x: dict[int, float], bvec: dict[int, float]):
        out: dict[int, list[tuple[float, float]]] = {}
        for a, xa in x.items():
            for b, yb in bvec.items():
                s = signs[a][b]
                if s:
                    out.setdefault(a ^ b, []).append((0.5 * s * xa, yb))
        for b, yb in bvec.items():
            for a, xa in x.items():
                s = signs[b][a]
                if s:
                    out.setdefault(a ^ b, []).append((-0.5 * s * yb, xa))
        return out

    x_exact = draw()
    x_naive = dict(x_exact)
    exact_max = naive_max = 0.0
    exact_hits = naive_hits = 0
    first_naive = None
    for step in range(steps):
        bvec = draw()
        new_exact: dict[int, float] = {}
        for m, pairs in terms(x_exact, bvec).items():
            acc = ExactAccumulator()
            for u, v in pairs:
                acc.add_product(u, v)  # 0.5 * binary32 is exact
            new_exact[m] = acc.to_float(fmt)
        new_naive: dict[int, float] = {}
        for m, pairs in terms(x_naive, bvec).items():
            s = dt(0)
            for u, v in pairs:
                s = dt(s + dt(dt(u) * dt(v)))
            new_naive[m] = float(s)

        ez = max((abs(v) for m, v in new_exact.items() if blade_grade(m) not in keep), default=0.0)
        nz = max((abs(v) for m, v in new_naive.items() if blade_grade(m) not in keep), default=0.0)
        exact_max = max(exact_max, ez)
        naive_max = max(naive_max, nz)
        exact_hits += ez > 0
        if nz > 0:
            naive_hits += 1
            if first_naive is None:
                first_naive = step
        x_exact = _renormalize({m: v for m, v in new_exact.items() if v})
        x_naive = _renormalize({m: v for m, v in new_naive.items() if v})
        if not x_exact:
            x_exact = draw()
        if not x_naive:
            x_naive = draw()
    return DriftResult(steps, fmt.name, zero_grades, exact_max, naive_max, exact_hits, naive_hits, first_naive)
