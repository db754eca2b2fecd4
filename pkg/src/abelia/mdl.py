"""Description-length scoring of unifiers and a brute-force MAP oracle.

The prior over hypotheses is ``2**-|h|`` with ``|h|`` the number of free
dimension variables.  For consistent hypotheses the likelihood term is
constant, so the MAP hypothesis is the one with fewest free variables.  The
oracle below measures that count directly by enumerating a box of ground
assignments and computing the affine dimension of the solutions found.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .dims import Dimension
from .unify import (
    DimEquation,
    Substitution,
    UnifyError,
    free_variable_count,
    solve_system,
    system_variables,
)

MAX_VARS = 4
MAX_BOUND = 6


@dataclass(frozen=True)
class MdlScore:
    free_vars: int
    score: Fraction
    constraints_violated: int = 0

    def __post_init__(self):
        if self.score != Fraction(1, 2 ** self.free_vars):
            raise ValueError("score must be exactly 2**-free_vars")


def description_length(s: Substitution, system_vars: Iterable[str]) -> MdlScore:
    k = free_variable_count(s, system_vars)
    return MdlScore(k, Fraction(1, 2 ** k), 0)


class NoSolutionInBox(Exception):
    """The box holds no ground solution; possibly an artifact of the bound."""


def _coefficients(eqs: Sequence[DimEquation], vars_: Sequence[str]):
    vidx = {v: j for j, v in enumerate(vars_)}
    bases: list[str] = []
    for eq in eqs:
        for b, _ in eq.term.base:
            if b not in bases:
                bases.append(b)
    a = np.zeros((len(eqs), len(vars_)), dtype=np.int64)
    r = np.zeros((len(eqs), max(len(bases), 1)), dtype=np.int64)
    for i, eq in enumerate(eqs):
        t = eq.term
        for v, e in t.vars:
            if v not in vidx:
                raise ValueError(f"variable {v!r} not in the declared variable list")
            a[i, vidx[v]] = e
        for b, e in t.base:
            r[i, bases.index(b)] = e
    return a, r


def _box(nv: int, bound: int) -> np.ndarray:
    axis = np.arange(-bound, bound + 1, dtype=np.int64)
    if nv == 0:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.meshgrid(*([axis] * nv), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def box_solutions(eqs: Sequence[DimEquation], vars_: Sequence[str], bound: int) -> list[np.ndarray]:
    """Ground solutions in ``[-bound, bound]``, one array per base coordinate.

    The system is linear with the same coefficient matrix on every base
    coordinate, so the assignment space factors into independent coordinates.
    """
    a, r = _coefficients(eqs, vars_)
    pts = _box(len(vars_), bound)
    ax = pts @ a.T  # (points, equations)
    return [pts[np.all(ax + r[:, j] == 0, axis=1)] for j in range(r.shape[1])]


def _rank(rows: np.ndarray) -> int:
    """Exact rank of a small integer matrix by fraction-free elimination."""
    m = [[int(x) for x in row] for row in rows]
    rank = 0
    ncols = len(m[0]) if m else 0
    for c in range(ncols):
        piv = next((i for i in range(rank, len(m)) if m[i][c]), None)
        if piv is None:
            continue
        m[rank], m[piv] = m[piv], m[rank]
        p = m[rank]
        for i in range(rank + 1, len(m)):
            if m[i][c]:
                f = m[i][c]
                m[i] = [p[c] * x - f * y for x, y in zip(m[i], p)]
        rank += 1
    return rank


def brute_force_map(eqs: Sequence[DimEquation], vars_: Sequence[str], bound: int) -> int:
    """Affine dimension of the boxed solution set (oracle free-variable count).

    Raises :class:`NoSolutionInBox` when some base coordinate has no solution
    in the box.
    """
    if len(vars_) > MAX_VARS:
        raise ValueError(f"at most {MAX_VARS} variables")
    if not 0 <= bound <= MAX_BOUND:
        raise ValueError(f"bound must be in 0..{MAX_BOUND}")
    dims = []
    for sols in box_solutions(eqs, vars_, bound):
        if len(sols) == 0:
            raise NoSolutionInBox("no ground solution in the box")
        diffs = sols[1:] - sols[0]
        dims.append(_rank(diffs) if len(diffs) else 0)
    # every coordinate shares the coefficient matrix; a smaller count means the box clipped it
    return max(dims)


def map_agreement(eqs: Sequence[DimEquation], vars_: Sequence[str], bound: int) -> bool | None:
    """Compare the unifier's free-variable count against the oracle.

    Returns ``None`` for a box artifact (solvable, but no solution in the box).
    """
    try:
        s = solve_system(eqs)
    except UnifyError:
        s = None
    try:
        oracle = brute_force_map(eqs, vars_, bound)
    except NoSolutionInBox:
        return True if s is None else None
    if s is None:
        return False
    return description_length(s, vars_).free_vars == oracle


def random_system(rng: random.Random, n_vars: int, n_eqs: int, coeff: int = 1, planted: int = 2,
                  bases: Sequence[str] = ("m", "s"), solvable: bool = True) -> tuple[list[DimEquation], list[str]]:
    """Random small system; ``solvable`` plants a ground solution in ``[-planted, planted]``."""
    names = [f"v{i}" for i in range(n_vars)]
    x0 = {v: {b: rng.randint(-planted, planted) for b in bases} for v in names}
    eqs = []
    for i in range(n_eqs):
        cs = {v: rng.randint(-coeff, coeff) for v in names}
        lhs = Dimension.of(vars=cs)
        if solvable:
            rhs = Dimension.of({b: sum(c * x0[v][b] for v, c in cs.items()) for b in bases})
        else:
            rhs = Dimension.of({b: rng.randint(-coeff, coeff) for b in bases})
        eqs.append(DimEquation(lhs, rhs, f"eq {i}"))
    return eqs, names


@dataclass
class MdlStats:
    trials: int = 0
    agreed: int = 0
    disagreed: int = 0
    skipped: int = 0
    unsolvable: int = 0
    disagreements: list[str] = field(default_factory=list)

    @property
    def rate(self) -> float:
        done = self.agreed + self.disagreed
        return self.agreed / done if done else 1.0

    def to_json(self) -> dict:
        return {"trials": self.trials, "agreed": self.agreed, "disagreed": self.disagreed,
                "skipped": self.skipped, "unsolvable": self.unsolvable, "agreement_rate": self.rate}


def mdl_verify(trials: int, n_vars: int = 4, bound: int = 3, seed: int = 0, coeff: int = 1,
               unsolvable_every: int = 0) -> MdlStats:
    """Run ``map_agreement`` on random systems.

    Every ``unsolvable_every``-th trial (0 disables) draws an unplanted
    right-hand side, which is usually unsolvable.
    """
    rng = random.Random(seed)
    stats = MdlStats()
    for i in range(trials):
        nv = rng.randint(1, n_vars)
        planted = not (unsolvable_every and i % unsolvable_every == unsolvable_every - 1)
        # an unplanted right side only conflicts reliably when the system is overdetermined
        ne = rng.randint(0, nv) if planted else nv + 1
        eqs, names = random_system(rng, nv, ne, coeff=coeff, planted=min(bound, 2), solvable=planted)
        try:
            solve_system(eqs)
        except UnifyError:
            stats.unsolvable += 1
        ok = map_agreement(eqs, names, bound)
        stats.trials += 1
        if ok is None:
            stats.skipped += 1
        elif ok:
            stats.agreed += 1
        else:
            stats.disagreed += 1
            stats.disagreements.append("; ".join(f"{eq.lhs} = {eq.rhs}" for eq in eqs))
    return stats


__all__ = [
    "MdlScore",
    "MdlStats",
    "NoSolutionInBox",
    "box_solutions",
    "brute_force_map",
    "description_length",
    "map_agreement",
    "mdl_verify",
    "random_system",
]
