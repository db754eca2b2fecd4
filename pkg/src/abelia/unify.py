"""Principal unification of dimension equations.

Every equation ``lhs = rhs`` is moved to homogeneous form
``lhs * rhs**-1 = 1`` and split into an integer row over the variables and a
residual row over the base symbols, giving the system ``A @ X + R = 0`` where
each variable's value is a row of ``X`` (one integer per base symbol).

Solving happens in two exact stages:

1. Fraction-free (Bareiss) elimination finds the rank, the pivot variables
   and, for each pivot, ``D * x_pivot`` as an integer affine function of the
   free variables, with ``D`` the pivot determinant.
2. The free variables must make every ``D * x_pivot`` divisible by ``D``.
   That is a congruence system modulo ``D``; its solution lattice is put in
   reduced Hermite normal form with all arithmetic reduced modulo ``D``.

Both stages keep integers bounded by minors of the input, so the cost stays
polynomial without the coefficient explosion of naive integer column
elimination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd
from typing import Iterable, Sequence

from .dims import Dimension, IDENTITY

try:
    from gmpy2 import mpz as _Z
except ImportError:  # pragma: no cover
    _Z = int


@dataclass(frozen=True)
class DimEquation:
    lhs: Dimension
    rhs: Dimension
    provenance: str = ""

    @property
    def term(self) -> Dimension:
        return self.lhs / self.rhs


@dataclass(frozen=True)
class Substitution:
    bindings: tuple[tuple[str, Dimension], ...] = ()
    free: frozenset[str] = field(default_factory=frozenset)

    @property
    def mapping(self) -> dict[str, Dimension]:
        return dict(self.bindings)

    def __contains__(self, var: str) -> bool:
        return any(v == var for v, _ in self.bindings)

    def get(self, var: str) -> Dimension | None:
        for v, d in self.bindings:
            if v == var:
                return d
        return None

    def apply(self, d: Dimension) -> Dimension:
        return apply_substitution(self, d)

    def __len__(self) -> int:
        return len(self.bindings)


EMPTY = Substitution()


class UnifyError(Exception):
    """Unsatisfiable dimension constraint.

    ``kind`` is ``"inconsistent"`` when a variable-free residual is not the
    identity, and ``"divisibility"`` when the residual can only be matched
    with a fractional exponent (``pivot`` does not divide ``residual``).
    """

    def __init__(self, kind: str, residual: Dimension, provenance: Sequence[str] = (), pivot: int | None = None):
        self.kind = kind
        self.residual = residual
        self.provenance = list(provenance)
        self.pivot = pivot
        super().__init__(self.describe())

    def describe(self) -> str:
        where = f" at {', '.join(self.provenance)}" if self.provenance else ""
        if self.kind == "divisibility":
            return f"no integer solution{where}: exponent {self.pivot} does not divide residual {self.residual}"
        return f"inconsistent dimensions{where}: residual {self.residual} is not dimensionless"

    def to_json(self) -> dict:
        out = {"kind": self.kind, "residual": str(self.residual), "provenance": list(self.provenance)}
        if self.pivot is not None:
            out["pivot"] = self.pivot
        return out


def apply_substitution(s: Substitution, d: Dimension) -> Dimension:
    if not s.bindings or not d.vars:
        return d
    table = s.mapping
    out = Dimension(d.base, tuple((v, e) for v, e in d.vars if v not in table))
    for v, e in d.vars:
        if v in table:
            out = out.combine(table[v], e)
    return out


def _ordered_symbols(eqs: Sequence[DimEquation]) -> tuple[list[str], list[str]]:
    vars_: dict[str, None] = {}
    bases: dict[str, None] = {}
    for eq in eqs:
        for side in (eq.lhs, eq.rhs):
            for v, _ in side.vars:
                vars_.setdefault(v, None)
            for b, _ in side.base:
                bases.setdefault(b, None)
    return list(vars_), list(bases)


class _Infeasible(Exception):
    pass


def _bareiss(rows: list[list[int]], n: int) -> tuple[list[list[int]], list[int]]:
    """Fraction-free forward elimination on the first ``n`` columns.

    Row pivot: smallest nonzero magnitude in the column, ties to the lowest
    row.  Returns the echelon rows and the pivot columns; rows past the rank
    are zero on the first ``n`` columns.
    """
    m = len(rows)
    prev = 1
    r = 0
    pivots: list[int] = []
    for c in range(n):
        if r == m:
            break
        best = None
        for i in range(r, m):
            a = rows[i][c]
            if a and (best is None or abs(a) < abs(rows[best][c])):
                best = i
        if best is None:
            continue
        rows[r], rows[best] = rows[best], rows[r]
        pr = rows[r]
        pv = pr[c]
        tail = pr[c:]
        for i in range(r + 1, m):
            row = rows[i]
            a = row[c]
            if a:
                rows[i] = row[:c] + [(pv * x - a * y) // prev for x, y in zip(row[c:], tail)]
            elif prev != pv:
                rows[i] = row[:c] + [pv * x // prev for x in row[c:]]
        prev = pv
        pivots.append(c)
        r += 1
    return rows, pivots


def _xgcd(a: int, b: int) -> tuple[int, int, int]:
    """``(g, s, t)`` with ``s*a + t*b == g == gcd(a, b) > 0``."""
    s0, s1, t0, t1 = 1, 0, 0, 1
    while b:
        q, r = divmod(a, b)
        a, b = b, r
        s0, s1 = s1, s0 - q * s1
        t0, t1 = t1, t0 - q * t1
    if a < 0:
        return -a, -s0, -t0
    return a, s0, t0


def _reduce_mod(v: list[int], d: int) -> list[int]:
    return [x % d for x in v]


def _congruence_kernel(cons: list[list[int]], size: int, d: int) -> list[list[int]]:
    """Generators (mod ``d``) of ``{w : c . w = 0 (mod d)}`` for every row ``c``.

    Column elimination over Z/d: each constraint row is cleared by Euclid
    steps, and the surviving pivot column is scaled by ``d / gcd(g, d)``.
    Columns are stored as ``w`` followed by their images under ``cons``.
    """
    nc = len(cons)
    cols = []
    for j in range(size):
        w = [0] * size
        w[j] = 1
        cols.append(w + [row[j] % d for row in cons])
    for t in range(nc):
        at = size + t
        while True:
            nz = [j for j, col in enumerate(cols) if col[at] % d]
            if len(nz) <= 1:
                break
            p = min(nz, key=lambda j: (cols[j][at], j))
            piv = cols[p]
            pv = piv[at]
            for j in nz:
                if j != p:
                    q = cols[j][at] // pv
                    cols[j] = [(a - q * b) % d for a, b in zip(cols[j], piv)]
        nz = [j for j, col in enumerate(cols) if col[at] % d]
        if nz:
            p = nz[0]
            scale = d // gcd(cols[p][at], d)
            cols[p] = [(scale * x) % d for x in cols[p]]
    return [col[:size] for col in cols]


def _hnf_mod(gens: list[list[int]], size: int, d: int) -> list[list[int]]:
    """Reduced lower-triangular column HNF of ``span(gens) + d * Z^size``.

    Returns ``size`` columns; column ``i`` has zeros above row ``i``, a
    positive diagonal dividing ``d``, and entries left of each diagonal
    reduced into ``[0, diagonal)``.
    """
    pool = [_reduce_mod(g, d) for g in gens if any(x % d for x in g)]
    basis: list[list[int]] = []
    for i in range(size):
        piv = [0] * size
        piv[i] = d
        rest = []
        for g in pool:
            b = g[i]
            if not b:
                rest.append(g)
                continue
            a = piv[i]
            q, s, t = _xgcd(a, b)
            ua, ub = b // q, a // q
            # [[s, t], [ua, -ub]] is unimodular; the second row clears entry i
            new_piv = [s * x + t * y for x, y in zip(piv, g)]
            other = [(ua * x - ub * y) % d for x, y in zip(piv, g)]
            new_piv[i + 1:] = [x % d for x in new_piv[i + 1:]]
            piv = new_piv
            if any(other):
                rest.append(other)
        basis.append(piv)
        pool = rest
    # reduce entries left of each diagonal
    for j in range(size):
        hj = basis[j][j]
        for i in range(j):
            q = basis[i][j] // hj
            if q:
                basis[i] = basis[i][:j] + [a - q * b for a, b in zip(basis[i][j:], basis[j][j:])]
    return basis


def _solve_core(a: list[list[int]], r: list[list[int]], n: int, nb: int):
    """Solve ``A X + R = 0`` over the integers.

    Returns ``(x0, free_dirs, anchors)``: ``x0[j]`` is variable ``j``'s base
    exponent vector for the particular solution, ``free_dirs[f][j]`` its
    coefficient on free direction ``f``, ``anchors[f]`` the variable index a
    direction may be named after (or None).  Raises ``_Infeasible``.
    """
    rows = [[_Z(x) for x in ai + ri] for ai, ri in zip(a, r)]
    rows, piv_cols = _bareiss(rows, n)
    rank = len(piv_cols)
    for i in range(rank, len(rows)):
        if any(rows[i][n:]):
            raise _Infeasible
    pset = set(piv_cols)
    fcols = [c for c in range(n) if c not in pset]
    k = len(fcols)
    d = rows[rank - 1][piv_cols[-1]] if rank else 1
    # coefficient vectors of D * x_pivot over (free vars ++ base symbols)
    v: list[list[int]] = [[] for _ in range(rank)]
    for t in range(rank - 1, -1, -1):
        row = rows[t]
        acc = [-d * row[c] for c in fcols] + [-d * x for x in row[n:]]
        for s in range(t + 1, rank):
            u = row[piv_cols[s]]
            if u:
                acc = [x - u * y for x, y in zip(acc, v[s])]
        diag = row[piv_cols[t]]
        v[t] = [x // diag for x in acc]
    if d < 0:
        d = -d
        v = [[-x for x in vt] for vt in v]

    if d == 1:
        t0 = [[0] * nb for _ in range(k)]
        h0 = [[int(i == j) for j in range(k)] for i in range(k)]  # h0[col][row]
    else:
        # lattice over (tau_1..tau_nb, u_1..u_k): E tau + G u = 0 (mod d)
        cons = [vt[k:] + vt[:k] for vt in v]
        size = nb + k
        gens = _congruence_kernel(cons, size, d)
        basis = _hnf_mod(gens, size, d)
        for b in range(nb):
            if basis[b][b] != 1:
                raise _Infeasible
        t0 = [[basis[b][nb + f] for b in range(nb)] for f in range(k)]
        h0 = [[basis[nb + c][nb + f] for f in range(k)] for c in range(k)]

    x0 = [[0] * nb for _ in range(n)]
    dirs = [[0] * n for _ in range(k)]
    for f, c in enumerate(fcols):
        x0[c] = list(t0[f])
        for col in range(k):
            dirs[col][c] = h0[col][f]
    for t, pc in enumerate(piv_cols):
        vf, vb = v[t][:k], v[t][k:]
        ground = [sum(vf[f] * t0[f][b] for f in range(k) if vf[f]) + vb[b] for b in range(nb)]
        assert all(g % d == 0 for g in ground)
        x0[pc] = [g // d for g in ground]
        for col in range(k):
            s = sum(vf[f] * h0[col][f] for f in range(col, k) if vf[f])
            assert s % d == 0
            dirs[col][pc] = s // d
    anchors = [fcols[col] if h0[col][col] == 1 else None for col in range(k)]
    x0 = [[int(x) for x in row] for row in x0]
    dirs = [[int(x) for x in row] for row in dirs]
    return x0, dirs, anchors


def _matrices(eqs: Sequence[DimEquation], names: list[str], bases: list[str]):
    vidx = {v: j for j, v in enumerate(names)}
    bidx = {b: j for j, b in enumerate(bases)}
    a = [[0] * len(names) for _ in eqs]
    r = [[0] * len(bases) for _ in eqs]
    for i, eq in enumerate(eqs):
        t = eq.term
        for v, e in t.vars:
            a[i][vidx[v]] = e
        for b, e in t.base:
            r[i][bidx[b]] = e
    return a, r


def _substitution(names, bases, x0, dirs, anchors, prefix) -> Substitution:
    labels = []
    fresh = 0
    for anc in anchors:
        if anc is None:
            fresh += 1
            labels.append(f"{prefix}{fresh}")
        else:
            labels.append(names[anc])
    bindings = []
    free: set[str] = set()
    for j, v in enumerate(names):
        vs = {labels[f]: col[j] for f, col in enumerate(dirs) if col[j]}
        d = Dimension.of({bases[b]: x0[j][b] for b in range(len(bases))}, vs)
        free.update(vs)
        if d != Dimension.var(v):
            bindings.append((v, d))
    return Substitution(tuple(bindings), frozenset(free))


def _dense_solve(eqs: Sequence[DimEquation], prefix: str) -> Substitution | None:
    names, bases = _ordered_symbols(eqs)
    a, r = _matrices(eqs, names, bases)
    try:
        x0, dirs, anchors = _solve_core(a, r, len(names), len(bases))
    except _Infeasible:
        return None
    return _substitution(names, bases, x0, dirs, anchors, prefix)


def _subst_map(m: dict[str, Dimension], d: Dimension) -> Dimension:
    if not d.vars or not m:
        return d
    hit = [(v, e) for v, e in d.vars if v in m]
    if not hit:
        return d
    out = Dimension(d.base, tuple((v, e) for v, e in d.vars if v not in m))
    for v, e in hit:
        out = out.combine(m[v], e)
    return out


_SPARSE_VARS = 4


def _unit_pass(eqs: Sequence[DimEquation], order: dict[str, int]):
    """Eliminate variables that occur with exponent +-1.

    A unit coefficient is the smallest possible pivot, so this is the same
    pivot rule as the dense stage, applied sparsely: chains of simple
    equations (the common case for graphs) never reach the dense solver.
    Returns ``(bindings, rest)`` with bindings fully resolved against each
    other, or ``None`` when a variable-free residual is not the identity.
    """
    bound: dict[str, Dimension] = {}
    users: dict[str, set[str]] = {}  # var -> bound vars whose binding mentions it
    rest: list[DimEquation] = []
    for eq in eqs:
        t = _subst_map(bound, eq.term)
        if not t.vars:
            if t.base:
                return None
            continue
        units = [(order[v], v, e) for v, e in t.vars if e in (1, -1)]
        # dense rows go to Bareiss, which keeps coefficient growth in check
        if not units or len(t.vars) > _SPARSE_VARS:
            rest.append(eq)
            continue
        _, v, c = min(units)
        # v**c * other = 1  =>  v = other**-c
        other = Dimension(t.base, tuple((u, e) for u, e in t.vars if u != v))
        value = other ** -c
        single = {v: value}
        for w in users.pop(v, ()):
            old = bound[w]
            bound[w] = _subst_map(single, old)
            for u, _ in bound[w].vars:
                users.setdefault(u, set()).add(w)
        bound[v] = value
        for u, _ in value.vars:
            users.setdefault(u, set()).add(v)
    rest = [DimEquation(_subst_map(bound, eq.term), IDENTITY, eq.provenance) for eq in rest]
    return bound, rest


def _try_solve(eqs: Sequence[DimEquation], prefix: str) -> Substitution | None:
    names, _ = _ordered_symbols(eqs)
    order = {v: i for i, v in enumerate(names)}
    pre = _unit_pass(eqs, order)
    if pre is None:
        return None
    bound, rest = pre
    if not bound:
        return _dense_solve(eqs, prefix)
    tail = _dense_solve(rest, prefix)
    if tail is None:
        return None
    final = dict(tail.bindings)
    for v, d in bound.items():
        final[v] = _subst_map(final, d) if tail.bindings else d
    free = set(tail.free)
    for d in final.values():
        free.update(v for v, _ in d.vars)
    bindings = tuple(sorted(final.items(), key=lambda kv: order[kv[0]]))
    return Substitution(bindings, frozenset(free))


def solve_system(eqs: Iterable[DimEquation], fresh_prefix: str = "k:") -> Substitution:
    """Most general simultaneous unifier of ``eqs``.

    Raises :class:`UnifyError` naming the first equation (in order) that
    cannot be added to those before it.
    """
    eqs = list(eqs)
    s = _try_solve(eqs, fresh_prefix)
    if s is not None:
        return s
    i = _first_failing(eqs, fresh_prefix)
    before = _try_solve(eqs[:i], fresh_prefix)
    term = apply_substitution(before, eqs[i].term)
    prov = [eqs[i].provenance] if eqs[i].provenance else []
    residual = Dimension(term.base)
    if not term.vars:
        raise UnifyError("inconsistent", residual, prov)
    g = 0
    for _, e in term.vars:
        g = gcd(g, e)
    raise UnifyError("divisibility", residual, prov, pivot=g)


def _first_failing(eqs: list[DimEquation], prefix: str) -> int:
    lo, hi = 1, len(eqs)
    while lo < hi:
        mid = (lo + hi) // 2
        if _try_solve(eqs[:mid], prefix) is None:
            hi = mid
        else:
            lo = mid + 1
    return lo - 1


def unify(a: Dimension, b: Dimension, provenance: str = "") -> Substitution:
    return solve_system([DimEquation(a, b, provenance)])


def solve_collect(eqs: Sequence[DimEquation]) -> tuple[Substitution, list[UnifyError]]:
    """Solve, dropping each failing equation in turn, to report every error."""
    remaining = list(eqs)
    errors: list[UnifyError] = []
    while True:
        try:
            return solve_system(remaining), errors
        except UnifyError as err:
            errors.append(err)
            del remaining[_first_failing(remaining, "k:")]


def free_variable_count(s: Substitution, system_vars: Iterable[str]) -> int:
    """Nullity of the constraint matrix the unifier came from."""
    system_vars = set(system_vars)
    bound = {v for v, _ in s.bindings}
    return len(system_vars - bound) + len(set(s.free) - system_vars)


def system_variables(eqs: Iterable[DimEquation]) -> list[str]:
    return _ordered_symbols(list(eqs))[0]


def is_solution(s: Substitution, eqs: Iterable[DimEquation]) -> bool:
    return all(apply_substitution(s, eq.lhs) == apply_substitution(s, eq.rhs) for eq in eqs)


__all__ = [
    "DimEquation",
    "Substitution",
    "UnifyError",
    "EMPTY",
    "IDENTITY",
    "apply_substitution",
    "free_variable_count",
    "is_solution",
    "solve_collect",
    "solve_system",
    "system_variables",
    "unify",
]
