"""Program hypergraphs: spec loading, constraint generation and elaboration.

Elaboration runs the whole design-time chain on a graph:

    dimensions -> grades -> value ranges -> representation -> footprint
    -> escape class -> allocation

and collects every error it meets instead of stopping at the first one.
"""

from __future__ import annotations

import heapq
import json
import math
import re
import time
from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Iterable, Sequence

from .clifford import (
    CayleyTable,
    Signature,
    SignatureError,
    build_cayley,
    grade_outer,
    grade_product_set,
    max_fan_in,
    sparsity_count,
)
from .dims import SI_BASE, Basis, Dimension, DimensionError, format_dimension, parse_dimension
from .unify import (
    DimEquation,
    Substitution,
    apply_substitution,
    free_variable_count,
    solve_collect,
    system_variables,
)

BINARY_OPS = frozenset({"add", "sub", "mul", "div", "dot", "geometric", "wedge"})
UNARY_OPS = frozenset({"pow", "neg", "sum_reduce", "grade_project", "consume_external"})
OPS = BINARY_OPS | UNARY_OPS
PARAM_OPS = frozenset({"pow", "grade_project"})
ROLES = ("input", "intermediate", "output", "parameter", "constant")
SOURCE_ROLES = frozenset({"input", "parameter", "constant"})
IDENTITY_LIKE = frozenset({"neg", "grade_project"})


class SpecError(ValueError):
    """Malformed graph specification (maps to exit code 2)."""

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(f"{kind}: {message}")


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def contains_zero(self) -> bool:
        return self.lo <= 0.0 <= self.hi

    @property
    def magnitude(self) -> float:
        return max(abs(self.lo), abs(self.hi))

    def to_json(self) -> list[float]:
        return [self.lo, self.hi]


@dataclass(frozen=True)
class Node:
    id: str
    role: str = "intermediate"
    shape: tuple[int, ...] | None = None
    dim: Dimension | None = None
    grades: frozenset[int] | None = None
    range: Interval | None = None
    value: float | None = None  # constants only

    @property
    def is_source(self) -> bool:
        return self.role in SOURCE_ROLES


@dataclass(frozen=True)
class Hyperedge:
    op: str
    inputs: tuple[str, ...]
    output: str | None
    k: int | None = None
    deferred: bool = False

    def label(self) -> str:
        op = f"{self.op}({self.k})" if self.op in PARAM_OPS else self.op
        out = f" -> {self.output}" if self.output else ""
        return f"{op}({', '.join(self.inputs)}){out}"


@dataclass
class Graph:
    nodes: dict[str, Node]
    edges: list[Hyperedge]
    outputs: tuple[str, ...]
    basis: Basis = field(default_factory=Basis)
    signature: Signature | None = None

    def __post_init__(self):
        self.producer: dict[str, int] = {}
        self.consumers: dict[str, list[int]] = {nid: [] for nid in self.nodes}
        for i, e in enumerate(self.edges):
            if e.output is not None:
                self.producer[e.output] = i
            for u in e.inputs:
                self.consumers.setdefault(u, []).append(i)
        self.order = self._toposort()

    def _toposort(self) -> list[str]:
        # Kahn's algorithm, ties broken by declaration order
        index = {nid: i for i, nid in enumerate(self.nodes)}
        pending = {nid: (len(set(self.edges[self.producer[nid]].inputs)) if nid in self.producer else 0)
                   for nid in self.nodes}
        ready = [index[n] for n, c in pending.items() if c == 0]
        heapq.heapify(ready)
        ids = list(self.nodes)
        order = []
        while ready:
            nid = ids[heapq.heappop(ready)]
            order.append(nid)
            for ei in self.consumers.get(nid, ()):
                out = self.edges[ei].output
                if out is None:
                    continue
                pending[out] -= 1
                if pending[out] == 0:
                    heapq.heappush(ready, index[out])
        if len(order) != len(self.nodes):
            stuck = sorted(set(self.nodes) - set(order), key=index.get)
            raise SpecError("cycle", f"cycle through nodes {stuck}")
        return order

    @property
    def inputs(self) -> list[str]:
        return [n for n in self.nodes if self.nodes[n].role in ("input", "parameter")]

    def node_dim(self, nid: str) -> Dimension:
        d = self.nodes[nid].dim
        return d if d is not None else Dimension.var(f"dim:{nid}")

    def table(self) -> CayleyTable:
        return build_cayley(self.signature or Signature(0, 0, 0))

    def to_spec(self) -> dict:
        nodes = []
        for n in self.nodes.values():
            item: dict = {"id": n.id, "role": n.role}
            if n.shape is not None:
                item["shape"] = list(n.shape)
            if n.dim is not None:
                item["dim"] = format_dimension(n.dim, self.basis)
            if n.grades is not None:
                item["grades"] = sorted(n.grades)
            if n.range is not None:
                item["range"] = n.range.to_json()
            if n.value is not None:
                item["value"] = n.value
            nodes.append(item)
        edges = []
        for e in self.edges:
            item = {"op": e.op, "inputs": list(e.inputs)}
            if e.output is not None:
                item["output"] = e.output
            if e.k is not None:
                item["k"] = e.k
            if e.deferred:
                item["deferred"] = True
            edges.append(item)
        spec = {"base_dims": list(self.basis.symbols), "nodes": nodes, "edges": edges, "outputs": list(self.outputs)}
        if self.signature is not None:
            s = self.signature
            spec["signature"] = {"p": s.p, "q": s.q, "r": s.r}
        return spec


# ---------------------------------------------------------------- loading


def _parse_op(raw: dict, where: str) -> tuple[str, int | None]:
    op = raw.get("op")
    if not isinstance(op, str):
        raise SpecError("parse", f"{where}: missing op")
    k = raw.get("k")
    if "(" in op and op.endswith(")"):
        op, arg = op[:-1].split("(", 1)
        try:
            k = int(arg)
        except ValueError:
            raise SpecError("parse", f"{where}: bad op parameter {arg!r}") from None
    if op not in OPS:
        raise SpecError("unknown-op", f"{where}: unknown op {op!r}")
    if op in PARAM_OPS:
        if not isinstance(k, int) or isinstance(k, bool):
            raise SpecError("parse", f"{where}: {op} needs an integer k")
    elif k is not None:
        raise SpecError("parse", f"{where}: {op} takes no k")
    return op, k


def _parse_interval(raw, where: str) -> Interval:
    if (not isinstance(raw, (list, tuple)) or len(raw) != 2
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in raw)):
        raise SpecError("parse", f"{where}: range must be [lo, hi]")
    lo, hi = float(raw[0]), float(raw[1])
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise SpecError("parse", f"{where}: invalid range [{lo}, {hi}]")
    return Interval(lo, hi)


def _parse_node(raw: dict, basis: Basis, sig: Signature | None) -> Node:
    if not isinstance(raw, dict) or not isinstance(raw.get("id"), str) or not raw["id"]:
        raise SpecError("parse", f"node without id: {raw!r}")
    nid = raw["id"]
    role = raw.get("role", "intermediate")
    if role not in ROLES:
        raise SpecError("parse", f"node {nid}: unknown role {role!r}")
    shape = raw.get("shape")
    if shape is not None:
        if not isinstance(shape, list) or not all(isinstance(s, int) and not isinstance(s, bool) and s > 0 for s in shape):
            raise SpecError("parse", f"node {nid}: shape must be a list of positive integers")
        shape = tuple(shape)
    dim = raw.get("dim")
    if dim is not None:
        try:
            dim = parse_dimension(dim, basis)
        except DimensionError as err:
            raise SpecError("dimension", f"node {nid}: {err}") from None
    grades = raw.get("grades")
    if grades is not None:
        top = sig.n if sig else 0
        if not isinstance(grades, list) or not grades or not all(isinstance(g, int) and 0 <= g <= top for g in grades):
            raise SpecError("parse", f"node {nid}: grades must be a nonempty list within 0..{top}")
        grades = frozenset(grades)
    rng = raw.get("range")
    if rng is not None:
        rng = _parse_interval(rng, f"node {nid}")
    value = raw.get("value")
    if role == "constant":
        if not isinstance(value, (int, float)) or isinstance(value, bool) or not math.isfinite(value):
            raise SpecError("parse", f"constant {nid} needs a finite numeric value")
        value = float(value)
        dim = dim if dim is not None else Dimension()
        rng = Interval(value, value)
        grades = grades or frozenset({0})
    elif value is not None:
        raise SpecError("parse", f"node {nid}: only constants carry a value")
    if role in ("input", "parameter"):
        if dim is None:
            raise SpecError("missing-dim", f"{role} {nid} must declare a dimension")
        if grades is None:
            if sig is not None and sig.n > 0:
                raise SpecError("missing-grades", f"{role} {nid} must declare grades under {sig}")
            grades = frozenset({0})
    return Node(nid, role, shape, dim, grades, rng, value)


def graph_from_dict(spec: dict) -> Graph:
    if not isinstance(spec, dict):
        raise SpecError("parse", "spec must be a JSON object")
    unknown = set(spec) - {"base_dims", "signature", "nodes", "edges", "outputs", "name", "description"}
    if unknown:
        raise SpecError("parse", f"unknown top-level keys {sorted(unknown)}")
    try:
        basis = Basis(spec.get("base_dims", SI_BASE))
    except DimensionError as err:
        raise SpecError("basis", str(err)) from None
    sig = None
    if spec.get("signature") is not None:
        raw = spec["signature"]
        try:
            if isinstance(raw, dict):
                sig = Signature(int(raw.get("p", 0)), int(raw.get("q", 0)), int(raw.get("r", 0)))
            else:
                sig = Signature(*(int(x) for x in raw))
        except (SignatureError, TypeError, ValueError) as err:
            raise SpecError("signature", str(err)) from None

    nodes: dict[str, Node] = {}
    for raw in spec.get("nodes", []):
        node = _parse_node(raw, basis, sig)
        if node.id in nodes:
            raise SpecError("duplicate-id", f"node {node.id!r} declared twice")
        nodes[node.id] = node

    edges: list[Hyperedge] = []
    for i, raw in enumerate(spec.get("edges", [])):
        where = f"edge {i}"
        if not isinstance(raw, dict):
            raise SpecError("parse", f"{where}: not an object")
        op, k = _parse_op(raw, where)
        ins = raw.get("inputs")
        if not isinstance(ins, list) or not all(isinstance(x, str) for x in ins):
            raise SpecError("parse", f"{where}: inputs must be a list of node ids")
        want = 2 if op in BINARY_OPS else 1
        if len(ins) != want:
            raise SpecError("arity", f"{where}: {op} takes {want} input(s), got {len(ins)}")
        out = raw.get("output")
        if op == "consume_external":
            if out is not None:
                raise SpecError("arity", f"{where}: consume_external is a sink and has no output")
        elif not isinstance(out, str):
            raise SpecError("arity", f"{where}: {op} needs an output node")
        for nid in [*ins, *([out] if out else [])]:
            if nid not in nodes:
                raise SpecError("unknown-node", f"{where}: unknown node {nid!r}")
        edges.append(Hyperedge(op, tuple(ins), out, k, bool(raw.get("deferred", False))))

    produced: dict[str, int] = {}
    for i, e in enumerate(edges):
        if e.output is None:
            continue
        if e.output in produced:
            raise SpecError("duplicate-id", f"node {e.output!r} produced by edges {produced[e.output]} and {i}")
        if nodes[e.output].is_source:
            raise SpecError("arity", f"edge {i}: {nodes[e.output].role} {e.output!r} cannot be an edge output")
        produced[e.output] = i
    for nid, n in nodes.items():
        if not n.is_source and nid not in produced:
            raise SpecError("unknown-node", f"{n.role} {nid!r} is never produced by an edge")

    outputs = list(spec.get("outputs", []))
    for nid in outputs:
        if nid not in nodes:
            raise SpecError("unknown-node", f"unknown output {nid!r}")
    for nid, n in nodes.items():
        if n.role == "output" and nid not in outputs:
            outputs.append(nid)
    return Graph(nodes, edges, tuple(outputs), basis, sig)


def load_spec(text: str) -> Graph:
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as err:
        raise SpecError("parse", f"invalid JSON: {err}") from None
    return graph_from_dict(spec)


# ------------------------------------------------------------ constraints


def generate_constraints(g: Graph) -> list[DimEquation]:
    eqs = []
    for i, e in enumerate(g.edges):
        if e.output is None:
            continue
        prov = f"edge {i}: {e.label()}"
        out = g.node_dim(e.output)
        ins = [g.node_dim(u) for u in e.inputs]
        if e.op in ("add", "sub"):
            eqs.append(DimEquation(out, ins[0], prov))
            eqs.append(DimEquation(ins[0], ins[1], prov))
        elif e.op == "div":
            eqs.append(DimEquation(out, ins[0] / ins[1], prov))
        elif e.op in ("mul", "geometric", "wedge", "dot"):
            eqs.append(DimEquation(out, ins[0] * ins[1], prov))
        elif e.op == "pow":
            eqs.append(DimEquation(out, ins[0] ** e.k, prov))
        else:  # neg, sum_reduce, grade_project
            eqs.append(DimEquation(out, ins[0], prov))
    return eqs


# ------------------------------------------------------------------ errors


@dataclass(frozen=True)
class ElabError:
    kind: str
    message: str
    where: str = ""
    residual: str | None = None

    def to_json(self) -> dict:
        out = {"kind": self.kind, "message": self.message, "where": self.where}
        if self.residual is not None:
            out["residual"] = self.residual
        return out

    @classmethod
    def from_json(cls, d: dict) -> ElabError:
        return cls(d["kind"], d["message"], d.get("where", ""), d.get("residual"))


class GradeError(ValueError):
    def __init__(self, errors: list[ElabError]):
        self.errors = errors
        super().__init__("; ".join(e.message for e in errors))


# ------------------------------------------------------------------ grades


def _edge_grades(e: Hyperedge, ins: list[frozenset[int]], t: CayleyTable) -> tuple[frozenset[int], str | None]:
    n = t.n
    if e.op == "geometric" or e.op == "mul":
        return grade_product_set(t, ins[0], ins[1]), None
    if e.op == "wedge":
        out: set[int] = set()
        for j in ins[0]:
            for k in ins[1]:
                out |= grade_outer(j, k, n)
        # degenerate generators do not matter for the wedge; shared ones already vanish
        return frozenset(out), None
    if e.op == "grade_project":
        return ins[0] & {e.k}, None
    if e.op in ("add", "sub"):
        return ins[0] | ins[1], None
    if e.op == "dot":
        return frozenset({0}), None
    if e.op == "div":
        if ins[1] != {0}:
            return ins[0], f"divisor grades {sorted(ins[1])} are not scalar"
        return ins[0], None
    if e.op == "pow":
        if ins[0] != {0} and e.k != 1:
            return ins[0], f"pow({e.k}) of non-scalar grades {sorted(ins[0])}"
        return (frozenset({0}) if e.k != 1 else ins[0]), None
    return ins[0], None  # neg, sum_reduce


def propagate_grades(g: Graph, t: CayleyTable | None = None,
                     errors: list[ElabError] | None = None) -> dict[str, frozenset[int]]:
    """Forward pass computing each node's grade set.

    With ``errors`` given, problems are appended there and the pass carries
    on; otherwise the first problem raises :class:`GradeError`.
    """
    t = t or g.table()
    sink: list[ElabError] = [] if errors is None else errors
    start = len(sink)
    grades: dict[str, frozenset[int]] = {}
    for nid in g.order:
        node = g.nodes[nid]
        if nid not in g.producer:
            grades[nid] = node.grades or frozenset({0})
            continue
        e = g.edges[g.producer[nid]]
        where = f"edge {g.producer[nid]}: {e.label()}"
        out, problem = _edge_grades(e, [grades[u] for u in e.inputs], t)
        if problem:
            sink.append(ElabError("grade-mismatch", problem, where))
        if not out:
            sink.append(ElabError("grade-empty", f"{nid} is structurally zero (no reachable grade)", where))
        if node.grades is not None and not out <= node.grades:
            sink.append(ElabError("grade-mismatch",
                                  f"{nid} declared grades {sorted(node.grades)} but computed {sorted(out)}", where))
        grades[nid] = out
    if errors is None and len(sink) > start:
        raise GradeError(sink[start:])
    return grades


# --------------------------------------------------------------- intervals


_MAX_FLOAT = 1.7976931348623157e308


def _down(q: Fraction) -> float:
    try:
        f = float(q)
    except OverflowError:
        return -math.inf if q < 0 else _MAX_FLOAT
    if Fraction(f) > q:
        f = math.nextafter(f, -math.inf)
    return f


def _up(q: Fraction) -> float:
    try:
        f = float(q)
    except OverflowError:
        return math.inf if q > 0 else -_MAX_FLOAT
    if Fraction(f) < q:
        f = math.nextafter(f, math.inf)
    return f


def _hull(vals: Iterable[Fraction]) -> Interval:
    vals = list(vals)
    return Interval(_down(min(vals)), _up(max(vals)))


def _fr(x: float) -> Fraction:
    if math.isinf(x):
        raise OverflowError("unbounded interval")
    return Fraction(x)


class RangeError(ValueError):
    pass


def _mul_corners(a: Interval, b: Interval) -> list[Fraction]:
    return [_fr(x) * _fr(y) for x in (a.lo, a.hi) for y in (b.lo, b.hi)]


def interval_op(op: str, ins: Sequence[Interval], k: int | None = None, count: int = 1, fan_in: int = 1,
                scalar: bool = True) -> Interval:
    """Outward-rounded interval image of ``op``.

    ``count`` is the number of reduced elements for ``sum_reduce``/``dot``;
    ``fan_in`` and ``scalar`` describe Clifford products whose coefficients
    are signed sums of up to ``fan_in`` blade products.
    """
    a = ins[0]
    if op == "add":
        b = ins[1]
        return _hull([_fr(a.lo) + _fr(b.lo), _fr(a.hi) + _fr(b.hi)])
    if op == "sub":
        b = ins[1]
        return _hull([_fr(a.lo) - _fr(b.hi), _fr(a.hi) - _fr(b.lo)])
    if op == "neg":
        return Interval(-a.hi, -a.lo)
    if op == "grade_project":
        return a  # surviving coefficients keep their range
    if op == "sum_reduce":
        return _hull([count * _fr(a.lo), count * _fr(a.hi)])
    if op == "div":
        b = ins[1]
        if b.contains_zero():
            raise RangeError(f"divisor range [{b.lo}, {b.hi}] contains 0")
        return _hull([_fr(x) / _fr(y) for x in (a.lo, a.hi) for y in (b.lo, b.hi)])
    if op == "pow":
        if k == 0:
            return Interval(1.0, 1.0)
        if k < 0 and a.contains_zero():
            raise RangeError(f"negative power of range [{a.lo}, {a.hi}] containing 0")
        lo, hi = _fr(a.lo), _fr(a.hi)
        pts = [lo ** k, hi ** k]
        if k % 2 == 0 and lo < 0 < hi:
            pts.append(Fraction(0))
        return _hull(pts)
    if op in ("mul", "geometric", "wedge", "dot"):
        corners = _mul_corners(a, ins[1])
        if not scalar:
            m = max(abs(c) for c in corners)
            corners = [-m, m]
        if op == "dot" or not scalar:
            n = count * fan_in
            return _hull([n * min(corners), n * max(corners)])
        return _hull(corners)
    raise ValueError(f"no interval rule for {op}")


def _numel(shape: Sequence[int] | None) -> int:
    return math.prod(shape) if shape else 1


def infer_shapes(g: Graph, errors: list[ElabError]) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for nid in g.order:
        node = g.nodes[nid]
        if nid not in g.producer:
            shapes[nid] = node.shape or ()
            continue
        ei = g.producer[nid]
        e = g.edges[ei]
        ins = [shapes[u] for u in e.inputs]
        if e.op in ("sum_reduce", "dot"):
            if e.op == "dot" and ins[0] != ins[1]:
                errors.append(ElabError("shape-mismatch", f"dot of shapes {list(ins[0])} and {list(ins[1])}",
                                        f"edge {ei}: {e.label()}"))
            out: tuple[int, ...] = ()
        elif len(ins) == 2:
            if ins[0] == ins[1] or not ins[1]:
                out = ins[0]
            elif not ins[0]:
                out = ins[1]
            else:
                errors.append(ElabError("shape-mismatch", f"shapes {list(ins[0])} and {list(ins[1])} differ",
                                        f"edge {ei}: {e.label()}"))
                out = ins[0]
        else:
            out = ins[0]
        if node.shape is not None and node.shape != out:
            errors.append(ElabError("shape-mismatch", f"{nid} declared shape {list(node.shape)} but computed {list(out)}",
                                    f"edge {ei}: {e.label()}"))
        shapes[nid] = out
    return shapes


def propagate_intervals(g: Graph, grades: dict[str, frozenset[int]] | None = None,
                        shapes: dict[str, tuple[int, ...]] | None = None,
                        errors: list[ElabError] | None = None) -> dict[str, Interval | None]:
    """Per-node value ranges; ``None`` where an input range is missing."""
    t = g.table()
    grades = grades or propagate_grades(g, t)
    shapes = shapes if shapes is not None else infer_shapes(g, [])
    sink = [] if errors is None else errors
    out: dict[str, Interval | None] = {}
    for nid in g.order:
        node = g.nodes[nid]
        if nid not in g.producer:
            out[nid] = node.range
            continue
        ei = g.producer[nid]
        e = g.edges[ei]
        ins = [out[u] for u in e.inputs]
        if any(r is None for r in ins):
            out[nid] = None
            continue
        scalar = all(grades[u] <= {0} for u in e.inputs)
        fan = 1
        if not scalar and e.op in ("geometric", "mul", "wedge", "dot"):
            if e.op == "wedge":
                fan = _wedge_fan_in(t, grades[e.inputs[0]], grades[e.inputs[1]])
            elif e.op == "dot":
                fan = len(t.blades_of(grades[e.inputs[0]] & grades[e.inputs[1]]))
            else:
                fan = max_fan_in(t, grades[e.inputs[0]], grades[e.inputs[1]])
        count = _numel(shapes[e.inputs[0]]) if e.op in ("sum_reduce", "dot") else 1
        try:
            r = interval_op(e.op, ins, e.k, count=count, fan_in=fan, scalar=scalar)
        except RangeError as err:
            sink.append(ElabError("range-undetermined", str(err), f"edge {ei}: {e.label()}"))
            r = None
        except OverflowError as err:
            sink.append(ElabError("range-undetermined", f"range overflow: {err}", f"edge {ei}: {e.label()}"))
            r = None
        out[nid] = r
    return out


def _wedge_fan_in(t: CayleyTable, A, B) -> int:
    counts: dict[int, int] = {}
    bs = t.blades_of(B)
    for a in t.blades_of(A):
        for b in bs:
            if not a & b:
                counts[a ^ b] = counts.get(a ^ b, 0) + 1
    return max(counts.values(), default=0)


# ---------------------------------------------------------- representation


@dataclass(frozen=True)
class Representation:
    kind: str
    width_bits: int
    max_magnitude: float
    min_positive: float
    epsilon_at_1: float

    @property
    def family(self) -> str:
        return "posit" if self.kind.startswith("posit") else "fixed" if self.kind.startswith("fixed") else "float"

    def relative_spacing(self, x: float) -> float:
        """Gap to the next representable magnitude above ``|x|``, relative to ``|x|``."""
        x = abs(x)
        if x == 0:
            return 0.0
        e = math.frexp(x)[1] - 1
        if self.family == "float":
            p, emin = _FLOAT_PARAMS[self.kind]
            return math.ldexp(1.0, max(e, emin) - (p - 1)) / x
        if self.family == "fixed":
            return self.min_positive / x
        n = self.width_bits
        top = 4 * (n - 2)
        e = min(max(e, -top), top)
        k = e // 4
        regime = k + 2 if k >= 0 else -k + 1
        regime = min(regime, n - 1)
        rem = n - 1 - regime
        ebits = min(2, rem)
        fbits = rem - ebits
        if ebits == 2:
            gap = math.ldexp(1.0, e - fbits)
        else:
            # missing exponent bits leave only every step-th power of two
            step = 1 << (2 - ebits)
            below = 4 * k + (e - 4 * k) // step * step
            gap = math.ldexp(1.0, below) * (2.0 ** step - 1)
        return gap / x

    def to_json(self) -> dict:
        return {"kind": self.kind, "width_bits": self.width_bits, "max_magnitude": self.max_magnitude,
                "min_positive": self.min_positive, "epsilon_at_1": self.epsilon_at_1}

    @classmethod
    def from_json(cls, d: dict) -> Representation:
        return cls(d["kind"], d["width_bits"], d["max_magnitude"], d["min_positive"], d["epsilon_at_1"])


_FLOAT_PARAMS = {"float16": (11, -14), "float32": (24, -126), "float64": (53, -1022)}


def _float_rep(kind: str, width: int, p: int, emin: int, emax: int) -> Representation:
    return Representation(kind, width, math.ldexp(2.0 - math.ldexp(1.0, 1 - p), emax),
                          math.ldexp(1.0, emin - p + 1), math.ldexp(1.0, 1 - p))


def _posit_rep(n: int) -> Representation:
    # es = 2, useed = 16
    return Representation(f"posit{n}", n, math.ldexp(1.0, 4 * (n - 2)), math.ldexp(1.0, -4 * (n - 2)),
                          math.ldexp(1.0, -(n - 5)) if n > 5 else 1.0)


def fixed_rep(i: int, f: int) -> Representation:
    """Two's-complement fixed point with ``i`` integer bits (sign included) and ``f`` fraction bits."""
    if i < 1 or f < 0:
        raise ValueError("fixed(i, f) needs i >= 1 and f >= 0")
    return Representation(f"fixed({i},{f})", i + f, math.ldexp(1.0, i - 1) - math.ldexp(1.0, -f),
                          math.ldexp(1.0, -f), math.ldexp(1.0, -f))


POSIT8, POSIT16, POSIT32 = _posit_rep(8), _posit_rep(16), _posit_rep(32)
FLOAT16 = _float_rep("float16", 16, 11, -14, 15)
FLOAT32 = _float_rep("float32", 32, 24, -126, 127)
FLOAT64 = _float_rep("float64", 64, 53, -1022, 1023)
# narrowest first; posit before float at equal width
CANDIDATES = (POSIT8, POSIT16, FLOAT16, POSIT32, FLOAT32, FLOAT64)


class RepresentationError(ValueError):
    pass


def worst_relative_spacing(rep: Representation, lo: float, hi: float) -> float:
    """Max relative spacing over magnitudes in ``[lo, hi]`` (``0 < lo <= hi``).

    Within one binade the relative gap shrinks as the value grows, so the
    worst case sits at ``lo`` or at a power of two inside the band.  For IEEE
    formats the gap at powers of two is constant over normals and grows into
    the subnormals, so the first power of two suffices; posits are checked at
    every power of two their regime range can distinguish.
    """
    worst = rep.relative_spacing(lo)
    first = math.frexp(lo)[1] - 1
    if math.ldexp(1.0, first) < lo:
        first += 1
    last = math.frexp(hi)[1] - 1
    if rep.family == "posit":
        top = 4 * (rep.width_bits - 2)
        exps = range(max(first, -top), min(last, top) + 1)
    else:
        exps = range(first, min(first, last) + 1)
    for k in exps:
        worst = max(worst, rep.relative_spacing(math.ldexp(1.0, k)))
    return worst


def select_representation(rng: Interval | tuple[float, float], eps_budget: float,
                          candidates: Sequence[Representation] = CANDIDATES) -> Representation:
    if not isinstance(rng, Interval):
        rng = Interval(*rng)
    if not eps_budget > 0:
        raise ValueError("eps_budget must be positive")
    top = rng.magnitude
    if top == 0:
        return candidates[0]
    # a range through zero is checked on its nonzero endpoint magnitudes
    low = min(abs(x) for x in (rng.lo, rng.hi) if x != 0)
    for rep in candidates:
        if rep.max_magnitude < top:
            continue
        if not rng.contains_zero() and rep.min_positive > low:
            continue
        if worst_relative_spacing(rep, low, top) <= eps_budget:
            return rep
    raise RepresentationError(
        f"no representation covers [{rng.lo!r}, {rng.hi!r}] with relative spacing <= {eps_budget!r}")


# ------------------------------------------------------ escape, allocation


class EscapeClass(IntEnum):
    StackScoped = 0
    ClosureCaptured = 1
    ReturnEscaping = 2
    ByRefEscaping = 3

    def join(self, other: EscapeClass) -> EscapeClass:
        return max(self, other)


def classify_escape(g: Graph) -> dict[str, EscapeClass]:
    """Least fixed point of the escape rules over the class lattice."""
    cls = {nid: EscapeClass.StackScoped for nid in g.nodes}
    for nid in g.outputs:
        cls[nid] = EscapeClass.ReturnEscaping
    for e in g.edges:
        if e.op == "consume_external":
            for u in e.inputs:
                cls[u] = cls[u].join(EscapeClass.ByRefEscaping)
        if e.deferred:
            for u in e.inputs:
                cls[u] = cls[u].join(EscapeClass.ClosureCaptured)
    # identity-like edges alias their input, so the input escapes as far as the output
    for nid in reversed(g.order):
        if nid in g.producer:
            e = g.edges[g.producer[nid]]
            if e.op in IDENTITY_LIKE:
                u = e.inputs[0]
                cls[u] = cls[u].join(cls[nid])
    return cls


def plan_allocation(escape: EscapeClass, footprint_bytes: int, stack_limit: int = 65536) -> str:
    if footprint_bytes < 0:
        raise ValueError("negative footprint")
    if escape == EscapeClass.StackScoped:
        return "stack" if footprint_bytes <= stack_limit else "region"
    if escape == EscapeClass.ClosureCaptured:
        return "region"
    return "caller-region"


# ----------------------------------------------------------------- report


@dataclass(frozen=True)
class Config:
    eps_budget: float = 1e-6
    stack_limit: int = 65536
    base_dims: tuple[str, ...] | None = None
    format: str = "human"

    def __post_init__(self):
        if not self.eps_budget > 0:
            raise ValueError("eps_budget must be positive")
        if self.stack_limit <= 0:
            raise ValueError("stack_limit must be positive")
        if self.format not in ("human", "json"):
            raise ValueError(f"unknown report format {self.format!r}")
        if self.base_dims is not None:
            Basis(self.base_dims)

    @classmethod
    def from_json(cls, d: dict) -> Config:
        known = {"eps_budget", "stack_limit", "base_dims", "format"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        d = dict(d)
        if d.get("base_dims") is not None:
            d["base_dims"] = tuple(d["base_dims"])
        return cls(**d)


@dataclass(frozen=True)
class NodeReport:
    id: str
    role: str
    shape: tuple[int, ...] | None
    dim: str | None
    grades: tuple[int, ...] | None
    range: tuple[float, float] | None
    escape: str | None
    representation: Representation | None
    footprint_bytes: int | None
    allocation: str | None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "role": self.role,
            "shape": None if self.shape is None else list(self.shape),
            "dim": self.dim,
            "grades": None if self.grades is None else list(self.grades),
            "range": None if self.range is None else list(self.range),
            "escape": self.escape,
            "representation": None if self.representation is None else self.representation.to_json(),
            "footprint_bytes": self.footprint_bytes,
            "allocation": self.allocation,
        }

    @classmethod
    def from_json(cls, d: dict) -> NodeReport:
        return cls(
            d["id"], d["role"],
            None if d["shape"] is None else tuple(d["shape"]),
            d["dim"],
            None if d["grades"] is None else tuple(d["grades"]),
            None if d["range"] is None else tuple(d["range"]),
            d["escape"],
            None if d["representation"] is None else Representation.from_json(d["representation"]),
            d["footprint_bytes"], d["allocation"],
        )


@dataclass(frozen=True)
class SparsityStat:
    edge: int
    output: str
    grades_a: tuple[int, ...]
    grades_b: tuple[int, ...]
    result_grades: tuple[int, ...]
    nonzero: int
    total: int

    def to_json(self) -> dict:
        return {"edge": self.edge, "output": self.output, "grades_a": list(self.grades_a),
                "grades_b": list(self.grades_b), "result_grades": list(self.result_grades),
                "nonzero": self.nonzero, "total": self.total}

    @classmethod
    def from_json(cls, d: dict) -> SparsityStat:
        return cls(d["edge"], d["output"], tuple(d["grades_a"]), tuple(d["grades_b"]),
                   tuple(d["result_grades"]), d["nonzero"], d["total"])


REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ElaborationReport:
    accepted: bool
    substitution: Substitution
    nodes: tuple[NodeReport, ...]
    sparsity: tuple[SparsityStat, ...]
    free_vars: int
    score: Fraction
    constraints_violated: int
    grade_nonzero: int
    errors: tuple[ElabError, ...]
    signature: tuple[int, int, int] | None = None
    elapsed_s: float = field(default=0.0, compare=False)

    def node(self, nid: str) -> NodeReport:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def to_json(self) -> dict:
        return {
            "schema": REPORT_SCHEMA_VERSION,
            "accepted": self.accepted,
            "signature": None if self.signature is None else list(self.signature),
            "substitution": {
                "bindings": {v: str(d) for v, d in self.substitution.bindings},
                "free": sorted(self.substitution.free),
            },
            "nodes": [n.to_json() for n in self.nodes],
            "sparsity": [s.to_json() for s in self.sparsity],
            "mdl": {
                "free_vars": self.free_vars,
                "score": str(self.score),
                "constraints_violated": self.constraints_violated,
                "grade_nonzero": self.grade_nonzero,
            },
            "errors": [e.to_json() for e in self.errors],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> ElaborationReport:
        if d.get("schema") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        sub = d["substitution"]
        subst = Substitution(tuple((v, parse_dimension(s, _report_basis(s))) for v, s in sub["bindings"].items()),
                             frozenset(sub["free"]))
        mdl = d["mdl"]
        return cls(
            d["accepted"], subst,
            tuple(NodeReport.from_json(n) for n in d["nodes"]),
            tuple(SparsityStat.from_json(s) for s in d["sparsity"]),
            mdl["free_vars"], Fraction(mdl["score"]), mdl["constraints_violated"], mdl["grade_nonzero"],
            tuple(ElabError.from_json(e) for e in d["errors"]),
            None if d["signature"] is None else tuple(d["signature"]),
        )

    @classmethod
    def loads(cls, text: str) -> ElaborationReport:
        return cls.from_json(json.loads(text))


def _report_basis(text: str) -> Basis:
    # reports may use a custom basis; accept any plain symbol that appears
    syms = [m for m in re.findall(r"(?<!')\b([A-Za-z_][A-Za-z0-9_]*)", text)]
    known = list(SI_BASE)
    return Basis(known + [s for s in dict.fromkeys(syms) if s not in known], aliases={})


def elaborate(g: Graph, config: Config | None = None) -> ElaborationReport:
    config = config or Config()
    t0 = time.perf_counter()
    errors: list[ElabError] = []
    t = g.table()

    eqs = generate_constraints(g)
    subst, uerrs = solve_collect(eqs)
    for ue in uerrs:
        if ue.kind == "divisibility":
            msg = f"exponent {ue.pivot} does not divide residual {ue.residual}; no integer solution"
        else:
            msg = f"residual {ue.residual} is not dimensionless"
        errors.append(ElabError(ue.kind, msg, ", ".join(ue.provenance), str(ue.residual)))
    dims = {nid: apply_substitution(subst, g.node_dim(nid)) for nid in g.nodes}

    grades = propagate_grades(g, t, errors)
    shapes = infer_shapes(g, errors)
    ranges = propagate_intervals(g, grades, shapes, errors)
    escape = classify_escape(g)

    for nid in g.order:
        if nid not in g.producer and ranges[nid] is None:
            errors.append(ElabError("range-missing", f"{g.nodes[nid].role} {nid} declares no value range", nid))
    reps: dict[str, Representation | None] = {}
    for nid in g.order:
        r = ranges[nid]
        if r is None:
            reps[nid] = None
            continue
        try:
            reps[nid] = select_representation(r, config.eps_budget)
        except RepresentationError as err:
            errors.append(ElabError("representation-inadequate", str(err), nid))
            reps[nid] = None

    node_reports = []
    for nid, node in g.nodes.items():
        rep = reps.get(nid)
        foot = None if rep is None else -(-rep.width_bits // 8) * _numel(shapes[nid])
        alloc = None if foot is None else plan_allocation(escape[nid], foot, config.stack_limit)
        r = ranges.get(nid)
        node_reports.append(NodeReport(
            nid, node.role, shapes[nid], format_dimension(dims[nid], g.basis),
            tuple(sorted(grades[nid])), None if r is None else (r.lo, r.hi),
            escape[nid].name, rep, foot, alloc,
        ))

    stats = []
    for i, e in enumerate(g.edges):
        if e.op == "geometric":
            a, b = grades[e.inputs[0]], grades[e.inputs[1]]
            nz, total = sparsity_count(t, a, b)
            stats.append(SparsityStat(i, e.output, tuple(sorted(a)), tuple(sorted(b)),
                                      tuple(sorted(grade_product_set(t, a, b))), nz, total))

    free = free_variable_count(subst, system_variables(eqs))
    return ElaborationReport(
        accepted=not errors,
        substitution=subst,
        nodes=tuple(node_reports),
        sparsity=tuple(stats),
        free_vars=free,
        score=Fraction(1, 2 ** free),
        constraints_violated=len(uerrs),
        grade_nonzero=sum(s.nonzero for s in stats),
        errors=tuple(errors),
        signature=None if g.signature is None else g.signature.pqr,
        elapsed_s=time.perf_counter() - t0,
    )


def format_report(report: ElaborationReport, timing: bool = True) -> str:
    """Human-readable report with the full per-node chain trace."""
    lines = [f"status: {'ACCEPTED' if report.accepted else 'REJECTED'}"]
    if report.signature is not None:
        lines.append("signature: Cl({},{},{})".format(*report.signature))
    if report.substitution.bindings:
        lines.append("substitution:")
        for v, d in report.substitution.bindings:
            lines.append(f"  '{v} := {d}")
    lines.append("nodes:  id: dim | grades | range -> representation -> footprint -> escape -> allocation")
    for n in report.nodes:
        rng = "?" if n.range is None else f"[{n.range[0]:.6g}, {n.range[1]:.6g}]"
        rep = "?" if n.representation is None else n.representation.kind
        foot = "?" if n.footprint_bytes is None else f"{n.footprint_bytes} B"
        grades = "{" + ",".join(map(str, n.grades or ())) + "}"
        lines.append(f"  {n.id}: {n.dim} | {grades} | {rng} -> {rep} -> {foot} -> {n.escape} -> {n.allocation or '?'}")
    for s in report.sparsity:
        lines.append(f"sparsity edge {s.edge} -> {s.output}: {s.nonzero}/{s.total} nonzero, grades {list(s.result_grades)}")
    lines.append(f"mdl: free_vars={report.free_vars} score={report.score} grade_nonzero={report.grade_nonzero}")
    if report.errors:
        lines.append("errors:")
        for e in report.errors:
            where = f" [{e.where}]" if e.where else ""
            lines.append(f"  {e.kind}{where}: {e.message}")
    if timing:
        lines.append(f"elaboration time: {report.elapsed_s * 1e3:.2f} ms")
    return "\n".join(lines) + "\n"


__all__ = [
    "CANDIDATES",
    "Config",
    "ElabError",
    "ElaborationReport",
    "EscapeClass",
    "Graph",
    "Hyperedge",
    "Interval",
    "Node",
    "Representation",
    "SpecError",
    "classify_escape",
    "elaborate",
    "format_report",
    "generate_constraints",
    "graph_from_dict",
    "load_spec",
    "plan_allocation",
    "propagate_grades",
    "propagate_intervals",
    "select_representation",
]
