"""Forward-mode tangent graphs.

A tangent graph is an ordinary :class:`~abelia.graph.Graph` holding the base
graph plus, for every node that depends on the seed, a tangent node ``d.<id>``
built from the usual dual-number rules.  Tangent nodes carry no declared
dimension: elaborating the tangent graph has to infer them, which is what
makes the closure check meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dims import Dimension, gradient_dimension
from .graph import (
    Config,
    ElabError,
    ElaborationReport,
    Graph,
    Hyperedge,
    Interval,
    Node,
    elaborate,
    propagate_grades,
)
from .unify import apply_substitution


class DiffError(ValueError):
    pass


class EvalError(ArithmeticError):
    pass


BILINEAR = frozenset({"mul", "geometric", "wedge", "dot"})
LINEAR = frozenset({"neg", "sum_reduce", "grade_project"})


@dataclass
class TangentGraph:
    base: Graph
    seed: str
    graph: Graph
    tangent: dict[str, str]  # base id -> tangent id
    derived: frozenset[str]  # every node the derivation introduced

    def tangent_of(self, nid: str) -> str | None:
        return self.tangent.get(nid)


class _Builder:
    def __init__(self, g: Graph):
        self.g = g
        self.nodes: dict[str, Node] = {}
        self.edges: list[Hyperedge] = []
        self.derived: list[str] = []

    def base(self, node: Node) -> None:
        self.nodes[node.id] = node

    def fresh(self, name: str, op: str, inputs, k: int | None = None) -> str:
        nid = name
        i = 1
        while nid in self.nodes or nid in self.g.nodes:
            nid = f"{name}.{i}"
            i += 1
        self.nodes[nid] = Node(nid, "intermediate")
        self.edges.append(Hyperedge(op, tuple(inputs), nid, k))
        self.derived.append(nid)
        return nid

    def const(self, name: str, value: float) -> str:
        nid = name
        i = 1
        while nid in self.nodes or nid in self.g.nodes:
            nid = f"{name}.{i}"
            i += 1
        self.nodes[nid] = Node(nid, "constant", None, Dimension(), frozenset({0}), Interval(value, value), value)
        return nid


def derive_tangent_graph(g: Graph, seed: str) -> TangentGraph:
    if seed not in g.nodes:
        raise DiffError(f"unknown seed {seed!r}")
    if g.nodes[seed].role not in ("input", "parameter"):
        raise DiffError(f"seed {seed!r} is a {g.nodes[seed].role}, not an input or parameter")

    b = _Builder(g)
    tan: dict[str, str] = {}
    for nid in g.order:
        node = g.nodes[nid]
        b.base(node)
        if nid == seed:
            t = f"d.{seed}"
            b.nodes[t] = Node(t, "input", node.shape, Dimension(), node.grades, Interval(1.0, 1.0))
            b.derived.append(t)
            tan[nid] = t
            continue
        if nid not in g.producer:
            continue
        e = g.edges[g.producer[nid]]
        dts = [tan.get(u) for u in e.inputs]
        if all(d is None for d in dts):
            continue
        name = f"d.{nid}"
        op = e.op
        if op in ("add", "sub"):
            du, dv = dts
            if du and dv:
                tan[nid] = b.fresh(name, op, (du, dv))
            elif du:
                tan[nid] = du  # the tangent is the same value; alias it
            else:
                tan[nid] = dv if op == "add" else b.fresh(name, "neg", (dv,))
        elif op in BILINEAR:
            (u, v), (du, dv) = e.inputs, dts
            if du and dv:
                left = b.fresh(f"{name}.l", op, (du, v))
                right = b.fresh(f"{name}.r", op, (u, dv))
                tan[nid] = b.fresh(name, "add", (left, right))
            else:
                tan[nid] = b.fresh(name, op, (du, v) if du else (u, dv))
        elif op == "div":
            (u, v), (du, dv) = e.inputs, dts
            if not dv:
                tan[nid] = b.fresh(name, "div", (du, v))
            else:
                # (du*v - u*dv) / v^2
                r = b.fresh(f"{name}.r", "mul", (u, dv))
                if du:
                    num = b.fresh(f"{name}.n", "sub", (b.fresh(f"{name}.l", "mul", (du, v)), r))
                else:
                    num = b.fresh(f"{name}.n", "neg", (r,))
                tan[nid] = b.fresh(name, "div", (num, b.fresh(f"{name}.v2", "pow", (v,), 2)))
        elif op == "pow":
            (u,), (du,) = e.inputs, dts
            if e.k == 0:
                continue
            if e.k == 1:
                tan[nid] = du
                continue
            c = b.const(f"{name}.k", float(e.k))
            scale = b.fresh(f"{name}.s", "mul", (c, b.fresh(f"{name}.p", "pow", (u,), e.k - 1)))
            tan[nid] = b.fresh(name, "mul", (scale, du))
        elif op in LINEAR:
            tan[nid] = b.fresh(name, op, (dts[0],), e.k)
        elif op == "consume_external":
            continue
        else:  # pragma: no cover
            raise DiffError(f"no tangent rule for {op}")

    # base edges keep their positions relative to the derived ones by node order
    edges = list(g.edges) + b.edges
    outputs = list(g.outputs) + [tan[o] for o in g.outputs if o in tan and tan[o] not in g.outputs]
    outputs = list(dict.fromkeys(outputs))
    graph = Graph(b.nodes, edges, tuple(outputs), g.basis, g.signature)
    return TangentGraph(g, seed, graph, tan, frozenset(b.derived))


# ----------------------------------------------------------------- closure


def tangent_dimension_mismatches(tg: TangentGraph, report: ElaborationReport) -> list[str]:
    """Nodes whose inferred tangent dimension differs from ``dim(y) / dim(seed)``."""
    g = tg.graph
    s = report.substitution
    d_seed = apply_substitution(s, g.node_dim(tg.seed))
    bad = []
    for y, t in tg.tangent.items():
        want = gradient_dimension(apply_substitution(s, g.node_dim(y)), d_seed)
        got = apply_substitution(s, g.node_dim(t))
        if want != got:
            bad.append(f"{t}: inferred {got}, expected {want}")
    return bad


def check_closure(tg: TangentGraph, config: Config | None = None) -> ElaborationReport:
    """Elaborate the tangent graph; any error is a closure violation."""
    report = elaborate(tg.graph, config)
    errors = [ElabError("closure-violation", f"{e.kind}: {e.message}", e.where, e.residual) for e in report.errors]
    if not report.errors:
        errors += [ElabError("closure-violation", f"tangent dimension mismatch {m}", m.split(":")[0])
                   for m in tangent_dimension_mismatches(tg, report)]
    if not errors:
        return report
    return ElaborationReport(False, report.substitution, report.nodes, report.sparsity, report.free_vars,
                             report.score, report.constraints_violated, report.grade_nonzero, tuple(errors),
                             report.signature, report.elapsed_s)


# -------------------------------------------------------------- evaluation


@dataclass
class EvalTrace:
    values: dict[str, object] = field(default_factory=dict)
    peak_live_tangent_buffers: int = 0
    total_nodes_evaluated: int = 0


def _apply(e: Hyperedge, args: list):
    op = e.op
    if op == "add":
        return args[0] + args[1]
    if op == "sub":
        return args[0] - args[1]
    if op in ("mul", "geometric", "wedge"):
        return args[0] * args[1]
    if op == "div":
        if np.any(np.asarray(args[1]) == 0):
            raise EvalError(f"division by zero in {e.label()}")
        return args[0] / args[1]
    if op == "pow":
        if e.k < 0 and np.any(np.asarray(args[0]) == 0):
            raise EvalError(f"zero to a negative power in {e.label()}")
        return args[0] ** e.k if e.k >= 0 else 1.0 / args[0] ** -e.k
    if op == "neg":
        return -args[0]
    if op == "sum_reduce":
        return float(np.sum(args[0]))
    if op == "dot":
        return float(np.sum(np.asarray(args[0]) * np.asarray(args[1])))
    if op == "grade_project":
        # only scalar graphs are evaluated, where projecting grade 0 is the identity
        return args[0] if e.k == 0 else 0.0 * args[0]
    raise EvalError(f"cannot evaluate {op}")  # pragma: no cover


def _as_value(x, shape):
    if shape:
        arr = np.asarray(x, dtype=float)
        if arr.shape != tuple(shape):
            arr = np.broadcast_to(arr, tuple(shape)).copy()
        return arr
    return float(x)


def _require_scalar_algebra(g: Graph) -> None:
    if g.signature is not None and g.signature.n > 0:
        grades = propagate_grades(g)
        if any(gs != {0} for gs in grades.values()):
            raise EvalError("numeric evaluation supports scalar (grade-0) graphs only")


def _run(g: Graph, inputs: Mapping[str, object], fixed: Mapping[str, object] = (), tangent_ids=frozenset()):
    _require_scalar_algebra(g)
    fixed = dict(fixed)
    remaining = {nid: len({ei for ei in g.consumers.get(nid, ())}) for nid in g.nodes}
    keep = set(g.outputs)
    live: dict[str, object] = {}
    live_tangents = 0
    trace = EvalTrace()
    out: dict[str, object] = {}
    for nid in g.order:
        node = g.nodes[nid]
        if nid in fixed:
            val = fixed[nid]
        elif node.role == "constant":
            val = node.value
        elif nid not in g.producer:
            if nid not in inputs:
                raise EvalError(f"missing input {nid!r}")
            val = inputs[nid]
        else:
            e = g.edges[g.producer[nid]]
            val = _apply(e, [live[u] for u in e.inputs])
            # release inputs whose last consumer just ran
            for u in set(e.inputs):
                remaining[u] -= 1
                if remaining[u] == 0 and u not in keep:
                    del live[u]
                    live_tangents -= u in tangent_ids
        val = _as_value(val, node.shape) if node.shape and nid not in g.producer else val
        trace.total_nodes_evaluated += 1
        out[nid] = val
        live[nid] = val
        if nid in tangent_ids:
            live_tangents += 1
            trace.peak_live_tangent_buffers = max(trace.peak_live_tangent_buffers, live_tangents)
        if remaining[nid] == 0 and nid not in keep:
            del live[nid]
            live_tangents -= nid in tangent_ids
    trace.values = out
    return out, trace


def evaluate_graph(g: Graph, inputs: Mapping[str, object]) -> dict[str, object]:
    return _run(g, inputs)[0]


def evaluate_forward(tg: TangentGraph, inputs: Mapping[str, object]):
    """One topological pass computing primal and tangent values together.

    Returns ``(primal, tangent, trace)`` keyed by base node id; nodes that do
    not depend on the seed have tangent 0.
    """
    seed_node = tg.base.nodes[tg.seed]
    one = np.ones(seed_node.shape) if seed_node.shape else 1.0
    values, trace = _run(tg.graph, inputs, {f"d.{tg.seed}": one}, tg.derived)
    primal = {nid: values[nid] for nid in tg.base.nodes}
    tangent = {nid: (values[tg.tangent[nid]] if nid in tg.tangent else 0.0) for nid in tg.base.nodes}
    return primal, tangent, trace


def finite_difference_check(g: Graph, inputs: Mapping[str, object], seed: str, h: float = 1e-5) -> float:
    """Max relative error between the tangent and a central difference over outputs.

    Where the tangent is exactly 0 the absolute error is used instead.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    tg = derive_tangent_graph(g, seed)
    _, tangent, _ = evaluate_forward(tg, inputs)
    x = np.asarray(inputs[seed], dtype=float)
    plus = evaluate_graph(g, {**inputs, seed: x + h if x.ndim else float(x) + h})
    minus = evaluate_graph(g, {**inputs, seed: x - h if x.ndim else float(x) - h})
    worst = 0.0
    for o in g.outputs:
        fd = (np.asarray(plus[o], dtype=float) - np.asarray(minus[o], dtype=float)) / (2 * h)
        t = np.asarray(tangent[o], dtype=float)
        err = np.abs(fd - t)
        rel = np.where(t != 0, err / np.where(t != 0, np.abs(t), 1.0), err)
        worst = max(worst, float(np.max(rel)))
    return worst


__all__ = [
    "DiffError",
    "EvalError",
    "EvalTrace",
    "TangentGraph",
    "check_closure",
    "derive_tangent_graph",
    "evaluate_forward",
    "evaluate_graph",
    "finite_difference_check",
    "tangent_dimension_mismatches",
]
