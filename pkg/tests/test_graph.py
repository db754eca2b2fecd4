import itertools
import json
import math
import random
from pathlib import Path

import numpy as np
import pytest

from abelia.clifford import build_cayley, sparsity_count
from abelia.diff import evaluate_graph
from abelia.dims import parse_dimension as P
from abelia.graph import (
    CANDIDATES,
    FLOAT16,
    FLOAT32,
    FLOAT64,
    POSIT8,
    POSIT16,
    POSIT32,
    Config,
    ElaborationReport,
    EscapeClass,
    GradeError,
    Hyperedge,
    Interval,
    RepresentationError,
    SpecError,
    classify_escape,
    elaborate,
    format_report,
    generate_constraints,
    graph_from_dict,
    load_spec,
    plan_allocation,
    propagate_grades,
    propagate_intervals,
    select_representation,
    worst_relative_spacing,
)
from abelia.unify import apply_substitution, is_solution

from graphgen import random_dimensioned_spec, random_scalar_spec

SPECS = Path(__file__).resolve().parent.parent / "specs"


def spec(name):
    return load_spec((SPECS / name).read_text())


def minimal_add():
    return {"nodes": [{"id": "a", "role": "input", "dim": "m", "range": [0, 1]},
                      {"id": "b", "role": "input", "dim": "m", "range": [0, 1]},
                      {"id": "c", "role": "output"}],
            "edges": [{"op": "add", "inputs": ["a", "b"], "output": "c"}]}


# ------------------------------------------------------------------ loading


def test_load_examples():
    g = graph_from_dict(minimal_add())
    assert len(g.nodes) == 3 and len(g.edges) == 1
    assert g.outputs == ("c",)  # output role implies graph output
    fma = spec("fma.json")
    assert {"F", "m", "a", "loss"} <= set(fma.nodes)


@pytest.mark.parametrize("mutate,kind", [
    (lambda s: s["edges"][0].update(inputs=["a", "zz"]), "unknown-node"),
    (lambda s: s["edges"][0].update(op="frobnicate"), "unknown-op"),
    (lambda s: s["edges"][0].update(inputs=["a"]), "arity"),
    (lambda s: s["nodes"].append({"id": "a", "role": "input", "dim": "m"}), "duplicate-id"),
    (lambda s: s["nodes"][0].update(dim="furlong"), "dimension"),
    (lambda s: s.update(base_dims=["m", "m"]), "basis"),
    (lambda s: s.update(signature={"p": 20}), "signature"),
])
def test_load_errors(mutate, kind):
    s = minimal_add()
    mutate(s)
    with pytest.raises(SpecError) as err:
        graph_from_dict(s)
    assert err.value.kind == kind


def test_load_cycle_and_parse_errors():
    with pytest.raises(SpecError) as err:
        spec("malformed_cycle.json")
    assert err.value.kind == "cycle"
    with pytest.raises(SpecError) as err:
        load_spec("{not json")
    assert err.value.kind == "parse"


def test_spec_roundtrip():
    g = spec("pga_bivector.json")
    g2 = graph_from_dict(g.to_spec())
    assert g2.to_spec() == g.to_spec()


# -------------------------------------------------------------- constraints


def test_constraint_examples():
    g = spec("fma.json")
    eqs = generate_constraints(g)
    assert len(eqs) == 3
    assert eqs[0].lhs == g.node_dim("ma") and eqs[0].rhs == P("kg") * P("m*s^-2")
    g = graph_from_dict({"nodes": [{"id": "x", "role": "input", "dim": "m", "range": [1, 2]}, {"id": "y"}],
                         "edges": [{"op": "neg", "inputs": ["x"], "output": "y"}]})
    assert len(generate_constraints(g)) == 1
    g = graph_from_dict({"nodes": [{"id": "x", "role": "input", "dim": "m", "range": [1, 2]}, {"id": "y"}],
                         "edges": [{"op": "pow", "k": 2, "inputs": ["x"], "output": "y"}]})
    r = elaborate(g)
    assert r.accepted and r.node("y").dim == "m^2"


# ------------------------------------------------------------------- grades


def test_grade_examples():
    g = spec("pga_bivector.json")
    gr = propagate_grades(g)
    assert gr["P"] <= {0, 2, 4} and not gr["P"] & {1, 3}
    with pytest.raises(GradeError) as err:
        propagate_grades(spec("pga_project_odd.json"))
    assert err.value.errors[0].kind == "grade-empty"
    gr = propagate_grades(spec("fma.json"))
    assert all(v == {0} for v in gr.values())


def test_grade_rules():
    def one(op, ga, gb=None, k=None):
        nodes = [{"id": "a", "role": "input", "dim": "1", "grades": ga, "range": [0, 1]}]
        ins = ["a"]
        if gb is not None:
            nodes.append({"id": "b", "role": "input", "dim": "1", "grades": gb, "range": [1, 2]})
            ins.append("b")
        nodes.append({"id": "o"})
        e = {"op": op, "inputs": ins, "output": "o"}
        if k is not None:
            e["k"] = k
        g = graph_from_dict({"signature": {"p": 3, "q": 0, "r": 1}, "nodes": nodes, "edges": [e]})
        return propagate_grades(g)["o"]

    assert one("wedge", [1], [1]) == {2}
    assert one("geometric", [1], [1]) == {0, 2}
    assert one("add", [1], [2]) == {1, 2}
    assert one("dot", [1, 2], [1]) == {0}
    assert one("grade_project", [0, 2], k=2) == {2}
    with pytest.raises(GradeError):
        one("wedge", [2], [3])
    with pytest.raises(GradeError):
        one("div", [1], [1])


# ------------------------------------------------------------------- escape


def _escape_graph(extra_edges=()):
    return graph_from_dict({
        "nodes": [{"id": "x", "role": "input", "dim": "1", "range": [0, 1]}, {"id": "t"}, {"id": "o", "role": "output"},
                  {"id": "s"}],
        "edges": [{"op": "mul", "inputs": ["x", "x"], "output": "t"},
                  {"op": "neg", "inputs": ["t"], "output": "o"},
                  {"op": "add", "inputs": ["x", "x"], "output": "s"},
                  *extra_edges],
        "outputs": ["o"],
    })


def test_escape_examples():
    g = _escape_graph()
    cls = classify_escape(g)
    assert cls["o"] == EscapeClass.ReturnEscaping
    assert cls["s"] == EscapeClass.StackScoped
    assert cls["t"] == EscapeClass.ReturnEscaping  # aliased through neg
    g = _escape_graph([{"op": "consume_external", "inputs": ["t"]}])
    assert classify_escape(g)["t"] == EscapeClass.ByRefEscaping
    spec_d = _escape_graph().to_spec()
    spec_d["nodes"].append({"id": "o2", "role": "intermediate"})
    spec_d["edges"].append({"op": "mul", "inputs": ["s", "x"], "output": "o2", "deferred": True})
    assert classify_escape(graph_from_dict(spec_d))["s"] == EscapeClass.ClosureCaptured


def test_escape_monotone():
    rng = random.Random(7)
    for _ in range(100):
        s = random_scalar_spec(rng, n_edges=6)
        g = graph_from_dict(s)
        before = classify_escape(g)
        ids = list(g.nodes)
        s2 = json.loads(json.dumps(s))
        extra = rng.choice([{"op": "consume_external", "inputs": [rng.choice(ids)]},
                            {"op": "neg", "inputs": [rng.choice(ids)], "output": "zz", "deferred": rng.random() < 0.5}])
        if "output" in extra:
            s2["nodes"].append({"id": "zz"})
            s2["outputs"] = s2["outputs"] + (["zz"] if rng.random() < 0.5 else [])
        s2["edges"].append(extra)
        after = classify_escape(graph_from_dict(s2))
        assert all(after[n] >= before[n] for n in before)


def test_allocation_examples():
    assert plan_allocation(EscapeClass.StackScoped, 1024, 65536) == "stack"
    assert plan_allocation(EscapeClass.StackScoped, 1 << 20, 65536) == "region"
    assert plan_allocation(EscapeClass.ClosureCaptured, 8) == "region"
    for big in (0, 1 << 30):
        assert plan_allocation(EscapeClass.ReturnEscaping, big) == "caller-region"
        assert plan_allocation(EscapeClass.ByRefEscaping, big) == "caller-region"


# ---------------------------------------------------------- representation


def test_representation_examples():
    assert select_representation((0.5, 2.0), 2.0 ** -20) == POSIT32
    assert select_representation((0.0, 0.0), 1e-6) == POSIT8
    assert select_representation((1e300, 1e305), 1e-2) == FLOAT64
    with pytest.raises(RepresentationError):
        select_representation((1.0, 2.0), 1e-30)


def test_representation_ordering_rationale():
    # float32 meets 2^-20 on [0.5, 2], posit16 does not; posit32 precedes float32
    assert worst_relative_spacing(FLOAT32, 0.5, 2.0) <= 2.0 ** -20
    assert worst_relative_spacing(POSIT16, 0.5, 2.0) > 2.0 ** -20
    assert CANDIDATES.index(POSIT32) < CANDIDATES.index(FLOAT32)


def decode_posit(bits: int, n: int, es: int = 2) -> float:
    """Textbook posit decoding (independent oracle)."""
    if bits == 0:
        return 0.0
    if bits == 1 << (n - 1):
        return math.nan
    neg = bits >> (n - 1) & 1
    if neg:
        bits = (-bits) & ((1 << n) - 1)
    s = format(bits, f"0{n}b")[1:]
    first = s[0]
    run = len(s) - len(s.lstrip(first))
    k = run - 1 if first == "1" else -run
    rest = s[run + 1:]
    ebits = rest[:es].ljust(es, "0")
    frac = rest[es:]
    e = int(ebits, 2)
    f = 1 + (int(frac, 2) / (1 << len(frac)) if frac else 0)
    v = math.ldexp(f, k * (1 << es) + e)
    return -v if neg else v


def _values(rep):
    if rep.kind == "float16":
        v = np.arange(0, 0x7C00, dtype=np.uint16).view(np.float16).astype(float)
        return np.unique(v[v > 0])
    n = rep.width_bits
    return np.array(sorted({decode_posit(b, n) for b in range(1, 1 << (n - 1))}))


def oracle_spacing(vals, lo, hi):
    """Max over x in [lo, hi] of (next value above x's floor - floor) / x."""
    worst = 0.0
    for i in range(len(vals) - 1):
        a, b = vals[i], vals[i + 1]
        if b <= lo or a > hi:
            continue
        worst = max(worst, (b - a) / max(a, lo))
    return worst


@pytest.mark.parametrize("rep", [POSIT8, POSIT16, FLOAT16])
def test_spacing_matches_enumeration(rep):
    vals = _values(rep)
    rng = random.Random(rep.width_bits)
    lo_e, hi_e = math.log2(vals[1]), math.log2(vals[-2])
    for _ in range(300 if rep.width_bits > 8 else 1000):
        a = 2 ** rng.uniform(lo_e, hi_e)
        b = 2 ** rng.uniform(lo_e, hi_e)
        lo, hi = min(a, b), max(a, b)
        want = oracle_spacing(vals, lo, hi)
        got = worst_relative_spacing(rep, lo, hi)
        assert math.isclose(got, want, rel_tol=1e-12), (rep.kind, lo, hi)


def test_posit_decoder_sanity():
    assert decode_posit(0b01000000, 8) == 1.0
    assert decode_posit(0b01111111, 8) == 2.0 ** 24  # maxpos = useed^(n-2)
    assert POSIT8.max_magnitude == 2.0 ** 24


# ---------------------------------------------------------------- elaborate


def test_elaborate_examples():
    r = elaborate(spec("fma.json"))
    assert r.accepted and r.node("loss").dim == "kg*m*s^-2"
    assert r.free_vars == 0 and r.score == 1
    r = elaborate(spec("fmv.json"))
    assert not r.accepted and r.errors[0].kind == "inconsistent"
    assert P(r.errors[0].residual) in (P("s^-1"), P("s"))
    r = elaborate(spec("grad_accum.json"))
    assert not r.accepted and r.errors[0].kind == "inconsistent"


def test_report_chain_fields():
    r = elaborate(spec("fma.json"))
    loss = r.node("loss")
    assert loss.escape == "ReturnEscaping" and loss.allocation == "caller-region"
    assert loss.footprint_bytes == loss.representation.width_bits // 8
    text = format_report(r, timing=False)
    assert "kg*m*s^-2" in text and "caller-region" in text and "elaboration time" not in text


def test_range_errors():
    s = minimal_add()
    s["nodes"].append({"id": "q"})
    s["edges"].append({"op": "div", "inputs": ["c", "a"], "output": "q"})
    r = elaborate(graph_from_dict(s))
    assert [e.kind for e in r.errors] == ["range-undetermined"]
    s = minimal_add()
    del s["nodes"][0]["range"]
    assert [e.kind for e in elaborate(graph_from_dict(s)).errors] == ["range-missing"]


def test_stack_limit_config():
    s = {"nodes": [{"id": "x", "role": "input", "dim": "1", "shape": [1024], "range": [0, 1]}, {"id": "y"}],
         "edges": [{"op": "neg", "inputs": ["x"], "output": "y"}]}
    g = graph_from_dict(s)
    assert elaborate(g).node("y").allocation == "stack"
    assert elaborate(g, Config(stack_limit=16)).node("y").allocation == "region"
    with pytest.raises(ValueError):
        Config(eps_budget=0)


def test_substitution_sound_on_accepted():
    rng = random.Random(8)
    done = 0
    while done < 100:
        g = graph_from_dict(random_dimensioned_spec(rng, clifford=rng.random() < 0.5))
        r = elaborate(g)
        if not r.accepted:
            continue
        done += 1
        assert is_solution(r.substitution, generate_constraints(g))
        for n in r.nodes:
            assert P(n.dim) == apply_substitution(r.substitution, g.node_dim(n.id))


def test_json_deterministic_and_roundtrip():
    for name in ["fma.json", "fmv.json", "pga_bivector.json", "grad_accum.json", "pga_project_odd.json"]:
        text = (SPECS / name).read_text()
        a, b = elaborate(load_spec(text)), elaborate(load_spec(text))
        assert a.dumps() == b.dumps()
        assert ElaborationReport.loads(a.dumps()) == a
        assert ElaborationReport.loads(a.dumps()).dumps() == a.dumps()


def test_sparsity_stats_match_clifford():
    rng = random.Random(9)
    checked = 0
    for _ in range(200):
        g = graph_from_dict(random_dimensioned_spec(rng, clifford=True))
        r = elaborate(g)
        grades = {n.id: set(n.grades) for n in r.nodes}
        t = build_cayley((3, 0, 1))
        for st in r.sparsity:
            e = g.edges[st.edge]
            assert e.op == "geometric"
            a, b = grades[e.inputs[0]], grades[e.inputs[1]]
            assert (st.nonzero, st.total) == sparsity_count(t, a, b)
            checked += 1
    assert checked > 20


def test_interval_soundness():
    rng = random.Random(10)
    graphs = 0
    while graphs < 500:
        s = random_scalar_spec(rng, n_inputs=rng.randint(1, 3), n_edges=rng.randint(1, 6))
        g = graph_from_dict(s)
        ranges = propagate_intervals(g, errors=[])
        graphs += 1
        ins = g.inputs
        corners = itertools.product(*[(g.nodes[i].range.lo, g.nodes[i].range.hi) for i in ins])
        samples = list(corners) + [tuple(rng.uniform(g.nodes[i].range.lo, g.nodes[i].range.hi) for i in ins)
                                   for _ in range(8)]
        for point in samples:
            try:
                vals = evaluate_graph(g, dict(zip(ins, point)))
            except (ArithmeticError, ZeroDivisionError):
                continue
            for nid, v in vals.items():
                r = ranges[nid]
                if r is None or not math.isfinite(v):
                    continue
                assert r.lo <= v <= r.hi, (nid, v, r)


def test_interval_type():
    with pytest.raises(ValueError):
        Interval(2.0, 1.0)
    assert Interval(-1.0, 2.0).magnitude == 2.0
    assert Hyperedge("pow", ("x",), "y", k=2).label() == "pow(2)(x) -> y"
