import random

import pytest

from abelia.diff import (
    DiffError,
    EvalError,
    check_closure,
    derive_tangent_graph,
    evaluate_forward,
    evaluate_graph,
    finite_difference_check,
)
from abelia.dims import gradient_dimension, parse_dimension as P
from abelia.graph import elaborate, graph_from_dict
from abelia.unify import apply_substitution

from graphgen import chain_spec, random_dimensioned_spec, random_monotone_spec
from test_graph import spec


def unary(op, dim="m", k=None, x_range=(1.0, 4.0)):
    e = {"op": op, "inputs": ["x"], "output": "y"}
    if k is not None:
        e["k"] = k
    return graph_from_dict({"nodes": [{"id": "x", "role": "input", "dim": dim, "range": list(x_range)},
                                      {"id": "y", "role": "output"}], "edges": [e]})


def product():
    return graph_from_dict({"nodes": [{"id": "u", "role": "input", "dim": "m", "range": [1, 3]},
                                      {"id": "v", "role": "input", "dim": "s", "range": [1, 6]},
                                      {"id": "y", "role": "output"}],
                            "edges": [{"op": "mul", "inputs": ["u", "v"], "output": "y"}]})


def tangent_dim(tg, report, nid):
    return apply_substitution(report.substitution, tg.graph.node_dim(tg.tangent[nid]))


def test_tangent_dimension_examples():
    g = unary("pow", k=2)
    tg = derive_tangent_graph(g, "x")
    r = check_closure(tg)
    assert r.accepted
    assert tangent_dim(tg, r, "y") == P("m")
    g = spec("fma.json")
    tg = derive_tangent_graph(g, "m")
    r = check_closure(tg)
    assert r.accepted
    assert tangent_dim(tg, r, "loss") == P("m*s^-2")


def test_seed_must_be_source():
    g = spec("fma.json")
    with pytest.raises(DiffError):
        derive_tangent_graph(g, "ma")
    with pytest.raises(DiffError):
        derive_tangent_graph(g, "nope")


def test_evaluate_examples():
    tg = derive_tangent_graph(unary("pow", k=2), "x")
    primal, tangent, trace = evaluate_forward(tg, {"x": 3.0})
    assert primal["y"] == 9.0 and tangent["y"] == 6.0
    tg = derive_tangent_graph(product(), "u")
    primal, tangent, _ = evaluate_forward(tg, {"u": 2.0, "v": 5.0})
    assert primal["y"] == 10.0 and tangent["y"] == 5.0
    assert tangent["v"] == 0.0


def test_finite_difference_examples():
    assert finite_difference_check(unary("pow", k=2), {"x": 3.0}, "x", 1e-5) <= 1e-8
    g = graph_from_dict({"nodes": [{"id": "x", "role": "input", "dim": "1", "range": [0, 4]},
                                   {"id": "c", "role": "constant", "value": 3.0}, {"id": "y", "role": "output"}],
                         "edges": [{"op": "mul", "inputs": ["c", "x"], "output": "y"}]})
    # h = 2^-16 keeps x +- h exact, so the central difference of 3x is exact up to one rounding
    assert finite_difference_check(g, {"x": 0.5}, "x", 2.0 ** -16) <= 1e-12
    assert finite_difference_check(unary("pow", k=-1), {"x": 2.0}, "x", 1e-5) <= 1e-7


def test_evaluation_errors():
    tg = derive_tangent_graph(unary("pow", k=-1, x_range=(-1.0, 1.0)), "x")
    with pytest.raises(EvalError):
        evaluate_forward(tg, {"x": 0.0})
    with pytest.raises(EvalError):
        evaluate_graph(unary("neg"), {})
    with pytest.raises(EvalError):
        evaluate_graph(spec("pga_bivector.json"), {"B1": 1.0, "B2": 1.0})


def test_closure_rejects_when_base_is_bad():
    tg = derive_tangent_graph(spec("fmv.json"), "m")
    r = check_closure(tg)
    assert not r.accepted and all(e.kind == "closure-violation" for e in r.errors)


def test_closure_random_mixed():
    rng = random.Random(21)
    done = 0
    while done < 200:
        g = graph_from_dict(random_dimensioned_spec(rng, clifford=done % 2 == 1))
        base = elaborate(g)
        if not base.accepted:
            continue
        seed = rng.choice(g.inputs)
        tg = derive_tangent_graph(g, seed)
        r = check_closure(tg)
        assert r.accepted, [e.message for e in r.errors]
        d_seed = apply_substitution(base.substitution, g.node_dim(seed))
        for y in tg.tangent:
            want = gradient_dimension(apply_substitution(base.substitution, g.node_dim(y)), d_seed)
            assert tangent_dim(tg, r, y) == want
        done += 1


def test_memory_bound_chain():
    peaks = []
    for depth in (10, 100, 1000):
        g = graph_from_dict(chain_spec(depth))
        tg = derive_tangent_graph(g, "x")
        _, tangent, trace = evaluate_forward(tg, {"x": 1.5, "w": 1.0})
        peaks.append(trace.peak_live_tangent_buffers)
        assert abs(tangent[f"y{depth - 1}"]) == 1.0  # only multiplications, divisions by 1 and negations
    assert peaks[0] == peaks[1] == peaks[2]


def test_chain_closure_depth_100():
    g = graph_from_dict(chain_spec(100))
    assert check_closure(derive_tangent_graph(g, "x")).accepted


def test_finite_difference_random():
    rng = random.Random(22)
    for _ in range(60):
        seed = f"x{rng.randrange(3)}"
        g = graph_from_dict(random_monotone_spec(rng, seed, n_edges=rng.randint(1, 8)))
        inputs = {i: rng.uniform(1.0, 2.0) for i in g.inputs}
        assert finite_difference_check(g, inputs, seed, 1e-5) <= 1e-6
