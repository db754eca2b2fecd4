"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import math
import random
import time
from fractions import Fraction

import numpy as np

from abelia.clifford import Signature, build_cayley, grade_product_set, sparsity_count
from abelia.coherence import Categorical, DiagGaussian, accept_consultation, kl
from abelia.diff import check_closure, derive_tangent_graph, evaluate_forward, finite_difference_check
from abelia.dims import Dimension, gradient_dimension
from abelia.graph import elaborate, graph_from_dict, load_spec
from abelia.mdl import mdl_verify
from abelia.numeric import drift_probe, exact_dot
from abelia.unify import DimEquation, apply_substitution, solve_system

from conftest import ACCEPTANCE_LINES
from graphgen import chain_spec, random_dimensioned_spec, random_monotone_spec
from test_clifford import oracle_sparsity, word_product
from test_graph import SPECS
from test_numeric import f32, round_fraction
from test_unify import check_principal, random_system


def report(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_01_fma_fmv():
    times = {}
    reports = {}
    for name in ("fma.json", "fmv.json"):
        text = (SPECS / name).read_text()
        t0 = time.perf_counter()
        reports[name] = elaborate(load_spec(text))
        times[name] = time.perf_counter() - t0
    fma, fmv = reports["fma.json"], reports["fmv.json"]
    residual = any("s^-1" in e.message for e in fmv.errors)
    loss = fma.node("loss").dim == "kg*m*s^-2"
    ok = fma.accepted and not fmv.accepted and residual and loss and max(times.values()) < 0.010
    report(1, ok, f"F-ma accepted, F-mv rejected (residual s^-1: {residual}); "
                  f"{times['fma.json'] * 1e3:.2f} ms / {times['fmv.json'] * 1e3:.2f} ms")


def test_02_gradient_accumulation_rejected():
    r = elaborate(load_spec((SPECS / "grad_accum.json").read_text()))
    kinds = sorted({e.kind for e in r.errors})
    report(2, not r.accepted and bool(r.errors), f"grad_accum rejected with {kinds}")


def test_03_cayley_pga():
    t = build_cayley((3, 0, 1))
    sig = Signature(3, 0, 1)
    entries = sum(1 for _ in t.rows())
    table_ok = all(t.entry(a, b) == word_product(a, b, sig.metric)
                   for a in range(16) for b in range(16))
    grades = grade_product_set(t, [2], [2])
    got = sparsity_count(t, [2], [2])
    want = oracle_sparsity(sig, {2}, {2})
    ok = (t.size == 16 and entries == 256 and table_ok and grades <= {0, 2, 4}
          and 1 not in grades and 3 not in grades and got == want)
    report(3, ok, f"16 blades, {entries} entries, bivector grades {sorted(grades)}, "
                  f"nonzero {got[0]}/{got[1]} (ratio {got[0] / got[1]:.3f}), oracle {want[0]}/{want[1]}")


def test_04_closure_200():
    rng = random.Random(404)
    done = bad = 0
    while done < 200:
        g = graph_from_dict(random_dimensioned_spec(rng, clifford=done % 2 == 1))
        base = elaborate(g)
        if not base.accepted:
            continue
        seed = rng.choice(g.inputs)
        tg = derive_tangent_graph(g, seed)
        r = check_closure(tg)
        d_seed = apply_substitution(base.substitution, g.node_dim(seed))
        exact = r.accepted and all(
            apply_substitution(r.substitution, tg.graph.node_dim(tg.tangent[y]))
            == gradient_dimension(apply_substitution(base.substitution, g.node_dim(y)), d_seed)
            for y in tg.tangent)
        bad += not exact
        done += 1
    report(4, bad == 0, f"{done - bad}/{done} tangent graphs accepted with node-exact dims")


def test_05_constant_memory():
    peaks = []
    for depth in (10, 100, 1000):
        tg = derive_tangent_graph(graph_from_dict(chain_spec(depth)), "x")
        _, _, trace = evaluate_forward(tg, {"x": 1.5, "w": 1.0})
        peaks.append(trace.peak_live_tangent_buffers)
    report(5, len(set(peaks)) == 1, f"peak live tangent buffers at depth 10/100/1000: {peaks}")


def test_06_finite_differences():
    rng = random.Random(606)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        seed = f"x{rng.randrange(3)}"
        g = graph_from_dict(random_monotone_spec(rng, seed, n_edges=rng.randint(1, 8)))
        inputs = {i: rng.uniform(1.0, 2.0) for i in g.inputs}
        worst = max(worst, finite_difference_check(g, inputs, seed, 1e-5))
    dt = time.perf_counter() - t0
    report(6, worst <= 1e-6 and dt < 5.0, f"100 graphs, h=1e-5, max relative error {worst:.2e}, {dt:.2f} s")


def test_07_mdl_map():
    t0 = time.perf_counter()
    stats = mdl_verify(60, n_vars=4, bound=3, seed=7, unsolvable_every=5)
    dt = time.perf_counter() - t0
    done = stats.agreed + stats.disagreed
    ok = done >= 50 and stats.disagreed == 0 and dt < 60
    report(7, ok, f"{stats.agreed}/{done} agree ({stats.skipped} skipped, {stats.unsolvable} unsolvable), "
                  f"{dt:.2f} s")


def test_08_principality():
    rng = random.Random(808)
    bad = 0
    for i in range(1000):
        n = rng.randint(1, 4)
        eqs, names = random_system(rng, n, rng.randint(0, n), coeff=3, solvable=i % 4 != 3)
        bad += not check_principal(eqs, names)
    report(8, bad == 0, f"{1000 - bad}/1000 boxed systems match exhaustive enumeration")


def _random_float(rng):
    if rng.random() < 0.2:
        return math.ldexp(rng.uniform(-1, 1), rng.randint(-1074, 1000))
    return rng.uniform(-1e3, 1e3)


def test_09_exact_accumulation():
    rng = random.Random(909)
    mismatches = 0
    for i in range(1000):
        n = rng.randint(1, 30)
        if i % 2:
            a = [f32(math.ldexp(rng.uniform(-1, 1), rng.randint(-140, 60))) for _ in range(n)]
            b = [f32(math.ldexp(rng.uniform(-1, 1), rng.randint(-20, 60))) for _ in range(n)]
            fmt, prec, emin, emax = "binary32", 24, -126, 127
        else:
            a = [_random_float(rng) for _ in range(n)]
            b = [_random_float(rng) for _ in range(n)]
            fmt, prec, emin, emax = "binary64", 53, -1022, 1023
        ref = sum((Fraction(x) * Fraction(y) for x, y in zip(a, b)), Fraction(0))
        exact, rounded = exact_dot(a, b, fmt)
        mismatches += exact != ref or rounded != round_fraction(ref, prec, emin, emax)
    drift = drift_probe(build_cayley((3, 0, 1)), 10_000, "binary32", seed=0)
    ok = mismatches == 0 and drift.exact_max == 0.0 and drift.naive_max > 0.0
    report(9, ok, f"exact_dot {1000 - mismatches}/1000 bit-exact; drift over 10^4 steps: "
                  f"exact {drift.exact_max:.1e}, naive binary32 {drift.naive_max:.3e}")


def test_10_coherence():
    def N(m, v=1.0):
        return DiagGaussian([m], [v])

    checks = [
        (kl(N(0), N(0)), 0.0),
        (kl(N(0), N(1)), 0.5),
        (kl(N(0, 2.0), N(0, 1.0)), 0.5 * (-math.log(2.0) + 1.0)),
        (kl(Categorical([0.5, 0.5]), Categorical([0.5, 0.5])), 0.0),
        (kl(Categorical([1.0, 0.0]), Categorical([0.5, 0.5])), math.log(2.0)),
        (kl(Categorical([0.9, 0.1]), Categorical([0.5, 0.5])), 0.9 * math.log(1.8) + 0.1 * math.log(0.2)),
    ]
    kl_ok = all(abs(got - want) <= 1e-9 for got, want in checks)
    before, domain = N(0), N(1)
    triple = accept_consultation(before, N(0.3), domain)
    gate_ok = (accept_consultation(before, before, domain).accept
               and not accept_consultation(before, before, before).accept
               and not accept_consultation(before, N(0.3), before).accept
               and triple.accept
               and abs(triple.state_change - 0.045) <= 1e-9 and abs(triple.disagreement - 0.5) <= 1e-9)
    cat = checks[-1][0]
    report(10, kl_ok and gate_ok, f"{len(checks)} KL values within 1e-9 (KL([.9,.1]||[.5,.5]) = {cat:.6f}); "
                                  f"gate triple left "
                                  f"{triple.state_change:.6f}, right {triple.disagreement:.6f}, {triple.decision}")


def dense_system(rng, n, bases=("m", "s", "kg")):
    """n equations in n unknowns, every coefficient drawn from [-3, 3] \\ {0}."""
    names = [f"v{i}" for i in range(n)]
    x0 = {v: {b: rng.randint(-2, 2) for b in bases} for v in names}
    eqs = []
    for _ in range(n):
        cs = {v: rng.choice([-3, -2, -1, 1, 2, 3]) for v in names}
        rhs = {b: sum(c * x0[v][b] for v, c in cs.items()) for b in bases}
        eqs.append(DimEquation(Dimension.of(vars=cs), Dimension.of(rhs)))
    return eqs


def test_11_unification_scaling():
    rng = random.Random(1111)
    sizes = [25, 50, 100, 200]
    times = []
    t_start = time.perf_counter()
    for n in sizes:
        eqs = dense_system(rng, n)
        best = math.inf
        for _ in range(2 if n < 200 else 1):
            t0 = time.perf_counter()
            solve_system(eqs)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    total = time.perf_counter() - t_start
    slope = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    shown = ", ".join(f"n={n}: {t:.3f} s" for n, t in zip(sizes, times))
    report(11, slope <= 3.5 and total < 120, f"log-log slope {slope:.2f} ({shown}; total {total:.1f} s)")
