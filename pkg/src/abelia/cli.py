"""Command-line front end.

Exit codes: 0 accepted / passed, 1 rejected / failed, 2 usage or malformed input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .clifford import SignatureError, build_cayley, grade_product_set, sparsity_count
from .coherence import DistributionError, accept_consultation, distribution_from_json
from .diff import DiffError, EvalError, check_closure, derive_tangent_graph, evaluate_forward, finite_difference_check
from .graph import Config, SpecError, elaborate, format_report, graph_from_dict
from .mdl import mdl_verify
from .numeric import drift_probe

EXIT_OK, EXIT_REJECT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(obj, as_json: bool, human: str) -> None:
    if as_json:
        sys.stdout.write(json.dumps(obj, indent=2) + "\n")
    else:
        sys.stdout.write(human if human.endswith("\n") else human + "\n")


def _load_json_arg(text: str, what: str):
    """Inline JSON, or a path to a JSON file."""
    try:
        if os.path.exists(text):
            return json.loads(Path(text).read_text(encoding="utf-8"))
        return json.loads(text)
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read {what}: {err}") from None


def load_config(args) -> Config:
    cfg = Config()
    path = os.environ.get("ABELIA_CONFIG")
    if path:
        try:
            cfg = Config.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, TypeError, ValueError) as err:
            raise UsageError(f"bad ABELIA_CONFIG {path}: {err}") from None
    overrides = {}
    if getattr(args, "eps", None) is not None:
        overrides["eps_budget"] = args.eps
    if getattr(args, "stack_limit", None) is not None:
        overrides["stack_limit"] = args.stack_limit
    if getattr(args, "json", False):
        overrides["format"] = "json"
    try:
        return replace(cfg, **overrides)
    except ValueError as err:
        raise UsageError(str(err)) from None


def _load_graph(path: str, cfg: Config):
    try:
        spec = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise UsageError(f"cannot read spec: {err}") from None
    except json.JSONDecodeError as err:
        raise SpecError("parse", f"invalid JSON: {err}") from None
    if isinstance(spec, dict) and "base_dims" not in spec and cfg.base_dims is not None:
        spec = {**spec, "base_dims": list(cfg.base_dims)}
    return graph_from_dict(spec)


def _parse_grades(text: str) -> list[int]:
    try:
        return sorted({int(x) for x in text.split(",") if x.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"grades must be comma-separated integers, got {text!r}") from None


def _table(args):
    try:
        return build_cayley((args.p, args.q, args.r))
    except SignatureError as err:
        raise UsageError(str(err)) from None


# --------------------------------------------------------------- commands


def cmd_check(args) -> int:
    cfg = load_config(args)
    g = _load_graph(args.spec, cfg)
    report = elaborate(g, cfg)
    if cfg.format == "json":
        sys.stdout.write(report.dumps())
    else:
        sys.stdout.write(format_report(report, timing=not args.no_timing))
    return EXIT_OK if report.accepted else EXIT_REJECT


def cmd_cayley(args) -> int:
    t = _table(args)
    rows = t.rows()
    if args.json:
        _emit({"signature": [args.p, args.q, args.r], "blades": t.size, "entries": len(rows), "rows": rows}, True, "")
        return EXIT_OK
    lines = [f"Cl({args.p},{args.q},{args.r}): {t.size} blades, {len(rows)} entries"]
    for row in rows:
        sign = {1: "+", -1: "-", 0: "0"}[row["sign"]]
        lines.append(f"{row['a']:>8} * {row['b']:<8} = {sign}{row['result']}")
    _emit(None, False, "\n".join(lines))
    return EXIT_OK


def cmd_sparsity(args) -> int:
    t = _table(args)
    a, b = args.grades
    for gs in (a, b):
        if any(not 0 <= x <= t.n for x in gs):
            raise UsageError(f"grades must lie in 0..{t.n}")
    nonzero, total = sparsity_count(t, a, b)
    result = sorted(grade_product_set(t, a, b))
    ratio = nonzero / total if total else 0.0
    obj = {"signature": [args.p, args.q, args.r], "grades_a": a, "grades_b": b,
           "nonzero": nonzero, "total": total, "ratio": ratio, "result_grades": result}
    human = (f"Cl({args.p},{args.q},{args.r}) grades {a} x {b}: {nonzero}/{total} nonzero "
             f"({ratio:.1%}); result grades {result}")
    _emit(obj, args.json, human)
    return EXIT_OK


def cmd_grad(args) -> int:
    cfg = load_config(args)
    g = _load_graph(args.spec, cfg)
    inputs = _load_json_arg(args.inputs, "inputs")
    if not isinstance(inputs, dict):
        raise UsageError("inputs must be a JSON object of node id -> value")
    base = elaborate(g, cfg)
    if not base.accepted:
        sys.stdout.write(base.dumps() if args.json else format_report(base, timing=False))
        return EXIT_REJECT
    try:
        tg = derive_tangent_graph(g, args.seed)
    except DiffError as err:
        raise UsageError(str(err)) from None
    closure = check_closure(tg, cfg)
    try:
        primal, tangent, trace = evaluate_forward(tg, inputs)
        fd = finite_difference_check(g, inputs, args.seed, args.h) if args.fd else None
    except EvalError as err:
        sys.stderr.write(f"evaluation failed: {err}\n")
        return EXIT_REJECT
    dims = {n.id: n.dim for n in closure.nodes}

    def val(x):
        return x.tolist() if hasattr(x, "tolist") else x

    rows = []
    for nid in g.nodes:
        tid = tg.tangent.get(nid)
        rows.append({"id": nid, "primal": val(primal[nid]), "tangent": val(tangent[nid]),
                     "dim": dims.get(nid), "tangent_dim": dims.get(tid) if tid else None})
    obj = {"seed": args.seed, "closure_accepted": closure.accepted, "nodes": rows,
           "peak_live_tangent_buffers": trace.peak_live_tangent_buffers,
           "total_nodes_evaluated": trace.total_nodes_evaluated,
           "errors": [e.to_json() for e in closure.errors]}
    if fd is not None:
        obj["fd_max_rel_error"] = fd
    lines = [f"seed {args.seed}: tangent graph {'ACCEPTED' if closure.accepted else 'REJECTED'}"]
    for r in rows:
        td = f"  d/d{args.seed} : {r['tangent_dim']}" if r["tangent_dim"] else ""
        lines.append(f"  {r['id']}: {r['primal']} [{r['dim']}]  tangent {r['tangent']}{td}")
    lines.append(f"peak live tangent buffers: {trace.peak_live_tangent_buffers}; "
                 f"nodes evaluated: {trace.total_nodes_evaluated}")
    if fd is not None:
        lines.append(f"finite-difference max relative error: {fd:.3e}")
    for e in closure.errors:
        lines.append(f"  {e.kind}: {e.message}")
    _emit(obj, args.json, "\n".join(lines))
    return EXIT_OK if closure.accepted else EXIT_REJECT


def cmd_mdl_verify(args) -> int:
    if not 1 <= args.vars <= 4 or not 0 <= args.bound <= 6 or args.trials < 0:
        raise UsageError("need --vars in 1..4, --bound in 0..6, --trials >= 0")
    stats = mdl_verify(args.trials, args.vars, args.bound, seed=args.seed, coeff=args.coeff,
                       unsolvable_every=args.unsolvable_every)
    human = (f"trials {stats.trials}: agreed {stats.agreed}, disagreed {stats.disagreed}, "
             f"skipped {stats.skipped} (box artifacts), unsolvable {stats.unsolvable}; "
             f"agreement {stats.rate:.1%}")
    _emit(stats.to_json(), args.json, human)
    return EXIT_OK if stats.disagreed == 0 else EXIT_REJECT


def cmd_drift(args) -> int:
    t = _table(args)
    if args.steps < 0:
        raise UsageError("--steps must be >= 0")
    try:
        res = drift_probe(t, args.steps, args.format, seed=args.seed)
    except ValueError as err:
        raise UsageError(str(err)) from None
    human = "\n".join([
        f"Cl({args.p},{args.q},{args.r}) bivector commutator loop, {res.steps} steps, {res.format}; "
        f"structural-zero grades {list(res.structural_zero_grades)}",
        f"{'mode':<8}{'max structural-zero magnitude':>32}{'steps nonzero':>16}",
        f"{'exact':<8}{res.exact_max:>32.6e}{res.exact_nonzero_steps:>16}",
        f"{'naive':<8}{res.naive_max:>32.6e}{res.naive_nonzero_steps:>16}",
    ])
    _emit(res.to_json(), args.json, human)
    return EXIT_OK if res.exact_max == 0 else EXIT_REJECT


def cmd_gate(args) -> int:
    try:
        dists = [distribution_from_json(_load_json_arg(x, name))
                 for x, name in ((args.before, "before"), (args.after, "after"), (args.domain, "domain"))]
        dec = accept_consultation(*dists)
    except (DistributionError, KeyError, TypeError) as err:
        raise UsageError(f"bad distribution: {err}") from None
    human = (f"KL(after || before) = {dec.state_change:.9g}\n"
             f"KL(before || domain) = {dec.disagreement:.9g}\n"
             f"decision: {dec.decision}")
    _emit(dec.to_json(), args.json, human)
    return EXIT_OK if dec.accept else EXIT_REJECT


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abelia", description="Design-time checker for typed computation graphs.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def sig(sp):
        sp.add_argument("p", type=int)
        sp.add_argument("q", type=int)
        sp.add_argument("r", type=int)

    c = sub.add_parser("check", help="elaborate a graph spec and print the report")
    c.add_argument("spec")
    c.add_argument("--json", action="store_true")
    c.add_argument("--eps", type=float, help="relative spacing budget for representation selection")
    c.add_argument("--stack-limit", type=int, help="bytes a stack-scoped value may occupy")
    c.add_argument("--no-timing", action="store_true", help="omit wall-clock time from human output")
    c.set_defaults(func=cmd_check)

    c = sub.add_parser("cayley", help="print the Cayley table of Cl(p,q,r)")
    sig(c)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_cayley)

    c = sub.add_parser("sparsity", help="count nonzero blade products between grade sets")
    sig(c)
    c.add_argument("--grades", nargs=2, type=_parse_grades, required=True, metavar=("A", "B"))
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_sparsity)

    c = sub.add_parser("grad", help="forward-mode tangents for one seed")
    c.add_argument("spec")
    c.add_argument("--seed", required=True)
    c.add_argument("--inputs", required=True, help="JSON object or path to one")
    c.add_argument("--fd", action="store_true", help="also run a central finite-difference check")
    c.add_argument("--h", type=float, default=1e-5)
    c.add_argument("--eps", type=float)
    c.add_argument("--stack-limit", type=int)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_grad)

    c = sub.add_parser("mdl-verify", help="compare unifier free-variable counts against brute force")
    c.add_argument("--trials", type=int, default=50)
    c.add_argument("--vars", type=int, default=4)
    c.add_argument("--bound", type=int, default=3)
    c.add_argument("--coeff", type=int, default=1, help="exponent coefficients drawn from [-coeff, coeff]")
    c.add_argument("--unsolvable-every", type=int, default=5,
                   help="every k-th trial uses an unplanted right-hand side (0: never)")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_mdl_verify)

    c = sub.add_parser("drift", help="structural-zero drift under exact vs naive accumulation")
    sig(c)
    c.add_argument("--steps", type=int, default=1000)
    c.add_argument("--format", choices=["f32", "f64"], default="f32")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_drift)

    c = sub.add_parser("gate", help="coherence gate for a consultation")
    c.add_argument("--before", required=True)
    c.add_argument("--after", required=True)
    c.add_argument("--domain", required=True)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_gate)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage to stderr
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except SpecError as err:
        sys.stderr.write(f"malformed spec: {err}\n")
        return EXIT_USAGE
    except UsageError as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
