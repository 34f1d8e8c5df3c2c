"""riskdp command line.

Exit status: 0 on success, 1 on bad input, 2 when a checked property fails.
"""
from __future__ import annotations

import argparse
import io as _io
import sys
from typing import List, Optional

import numpy as np

from . import counterexamples as ce
from . import decompositions as dec
from . import oracle, riskcore, suite
from .io import ParseError, ValidationError, dumps, load_mdp, resolve_mdp_path
from .mdpmodel import DeterministicPolicy, ExplosionGuard, Mdp, RandomizedPolicy

EXIT_OK, EXIT_INPUT, EXIT_PROPERTY = 0, 1, 2
POLICY_SCHEMES = ("cvar-eval", "evar-ni", "evar-corrected", "var")
GRID_SCHEMES = ("cvar-eval", "cvar-opt", "evar-ni", "evar-corrected")


class InputError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, not property failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _alpha(text: str) -> float:
    a = float(text)
    if not 0.0 <= a <= 1.0:
        raise argparse.ArgumentTypeError("alpha must lie in [0, 1]")
    return a


def _step(text: str) -> float:
    h = float(text)
    if not 0.0 < h <= 0.1:
        raise argparse.ArgumentTypeError("h must lie in (0, 0.1]")
    return h


def _unit_open(text: str) -> float:
    x = float(text)
    if not 0.0 < x < 1.0:
        raise argparse.ArgumentTypeError("value must lie in (0, 1)")
    return x


def parse_policy(m: Mdp, text: Optional[str]):
    """``s1=a1,s2=a2`` for a deterministic policy; ``s1=a1:0.3/a2:0.7`` mixes.

    States left out play their first available action.
    """
    choice = {s: m.actions_at(s)[0] for s in range(m.n_states)}
    mixed = {}
    for item in filter(None, (text or "").split(",")):
        if "=" not in item:
            raise InputError(f"policy entry {item!r} is not state=action")
        s_name, rhs = (x.strip() for x in item.split("=", 1))
        try:
            s = m.state_index(s_name)
            if ":" in rhs:
                row = np.zeros(m.n_actions)
                for part in rhs.split("/"):
                    a_name, p = part.split(":")
                    row[m.action_index(a_name.strip())] = float(p)
                mixed[s] = row
            else:
                choice[s] = m.action_index(rhs)
        except (KeyError, ValueError) as e:
            raise InputError(f"policy entry {item!r}: {e}") from None
    if not mixed:
        return DeterministicPolicy(tuple(choice[s] for s in range(m.n_states)))
    dist = np.zeros((m.n_states, m.n_actions))
    for s in range(m.n_states):
        if s in mixed:
            dist[s] = mixed[s]
        else:
            dist[s, choice[s]] = 1.0
    return RandomizedPolicy(dist)


def _load(args) -> Mdp:
    try:
        return load_mdp(resolve_mdp_path(args.mdp))
    except FileNotFoundError:
        raise InputError(f"no such MDP file: {args.mdp}") from None


def _emit(args, payload) -> None:
    text = dumps(payload)
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_text(args, text: str) -> None:
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ----------------------------------------------------------------- commands

def cmd_eval(args) -> int:
    m = _load(args)
    pi = parse_policy(m, args.policy)
    value = oracle.evaluate(m, pi, args.measure, args.alpha)
    _emit(args, {"measure": args.measure, "alpha": args.alpha, "policy": pi.describe(m), "value": value})
    return EXIT_OK


def cmd_opt(args) -> int:
    m = _load(args)
    res = oracle.optimize(m, args.measure, args.alpha)
    _emit(args, {"measure": args.measure, "alpha": args.alpha, "value": res.value,
                 "policy": res.best_policy.describe(m), "policies_enumerated": len(res.per_policy_values)})
    return EXIT_OK


def cmd_decompose(args) -> int:
    m = _load(args)
    fn = dec.SCHEMES[args.scheme]
    kwargs = {}
    if args.scheme in GRID_SCHEMES:
        kwargs = {"h": args.h, "refine": not args.no_refine}
    if args.scheme == "cvar-opt":
        kwargs["exact"] = args.exact
    if args.scheme in POLICY_SCHEMES:
        rep = fn(m, parse_policy(m, args.policy), args.alpha, **kwargs)
    else:
        rep = fn(m, args.alpha, **kwargs)
    _emit(args, rep.to_dict(m))
    return EXIT_OK


def cmd_dp(args) -> int:
    m = _load(args)
    v0, vf, pol = dec.var_dp_horizon(m, args.alpha, args.grid)
    realized = oracle.evaluate(m, pol.as_history_policy(), "var", args.alpha)
    out = {"alpha": args.alpha, "grid": args.grid, "horizon": m.horizon, "v0": v0,
           "realized_value": realized, "policy": pol.as_history_policy().describe(m)}
    if args.oracle:
        out["oracle_value"] = oracle.optimize(m, "var", args.alpha).value
    if args.value_function:
        out["value_function"] = vf.to_dict(m)
    _emit(args, out)
    return EXIT_OK


def cmd_counterexample(args) -> int:
    if args.which == "cvar":
        _emit(args, ce.verify_cvar_gap(h=args.h, exact=args.exact))
    elif args.which == "evar":
        _emit(args, ce.verify_evar_gap(h=args.h))
    else:
        spec = ce.CounterexampleSpec("M3", M=args.M, p_s2=args.p_s2)
        n = int(round(1.0 / args.alpha_step))
        if abs(n * args.alpha_step - 1.0) > 1e-9:
            raise InputError("alpha-step must divide 1")
        alphas = np.linspace(0.0, 1.0, n + 1)
        rows = ce.sweep_alpha(spec, alphas, h=args.h, exact=args.exact)
        if args.format == "csv":
            buf = _io.StringIO()
            ce.write_sweep_csv(rows, buf)
            _emit_text(args, buf.getvalue())
        else:
            flags = [r.suboptimal for r in rows]
            _emit(args, {"M": args.M, "p_s2": args.p_s2, "h": None if args.exact else args.h,
                         "suboptimal_on_grid": [list(iv) for iv in ce.grid_intervals(list(alphas), flags)],
                         "rows": ce.rows_as_dicts(rows)})
    return EXIT_OK


def cmd_suite(args) -> int:
    numbers = args.only or None
    results = suite.run(numbers, seed=args.seed)
    for r in results:
        print(r.line(), file=sys.stderr if args.output else sys.stdout)
    if args.output:
        _emit(args, [{"number": r.number, "name": r.name, "passed": r.passed, "detail": r.detail}
                     for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", "-o", help="write the result here instead of stdout")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--seed", type=int, default=0)

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--mdp", required=True, help="MDP document; bundled names like mc.json also work")
    model.add_argument("--alpha", type=_alpha, required=True)

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--h", type=_step, default=None,
                      help="allocation grid step, in (0, 0.1] (default 1e-3; 1e-4 for the CVaR counterexample)")
    grid.add_argument("--no-refine", action="store_true", help="skip pattern-search refinement")
    grid.add_argument("--exact", action="store_true", help="breakpoint-exact CVaR path (two states)")

    p = _Parser(prog="riskdp", description="Risk measures and risk-level decompositions for finite MDPs.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("eval", parents=[common, model], help="risk of a fixed policy")
    e.add_argument("--measure", choices=sorted(riskcore.MEASURES), default="cvar")
    e.add_argument("--policy", help="s1=a1,s2=a2 (default: first available action)")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("opt", parents=[common, model], help="best deterministic policy by enumeration")
    o.add_argument("--measure", choices=sorted(riskcore.MEASURES), default="cvar")
    o.set_defaults(func=cmd_opt)

    d = sub.add_parser("decompose", parents=[common, model, grid], help="run a decomposition scheme")
    d.add_argument("--scheme", choices=sorted(dec.SCHEMES), required=True)
    d.add_argument("--policy", help="policy for the evaluation schemes")
    d.set_defaults(func=cmd_decompose)

    v = sub.add_parser("dp", parents=[common, model], help="multi-horizon VaR program")
    v.add_argument("--grid", type=_step, default=1.0 / 512, help="alpha-grid resolution")
    v.add_argument("--oracle", action="store_true", help="also report the enumerated optimum")
    v.add_argument("--value-function", action="store_true", help="include the q table")
    v.set_defaults(func=cmd_dp)

    c = sub.add_parser("counterexample", parents=[common, grid], help="reproduce a counterexample")
    c.add_argument("which", choices=("cvar", "evar", "sweep"))
    c.add_argument("--M", type=float, default=600.0, help="sweep: stake of the risky action")
    c.add_argument("--p-s2", type=_unit_open, default=0.5, help="sweep: initial mass on s2")
    c.add_argument("--alpha-step", type=_unit_open, default=0.01, help="sweep: spacing of the alpha grid")
    c.set_defaults(func=cmd_counterexample)

    s = sub.add_parser("suite", parents=[common], help="run the acceptance checks")
    s.add_argument("--only", type=int, nargs="+", choices=sorted(suite.CRITERIA))
    s.set_defaults(func=cmd_suite)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "h", 0) is None:
        args.h = 1e-4 if args.command == "counterexample" and args.which == "cvar" else 1e-3
    try:
        return args.func(args)
    except ce.PropertyViolation as e:
        print(f"property violated: {e}", file=sys.stderr)
        return EXIT_PROPERTY
    except (InputError, ParseError, ValidationError, ExplosionGuard, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
