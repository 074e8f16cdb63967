"""Command line entry point: ``distobs {run,decompose,check,accept}``.

Exit status: 0 success, 1 acceptance (or certificate/gate) failure,
2 configuration or validation error, 3 divergence.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .decomposition import verify_quadruplet
from .exceptions import DistObsError, Diverged, ParseError, PreconditionViolated, UnknownScenario, ValidationError
from .scenarios import (
    ACCEPTANCE_NAMES,
    BUILTIN_NAMES,
    RunSummary,
    assemble,
    builtin_scenario,
    emit_csv,
    emit_summary,
    load_config,
    run_acceptance,
    run_scenario,
)
from .simulation import metrics

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _load(source):
    if source in BUILTIN_NAMES:
        return builtin_scenario(source)
    path = Path(source)
    if not path.exists():
        raise UnknownScenario(f"{source!r} is neither a built-in scenario nor a file")
    return load_config(path)


def _fmt(M):
    return np.array2string(np.asarray(M), precision=6, suppress_small=True, max_line_width=120)


def cmd_run(args):
    cfg = _load(args.config)
    loop, rec = run_scenario(cfg, args.horizon, args.step, args.stride)
    summary = RunSummary(cfg.name, cfg.digest(), metrics=metrics(rec))
    out = Path(args.out) / cfg.name
    emit_csv(rec, out / "trajectory.csv")
    emit_summary(summary, out / "summary.json")
    m = summary.metrics
    print(f"{cfg.name}: {rec.samples} samples to t = {rec.t[-1]:g}")
    print(f"  final |x| = {m['final_norm_x']:.6g}; final |e_i| = {np.round(m['final_err'], 6).tolist()}")
    if "final_err_r" in m:
        print(f"  final |e_r| = {m['final_err_r']:.6g}")
    print(f"  wrote {out / 'trajectory.csv'} and {out / 'summary.json'}")
    return EXIT_OK


def cmd_decompose(args):
    cfg = _load(args.config)
    loop = assemble(cfg)
    ok = True
    B_all = loop.B_all
    for i, o in enumerate(loop.observers):
        q = o.quadruplet
        # the matrix the quadruplet must decouple: everything the node does not know
        unknown = [c for c in range(len(loop.drivers)) if c not in loop.observer_channels[i]]
        cols = [B_all[:, loop.chan_slices[c]] for c in unknown]
        if loop.unknown_input is not None:
            cols.append(loop.unknown_input.B_v)
        B_minus = np.hstack(cols) if cols else np.zeros((loop.n, 0))
        rep = verify_quadruplet(loop.A, B_minus, o.C, q)
        ok &= rep.passed
        print(f"observer {i + 1}: delta = {q.delta}, E mode = {q.e_mode}")
        print(f"T_d =\n{_fmt(q.T_d)}\nE =\n{_fmt(q.E)}\nF =\n{_fmt(q.F)}\nG =\n{_fmt(q.G)}")
        print(rep)
        print()
    return EXIT_OK if ok else EXIT_FAIL


def cmd_check(args):
    cfg = _load(args.config)
    loop = assemble(cfg)
    ok = True
    for name, passed, detail in loop.check_preconditions():
        ok &= bool(passed)
        print(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_accept(args):
    names = args.names or list(ACCEPTANCE_NAMES)
    summaries = run_acceptance(names, args.horizon, args.step, args.stride, args.out, args.jobs)
    for s in summaries:
        for line in s.lines():
            print(line)
    if args.json:
        print(json.dumps([s.to_dict() for s in summaries], indent=2))
    if any(s.error and s.error.startswith("Diverged") for s in summaries):
        return EXIT_DIVERGED
    return EXIT_OK if all(s.passed for s in summaries) else EXIT_FAIL


def build_parser():
    p = argparse.ArgumentParser(prog="distobs", description="Distributed observer/controller scenarios")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--horizon", type=float, default=None, help="final time (overrides the config)")
        sp.add_argument("--step", type=float, default=None, help="RK4 step size (overrides the config)")
        sp.add_argument("--stride", type=int, default=None, help="record every STRIDE-th step")
        sp.add_argument("--out", default="out", help="output directory (default: out)")

    r = sub.add_parser("run", help="simulate a config file or built-in scenario")
    r.add_argument("config", help=f"YAML file or one of: {', '.join(BUILTIN_NAMES)}")
    common(r)
    r.set_defaults(func=cmd_run)

    d = sub.add_parser("decompose", help="print every observer's quadruplet and its certificate")
    d.add_argument("config")
    d.set_defaults(func=cmd_decompose)

    c = sub.add_parser("check", help="evaluate the precondition gates only")
    c.add_argument("config")
    c.set_defaults(func=cmd_check)

    a = sub.add_parser("accept", help="run built-in scenarios against their acceptance thresholds")
    a.add_argument("names", nargs="*", help=f"subset of: {', '.join(ACCEPTANCE_NAMES)}")
    common(a)
    a.set_defaults(out=None)
    a.add_argument("--jobs", type=int, default=1, help="run scenarios in parallel processes")
    a.add_argument("--json", action="store_true", help="also print the summaries as JSON")
    a.set_defaults(func=cmd_accept)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, UnknownScenario) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Diverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except PreconditionViolated as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (DistObsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
