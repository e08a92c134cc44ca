"""Command line entry point.

    dhl <solve|sweep|verify|geometry> --config PATH [--out DIR] [--resolution N]
        [--eps-schedule a,b,c]

Exit status: 0 success, 2 invalid input, 3 non-convergence, 4 verification
failure.  Failures print one ``dhl: status=<n> kind=<kind> reason=<text>``
line on standard error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import pipeline
from .config import load_config
from .errors import ArgumentError, DHLError, DomainError, NonConvergenceError, NumericError, PreconditionError
from .verify import verdict_text

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGENCE, EXIT_VERIFY = 0, 2, 3, 4
COMMANDS = ("solve", "sweep", "verify", "geometry")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dhl", description="Degenerate Hessian / curvature equation solver")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--resolution", type=int, help="grid nodes across the bounding box")
    p.add_argument("--eps-schedule", help="comma-separated decreasing eps values")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(status: int, kind: str, message: str) -> int:
    reason = " ".join(str(message).split())
    print(f"dhl: status={status} kind={kind} reason={reason}", file=sys.stderr)
    return status


def _threads() -> None:
    raw = os.environ.get("DHL_THREADS")
    if raw is None:
        return
    try:
        ok = int(raw) >= 1
    except ValueError:
        ok = False
    if not ok:
        raise ArgumentError(f"DHL_THREADS must be a positive integer, got {raw!r}")


def _load(args):
    cfg = load_config(args.config)
    over = {}
    if args.out:
        over["out_dir"] = args.out
    if args.resolution is not None:
        over["resolution"] = args.resolution
    if args.eps_schedule:
        try:
            over["eps_schedule"] = tuple(float(t) for t in args.eps_schedule.split(",") if t.strip())
        except ValueError:
            raise ArgumentError(f"--eps-schedule: bad list {args.eps_schedule!r}") from None
    return replace(cfg, **over).validate() if over else cfg


def _report(outcome, label: str) -> int:
    if outcome.report is not None:
        print(verdict_text(outcome.report, label))
    for eps, viol, allowed in outcome.comparison:
        flag = "ok" if viol <= allowed else "VIOLATED"
        print(f"  comparison eps={eps!r}: violation={viol:.3e} allowed={allowed:.3e} {flag}")
    if outcome.report is None:
        return _fail(EXIT_VERIFY, "verification", "fewer than three records for a verdict")
    if not outcome.report.bounded:
        return _fail(EXIT_VERIFY, "verification", f"not bounded (ratio {outcome.report.ratio:.6g})")
    if not outcome.comparison_ok:
        return _fail(EXIT_VERIFY, "verification", "comparison sandwich violated")
    return EXIT_OK


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
        _threads()
        cfg = _load(args)
        if args.command == "solve":
            o = pipeline.run_solve(cfg)
            r = o.result
            print(
                f"solve: eps={r.eps!r} iterations={r.newton_iters} residual_inf={r.residual_inf:.6g} "
                f"margin={r.admissibility_margin:.6g} nodes={o.grid.n_interior}"
            )
            return EXIT_OK
        if args.command == "sweep":
            o = pipeline.run_sweep(cfg)
            for r in o.results:
                state = "converged" if r.converged else "FAILED"
                print(f"eps={r.eps!r} {state} iterations={r.newton_iters} residual_inf={r.residual_inf:.6g}")
            if o.aborted:
                if o.report is not None:
                    print(verdict_text(o.report))
                failed = [r for r in o.results if not r.converged]
                msg = failed[0].message if failed else "schedule incomplete"
                return _fail(EXIT_NONCONVERGENCE, "nonconvergence", msg)
            return _report(o, "sweep")
        if args.command == "verify":
            return _report(pipeline.run_verify(cfg), "verify")
        rows = pipeline.run_geometry(cfg)
        vec = lambda v: ",".join(f"{float(c):.17g}" for c in v)
        for r in rows:
            line = f"point={vec(r.point)} u={r.u:.17g} kappa={vec(r.kappa)} cone={r.cone}"
            if r.kappa_tilde is not None:
                line += f" kappa_tilde={vec(r.kappa_tilde)} hyp_cone={r.hyp_cone}"
            print(line)
        return EXIT_OK
    except NonConvergenceError as exc:
        return _fail(EXIT_NONCONVERGENCE, "nonconvergence", str(exc))
    except NumericError as exc:
        return _fail(EXIT_NONCONVERGENCE, "numeric", str(exc))
    except (ArgumentError, DomainError, PreconditionError) as exc:
        return _fail(EXIT_INVALID, "validation", str(exc))
    except DHLError as exc:
        return _fail(EXIT_INVALID, "error", str(exc))


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
