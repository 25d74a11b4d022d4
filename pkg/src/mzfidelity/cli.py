"""Command-line front end.  Every command writes CSV (UTF-8, LF, header row).

Exit codes: 0 success, 2 bad arguments, 3 numeric or model failure,
4 output could not be written.

Flags may be preloaded from a flat ``key = value`` file given with
``--config``; keys are long option names (``rel-tol`` or ``rel_tol``).
Flags on the command line win over the file, which wins over built-in
defaults.  ``MZFIDELITY_WORKERS`` sets the sweep worker count (1 = serial).
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys

import numpy as np

from . import fisher as fi
from .info import ImpossibleObservation, PhasePrior, estimate_phase, posterior
from .interferometers import (
    NoisyClassicalMz,
    fig1_sweep,
    noisy_classical_channel,
    noisy_classical_fidelity,
    quantum_mz_fidelity,
)
from .montecarlo import cross_check_classical, cross_check_quantum
from .numerics import Tolerance

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
MC_FLOOR = 10_000

log = logging.getLogger("mzfidelity")


class UsageError(Exception):
    pass


def _fmt(x) -> str:
    # repr round-trips doubles exactly
    return repr(float(x))


def _write_rows(out, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    text = buf.getvalue()
    if out in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _tol(args) -> Tolerance:
    try:
        return Tolerance(rel=args.rel_tol, abs=args.abs_tol)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _finite(x, name):
    if not math.isfinite(x):
        raise UsageError(f"--{name} must be finite")


# ---------------------------------------------------------------------------
# commands


def cmd_fidelity_quantum(args):
    _need(args, "eta")
    _finite(args.eta, "eta")
    if args.eta < 0:
        raise UsageError("--eta must be >= 0")
    h = quantum_mz_fidelity(args.eta, tol=_tol(args))
    _write_rows(args.out, ["eta", "h_coh_bits", "numeric_error"], [[args.eta, h.bits, h.numeric_error]])


def cmd_fidelity_classical(args):
    _need(args, "e", "delta")
    _finite(args.e, "e")
    _finite(args.delta, "delta")
    if args.e < 0:
        raise UsageError("--e must be >= 0")
    if not args.delta > 0:
        raise UsageError("--delta must be > 0")
    h = noisy_classical_fidelity(args.e, args.delta, tol=_tol(args))
    _write_rows(
        args.out, ["e", "delta", "h_class_bits", "numeric_error"],
        [[args.e, args.delta, h.bits, h.numeric_error]],
    )


def cmd_sweep(args):
    if not (args.eta_min >= 0 and args.eta_max > args.eta_min and math.isfinite(args.eta_max)):
        raise UsageError("need 0 <= --eta-min < --eta-max")
    if args.steps < 2:
        raise UsageError("--steps must be >= 2")
    etas = np.linspace(args.eta_min, args.eta_max, args.steps)
    rows = fig1_sweep(etas.tolist(), _tol(args))
    _write_rows(
        args.out,
        ["eta", "h_coh_bits", "h_class_bits", "h_coh_err", "h_class_err"],
        [[r.eta, r.h_coh, r.h_class, r.h_coh_err, r.h_class_err] for r in rows],
    )
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"row eta={r.eta!r} failed: {r.error}", file=sys.stderr)
    if failed:
        return EXIT_NUMERIC


def cmd_posterior(args):
    _need(args, "e_c", "e_d", "e", "delta")
    if not args.delta > 0:
        raise UsageError("--delta must be > 0")
    if args.e < 0:
        raise UsageError("--e must be >= 0")
    if args.grid < 8:
        raise UsageError("--grid must be >= 8")
    channel = noisy_classical_channel(NoisyClassicalMz(args.e, args.delta))
    post = posterior(channel, PhasePrior.uniform(args.grid), (args.e_c, args.e_d))
    est = estimate_phase(post)
    _write_rows(args.out, ["phi", "density"], zip(post.grid.tolist(), post.density.tolist()))
    mean = "undefined" if est.circular_mean is None else _fmt(est.circular_mean)
    modes = " ".join(_fmt(m) for m in est.modes)
    print(
        f"circular_mean={mean} circular_dispersion={_fmt(est.circular_dispersion)} modes={modes}",
        file=sys.stderr,
    )


def cmd_fisher(args):
    _need(args, "x0")
    model = args.model
    if model == "bernoulli":
        if not 0 < args.x0 < 1:
            raise UsageError("bernoulli needs 0 < --x0 < 1")
        value = fi.classical_fisher(fi.bernoulli_family(), args.x0)
    elif model == "poisson":
        if not args.x0 > 0:
            raise UsageError("poisson needs --x0 > 0")
        value = fi.classical_fisher(fi.poisson_family(args.x0), args.x0)
    elif model == "quantum-mz":
        _need(args, "eta")
        if args.eta < 0:
            raise UsageError("--eta must be >= 0")
        value = fi.classical_fisher(fi.quantum_mz_family(args.eta), args.x0)
    else:  # pure-qubit
        value = fi.quantum_fisher(fi.pure_qubit_family(), args.x0).fisher_value
    kind = "quantum" if model == "pure-qubit" else "classical"
    _write_rows(
        args.out, ["model", "x0", "kind", "fisher", "cramer_rao_bound"],
        [[model, float(args.x0), kind, float(value), float(fi.cramer_rao_bound(value))]],
    )


def cmd_mc_check(args):
    if args.n < MC_FLOOR:
        raise UsageError(f"--n must be >= {MC_FLOOR}")
    if args.target == "quantum":
        if args.eta < 0:
            raise UsageError("--eta must be >= 0")
        check = cross_check_quantum(args.eta, args.n, args.seed)
    else:
        if not args.delta > 0 or args.e < 0:
            raise UsageError("need --e >= 0 and --delta > 0")
        check = cross_check_classical(args.e, args.delta, args.n, args.seed)
    est = check.estimate
    verdict = "PASS" if check.passed else "FAIL"
    _write_rows(
        args.out,
        ["target", "analytic_bits", "plugin_bits", "miller_madow_bits", "std_error", "deviation", "verdict"],
        [[args.target, check.analytic_bits, est.bits, est.miller_madow_bits,
          est.miller_madow_std_error, check.deviation, verdict]],
    )
    return EXIT_OK if check.passed else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser


def _add_tol(p):
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--abs-tol", type=float, default=1e-12)


def _add_out(p):
    p.add_argument("--out", default=None, help="output path (default: standard output)")


def build_parser():
    parser = argparse.ArgumentParser(prog="mzfidelity", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="flat key = value file of default flags")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    leaves = []

    fid = sub.add_parser("fidelity", help="fidelity of one interferometer")
    fsub = fid.add_subparsers(dest="kind", required=True)
    q = fsub.add_parser("quantum", help="coherent-state input, photon counting")
    q.add_argument("--eta", type=float)
    q.set_defaults(func=cmd_fidelity_quantum)
    c = fsub.add_parser("classical", help="classical input energy with Gaussian noise")
    c.add_argument("--e", type=float)
    c.add_argument("--delta", type=float)
    c.set_defaults(func=cmd_fidelity_classical)
    leaves += [q, c]

    sw = sub.add_parser("sweep", help="quantum vs classical fidelity over eta")
    sw.add_argument("--eta-min", type=float, default=0.0)
    sw.add_argument("--eta-max", type=float, default=5.0)
    sw.add_argument("--steps", type=int, default=21)
    sw.set_defaults(func=cmd_sweep)
    leaves.append(sw)

    po = sub.add_parser("posterior", help="phase posterior after one classical reading")
    po.add_argument("--e-c", type=float)
    po.add_argument("--e-d", type=float)
    po.add_argument("--e", type=float)
    po.add_argument("--delta", type=float)
    po.add_argument("--grid", type=int, default=2048)
    po.set_defaults(func=cmd_posterior)
    leaves.append(po)

    fs = sub.add_parser("fisher", help="Fisher information and Cramer-Rao bound")
    fs.add_argument("--model", required=True, choices=["bernoulli", "poisson", "quantum-mz", "pure-qubit"])
    fs.add_argument("--x0", type=float)
    fs.add_argument("--eta", type=float, default=1.0)
    fs.set_defaults(func=cmd_fisher)
    leaves.append(fs)

    mc = sub.add_parser("mc-check", help="quadrature fidelity vs Monte Carlo estimate")
    mc.add_argument("--target", required=True, choices=["quantum", "classical"])
    mc.add_argument("--n", type=int, default=1_000_000)
    mc.add_argument("--seed", type=int, default=20100101)
    mc.add_argument("--eta", type=float, default=1.0)
    mc.add_argument("--e", type=float, default=1.0)
    mc.add_argument("--delta", type=float, default=1.0)
    mc.set_defaults(func=cmd_mc_check)
    leaves.append(mc)

    for p in leaves:
        _add_tol(p)
        _add_out(p)
    return parser, leaves


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key.lstrip("-").replace("-", "_")] = value
    return values


def _apply_config(leaves, values):
    for p in leaves:
        defaults = {}
        for action in p._actions:
            if action.dest in values:
                raw = values[action.dest]
                try:
                    defaults[action.dest] = action.type(raw) if action.type else raw
                except ValueError:
                    raise UsageError(f"config value for {action.dest!r} is invalid: {raw!r}") from None
        p.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, leaves = build_parser()
    try:
        cfg_path = _config_path(argv)
        if cfg_path:
            _apply_config(leaves, read_config(cfg_path))
    except (UsageError, OSError) as exc:
        print(f"mzfidelity: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        status = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mzfidelity: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ImpossibleObservation as exc:
        print(f"mzfidelity: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"mzfidelity: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ArithmeticError, ValueError) as exc:
        print(f"mzfidelity: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK if status is None else status


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


if __name__ == "__main__":
    sys.exit(main())
