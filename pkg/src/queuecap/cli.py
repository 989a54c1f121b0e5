"""Command-line front end.

Machine output (JSON or CSV) goes to stdout or --out; human-readable
tables go to stderr so pipelines can consume the primary stream.  Exit
codes: 0 success, 1 configuration error, 2 numerical failure (diagnostics
still written), 3 instance too large.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys

import numpy as np

from . import __version__
from .capacity import (CapacityCurve, cf_lambda, g_bound_lambda, gap_verdict,
                       sweep)
from .dist import (ServiceModel, entropy, pmf_new, geometric, point_mass,
                   service_from_json, service_to_json, uniform_range)
from .entmax import (EntMaxProblem, SolverOptions, oracle_grid_search,
                     solve_full, solve_gfeedback)
from .errors import (BadParameter, ConfigError, InstanceTooLarge,
                     NegativeMass, NoConvergence, NotNormalized, QueuecapError,
                     TruncationInsufficient)
from .kkt import (recursion_closed_form, recursion_residual, residual_full,
                  residual_gfeedback, toeplitz_build, toeplitz_forward_solve,
                  toeplitz_homogeneous_null)
from .queuesim import (offset_policy, reduction_check, run_trace,
                       sample_service)

OPTIONS_ENV = "QUEUECAP_OPTIONS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _load_service(spec: str) -> ServiceModel:
    """A path to a service JSON file, or a builtin alias.

    Aliases: ``uniform<digits>`` (consecutive single-digit atoms, e.g.
    uniform12, uniform0123), ``point<k>``, and ``geom-trunc<N>`` (mean-2
    geometric truncated at N).
    """
    if os.path.exists(spec):
        with open(spec, "r", encoding="utf-8") as fh:
            return service_from_json(json.load(fh))
    m = re.fullmatch(r"uniform(\d{2,})", spec)
    if m:
        digits = [int(ch) for ch in m.group(1)]
        if digits != list(range(digits[0], digits[0] + len(digits))):
            raise ConfigError(f"uniform alias needs consecutive digits: {spec!r}")
        return uniform_range(digits[0], digits[-1])
    m = re.fullmatch(r"point(\d+)", spec)
    if m:
        return point_mass(int(m.group(1)))
    m = re.fullmatch(r"geom-trunc(\d+)", spec)
    if m:
        return geometric(2.0, truncation=int(m.group(1)))
    raise ConfigError(f"service {spec!r} is neither a file nor a known alias")


def _load_options(arg: str | None) -> SolverOptions:
    source = arg or os.environ.get(OPTIONS_ENV)
    if source is None:
        return SolverOptions()
    if os.path.exists(source):
        with open(source, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    else:
        try:
            payload = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"options are neither a file nor JSON: {exc}")
    if not isinstance(payload, dict):
        raise ConfigError("options JSON must be an object")
    try:
        return SolverOptions.from_dict(payload)
    except BadParameter as exc:
        raise ConfigError(str(exc))


def _budget_from(args, service: ServiceModel) -> float:
    has_lam = getattr(args, "lam", None) is not None
    has_budget = getattr(args, "budget", None) is not None
    if has_lam == has_budget:
        raise ConfigError("provide exactly one of --lambda or --budget")
    if has_budget:
        if args.budget < 0:
            raise ConfigError("--budget must be nonnegative")
        return args.budget
    if not 0.0 < args.lam < service.rate_mu:
        raise ConfigError(
            f"--lambda must lie in (0, mu) = (0, {service.rate_mu!r})")
    return 1.0 / args.lam - 1.0 / service.rate_mu


def _emit(payload: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(payload)
    else:
        sys.stdout.write(payload)


def _dump(obj: dict, out: str | None) -> None:
    _emit(json.dumps(obj, sort_keys=True, indent=2) + "\n", out)


def _parse_taus(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"--taus must be comma-separated integers: {text!r}")


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers: {text!r}")


def _tau_arg(text: str) -> float:
    if text == "inf":
        return math.inf
    try:
        val = int(text)
    except ValueError:
        raise ConfigError(f"--tau must be a nonnegative integer or 'inf': {text!r}")
    if val < 0:
        raise ConfigError("--tau must be nonnegative")
    return val


def cmd_solve(args) -> int:
    service = _load_service(args.service)
    opts = _load_options(args.options)
    budget = _budget_from(args, service)
    if args.mode == "full":
        sol = solve_full(service, budget=budget, options=opts)
    else:
        tau = _tau_arg(args.tau) if args.tau is not None else None
        if tau is None or math.isinf(tau):
            raise ConfigError("--mode gfb needs a finite --tau")
        sol = solve_gfeedback(service, tau=int(tau), budget=budget, options=opts)
    payload = sol.to_json_dict()
    payload["service"] = service_to_json(service)
    payload["options"] = opts.to_dict()
    payload["tool_version"] = __version__
    _dump(payload, args.out)
    return 0


def cmd_gap(args) -> int:
    service = _load_service(args.service)
    opts = _load_options(args.options)
    if args.lam is None:
        raise ConfigError("gap needs --lambda")
    if args.tau is None:
        raise ConfigError("gap needs --tau")
    result = gap_verdict(service, args.lam, _tau_arg(args.tau), options=opts)
    sys.stdout.write(result.verdict_line() + "\n")
    if args.out:
        payload = result.to_json_dict()
        payload["service"] = service_to_json(service)
        payload["options"] = opts.to_dict()
        payload["tool_version"] = __version__
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return 0


def cmd_sweep(args) -> int:
    service = _load_service(args.service)
    opts = _load_options(args.options)
    taus = _parse_taus(args.taus)
    grid = _parse_floats(args.lambdas) if args.lambdas else None
    if grid is None and args.points is not None:
        from .capacity import default_lambda_grid
        grid = default_lambda_grid(service, points=args.points)
    curve = sweep(service, taus, lambda_grid=grid, options=opts)
    _emit(curve.to_csv(), args.out)
    if args.out_json:
        with open(args.out_json, "w", encoding="utf-8") as fh:
            fh.write(curve.to_json() + "\n")
    return 0


def cmd_kkt(args) -> int:
    service = _load_service(args.service)
    opts = _load_options(args.options)
    budget = _budget_from(args, service)
    if args.mode == "full":
        sol = solve_full(service, budget=budget, options=opts)
        report = residual_full(sol, service)
    else:
        tau = _tau_arg(args.tau) if args.tau is not None else None
        if tau is None or math.isinf(tau):
            raise ConfigError("--mode gfb needs a finite --tau")
        sol = solve_gfeedback(service, tau=int(tau), budget=budget, options=opts)
        report = residual_gfeedback(sol, service, int(tau))
    sys.stderr.write(report.format_table() + "\n")
    payload = report.to_json_dict()
    payload["solution"] = sol.to_json_dict()
    payload["service"] = service_to_json(service)
    _dump(payload, args.out)
    return 0


def cmd_recursion(args) -> int:
    x = recursion_closed_form(args.q, args.gamma, args.delta, args.n)
    n_idx = np.arange(x.size)
    particular = 1.0 + args.gamma + args.delta * n_idx
    deviation = x - particular
    check = recursion_residual(x, args.q, args.gamma, args.delta)
    lines = [f"{'n':>4}  {'x_n':>16}  {'affine':>16}  {'deviation':>16}"]
    for i in range(x.size):
        lines.append(f"{i:>4}  {x[i]:>16.9f}  {particular[i]:>16.9f}  "
                     f"{deviation[i]:>+16.9e}")
    sys.stderr.write("\n".join(lines) + "\n")
    _dump({
        "q": args.q, "gamma": args.gamma, "delta": args.delta,
        "x": [float(v) for v in x],
        "affine_part": [float(v) for v in particular],
        "deviation": [float(v) for v in deviation],
        "max_recursion_residual": float(np.abs(check).max()) if check.size else 0.0,
    }, args.out)
    return 0


def cmd_toeplitz(args) -> int:
    probs = _parse_floats(args.q)
    q = pmf_new(probs)
    system = toeplitz_build(q, args.n, delta=args.delta)
    verdict = toeplitz_homogeneous_null(system)
    x = toeplitz_forward_solve(system)
    resid = system.matrix @ x - system.rhs
    lines = [f"{'k':>4}  {'x_k':>16}  {'rhs':>16}"]
    for i in range(args.n):
        lines.append(f"{i + 1:>4}  {x[i]:>16.9f}  {system.rhs[i]:>16.9f}")
    sys.stderr.write("\n".join(lines) + "\n")
    payload = system.to_json_dict()
    payload.update(verdict.to_json_dict())
    payload["solution"] = [float(v) for v in x]
    payload["solve_residual_max"] = float(np.abs(resid).max())
    _dump(payload, args.out)
    return 0


def cmd_simulate(args) -> int:
    service = _load_service(args.service)
    tau = _tau_arg(args.tau)
    offsets = _parse_floats(args.x_schedule)
    xs = [int(v) for v in offsets]
    if args.check_reduction:
        worst = reduction_check(xs, service, tau, trials=args.trials,
                                seed=args.seed)
        sys.stdout.write(f"MAX_DISCREPANCY={worst}\n")
        return 0
    draws = sample_service(service, len(xs), seed=args.seed)
    trace = run_trace(offset_policy(xs), draws, tau, seed=args.seed)
    _emit(trace.to_csv(), args.out)
    return 0


def cmd_oracle(args) -> int:
    service = _load_service(args.service)
    budget = _budget_from(args, service)
    if args.mode == "gfb":
        tau = _tau_arg(args.tau) if args.tau is not None else None
        if tau is None or math.isinf(tau):
            raise ConfigError("--mode gfb needs a finite --tau")
        problem = EntMaxProblem(service=service, budget=budget,
                                mode="gfeedback", tau=int(tau))
    else:
        problem = EntMaxProblem(service=service, budget=budget, mode="full")
    sol = oracle_grid_search(problem, args.support_cap, args.resolution)
    payload = sol.to_json_dict()
    payload["service"] = service_to_json(service)
    payload["tool_version"] = __version__
    _dump(payload, args.out)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="queuecap",
                     description="Capacity bounds for FIFO queue timing channels")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, lam=True):
        p.add_argument("--service", required=True,
                       help="service JSON file or alias (uniform12, point3, geom-trunc80)")
        p.add_argument("--options", default=None,
                       help=f"solver options JSON (file or inline; default ${OPTIONS_ENV})")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        if lam:
            p.add_argument("--lambda", dest="lam", type=float, default=None)
            p.add_argument("--budget", type=float, default=None)

    p = sub.add_parser("solve", help="run one entropy-maximization program")
    common(p)
    p.add_argument("--mode", choices=("full", "gfb"), required=True)
    p.add_argument("--tau", default=None)
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("gap", help="strict/equal verdict for one rate and tau")
    common(p)
    p.add_argument("--tau", default=None)
    p.set_defaults(fn=cmd_gap)

    p = sub.add_parser("sweep", help="rate sweep with per-tau bounds")
    common(p, lam=False)
    p.add_argument("--taus", required=True, help="comma-separated tau values")
    p.add_argument("--lambdas", default=None, help="explicit comma-separated grid")
    p.add_argument("--points", type=int, default=None, help="grid size (default 32)")
    p.add_argument("--out-json", default=None)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("kkt-check", help="stationarity residual report")
    common(p)
    p.add_argument("--mode", choices=("full", "gfb"), required=True)
    p.add_argument("--tau", default=None)
    p.set_defaults(fn=cmd_kkt)

    p = sub.add_parser("recursion", help="order-1 recursion closed form")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_recursion)

    p = sub.add_parser("toeplitz", help="triangular system build and solve")
    p.add_argument("--q", required=True, help="comma-separated pmf of T")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_toeplitz)

    p = sub.add_parser("simulate", help="queue traces and reduction checks")
    p.add_argument("--service", required=True)
    p.add_argument("--tau", required=True)
    p.add_argument("--x-schedule", required=True,
                   help="comma-separated transmit offsets")
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--check-reduction", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("oracle", help="brute-force grid-search verification")
    common(p)
    p.add_argument("--mode", choices=("full", "gfb"), default="full")
    p.add_argument("--tau", default=None)
    p.add_argument("--support-cap", type=int, default=5)
    p.add_argument("--resolution", type=float, default=1e-2)
    p.set_defaults(fn=cmd_oracle)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1
    except (BadParameter, NotNormalized, NegativeMass,
            json.JSONDecodeError, FileNotFoundError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1
    except (NoConvergence, TruncationInsufficient) as exc:
        diag = getattr(exc, "diagnostics", {})
        sys.stdout.write(json.dumps(
            {"error": type(exc).__name__, "message": str(exc),
             "diagnostics": diag}, sort_keys=True) + "\n")
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 2
    except InstanceTooLarge as exc:
        sys.stderr.write(f"instance too large: {exc}\n")
        return 3
    except QueuecapError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
