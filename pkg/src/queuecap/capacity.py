"""Capacity quantities assembled from the entropy-max solvers.

Rates are reported in bits per slot at this boundary (the optimizers work
in nats); every strict/equal verdict carries an explicit, conservative
error budget derived from the solver tolerances and truncation levels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dist import ServiceModel, entropy, max_entropy_mean_bound, service_to_json
from .entmax import EntMaxSolution, SolverOptions, solve_full, solve_gfeedback

LN2 = math.log(2.0)


def entropy_error_budget(solution: EntMaxSolution,
                         options: SolverOptions) -> float:
    """Conservative bound (nats) on the entropy error of one solve.

    Stationarity residuals can displace the value by at most the residual
    tolerance per window index; truncated tail mass (output tail plus the
    input boundary level spread over the window) contributes through the
    usual entropy-continuity estimate eps * log(window / eps).
    """
    window = len(solution.output_law.probs)
    stationarity = options.kkt_tol * window
    eps = solution.output_law.tail_mass \
        + solution.truncation_report.boundary_mass * window
    if eps > 0.0:
        eps = min(eps, 0.5)
        tail = eps * math.log(max(window, 2) / eps)
    else:
        tail = 0.0
    return stationarity + tail


def cf_lambda(service: ServiceModel, lam: float,
              options: SolverOptions | None = None) -> float:
    """Full-feedback capacity at fixed output rate, bits per slot."""
    bits, _ = _cf_solved(service, lam, options or SolverOptions())
    return bits


def g_bound_lambda(service: ServiceModel, lam: float, tau: int | float,
                   options: SolverOptions | None = None) -> float:
    """Upper bound on the tau-feedback capacity at fixed rate, bits per slot."""
    bits, _ = _g_solved(service, lam, tau, options or SolverOptions())
    return bits


def _budget(service: ServiceModel, lam: float) -> float:
    if not 0.0 < lam < service.rate_mu:
        raise ValueError(f"lambda must lie in (0, {service.rate_mu})")
    return 1.0 / lam - 1.0 / service.rate_mu


def _cf_solved(service, lam, options) -> tuple[float, EntMaxSolution]:
    sol = solve_full(service, budget=_budget(service, lam), options=options)
    bits = lam * (sol.entropy_value - entropy(service.pmf)) / LN2
    return bits, sol


def _g_solved(service, lam, tau, options) -> tuple[float, EntMaxSolution]:
    if tau is None or (isinstance(tau, float) and math.isinf(tau)):
        return _cf_solved(service, lam, options)
    sol = solve_gfeedback(service, tau=int(tau),
                          budget=_budget(service, lam), options=options)
    bits = lam * (sol.entropy_value - entropy(service.pmf)) / LN2
    return bits, sol


@dataclass(frozen=True)
class GapResult:
    verdict: str               # "Strict" | "Equal" | "Inconclusive"
    gap_bits: float
    error_bits: float
    cf_bits: float
    g_bits: float
    lam: float
    tau: int | float

    def verdict_line(self) -> str:
        return (f"VERDICT={self.verdict} GAP_BITS={self.gap_bits!r} "
                f"ERR={self.error_bits!r}")

    def to_json_dict(self) -> dict:
        return {"verdict": self.verdict, "gap_bits": self.gap_bits,
                "error_bits": self.error_bits, "cf_bits": self.cf_bits,
                "g_bits": self.g_bits, "lambda": self.lam,
                "tau": None if isinstance(self.tau, float) and math.isinf(self.tau)
                       else self.tau}


def gap_verdict(service: ServiceModel, lam: float, tau: int | float,
                options: SolverOptions | None = None) -> GapResult:
    """Compare the full-feedback value against the tau-feedback bound.

    Strict means the gap exceeds the combined error budget; Equal means it
    sits inside it; anything else (a gap below minus the budget would
    signal a solver fault) is Inconclusive.
    """
    opts = options or SolverOptions()
    cf_bits, sol_f = _cf_solved(service, lam, opts)
    g_bits, sol_g = _g_solved(service, lam, tau, opts)
    err_f = entropy_error_budget(sol_f, opts)
    err_g = entropy_error_budget(sol_g, opts)
    err_bits = lam * (err_f + err_g) / LN2
    gap = cf_bits - g_bits
    if gap > err_bits:
        verdict = "Strict"
    elif abs(gap) <= err_bits:
        verdict = "Equal"
    else:
        verdict = "Inconclusive"
    return GapResult(verdict=verdict, gap_bits=gap, error_bits=err_bits,
                     cf_bits=cf_bits, g_bits=g_bits, lam=lam, tau=tau)


@dataclass
class CapacityCurve:
    """Rate sweep: full-feedback values, per-tau bounds, verdicts, and the sup."""

    lambda_grid: tuple[float, ...]
    full_bits: tuple[float, ...]
    g_bits: dict
    verdicts: dict
    sup_full: tuple[float, float]
    service_json: dict
    options: dict

    def to_json_dict(self) -> dict:
        return {
            "lambda_grid": list(self.lambda_grid),
            "full_bits": list(self.full_bits),
            "g_bits": {str(t): list(v) for t, v in self.g_bits.items()},
            "verdicts": {str(t): [g.to_json_dict() for g in v]
                         for t, v in self.verdicts.items()},
            "sup_full": {"lambda": self.sup_full[0], "bits": self.sup_full[1]},
            "service": self.service_json,
            "options": self.options,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        taus = sorted(self.g_bits)
        single = len(taus) == 1
        header = ["lambda", "c_full_bits"]
        for t in taus:
            header.append(f"g_bits_tau{t}")
        for t in taus:
            if single:
                header += ["verdict", "gap", "error_bound"]
            else:
                header += [f"verdict_tau{t}", f"gap_tau{t}", f"error_bound_tau{t}"]
        lines = [",".join(header)]
        for i, lam in enumerate(self.lambda_grid):
            row = [repr(lam), repr(self.full_bits[i])]
            for t in taus:
                row.append(repr(self.g_bits[t][i]))
            for t in taus:
                g = self.verdicts[t][i]
                row += [g.verdict, repr(g.gap_bits), repr(g.error_bits)]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def default_lambda_grid(service: ServiceModel, points: int = 32) -> np.ndarray:
    """Geometric grid over (0.02 mu, 0.98 mu): both ends decay to zero and
    geometric spacing resolves the small-rate side."""
    mu = service.rate_mu
    return np.geomspace(0.02 * mu, 0.98 * mu, points)


def _golden_max(fn, lo: float, hi: float, iters: int = 24) -> tuple[float, float]:
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - phi * (b - a)
    x2 = a + phi * (b - a)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(iters):
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - phi * (b - a)
            f1 = fn(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + phi * (b - a)
            f2 = fn(x2)
    return (x1, f1) if f1 >= f2 else (x2, f2)


def sweep(service: ServiceModel, tau_list, lambda_grid=None,
          options: SolverOptions | None = None,
          refine_sup: bool = True) -> CapacityCurve:
    """Evaluate the full value and per-tau bounds over a rate grid.

    The supremum over the rate is located by golden-section refinement on
    the bracket spanned by the best grid point's neighbors.
    """
    opts = options or SolverOptions()
    grid = default_lambda_grid(service) if lambda_grid is None \
        else np.asarray(lambda_grid, dtype=float)
    full_vals = []
    full_sols = []
    for lam in grid:
        bits, sol = _cf_solved(service, float(lam), opts)
        full_vals.append(bits)
        full_sols.append(sol)
    g_vals: dict = {t: [] for t in tau_list}
    verdicts: dict = {t: [] for t in tau_list}
    for t in tau_list:
        for i, lam in enumerate(grid):
            g_bits, sol_g = _g_solved(service, float(lam), t, opts)
            g_vals[t].append(g_bits)
            err_bits = float(lam) * (entropy_error_budget(full_sols[i], opts)
                                     + entropy_error_budget(sol_g, opts)) / LN2
            gap = full_vals[i] - g_bits
            if gap > err_bits:
                v = "Strict"
            elif abs(gap) <= err_bits:
                v = "Equal"
            else:
                v = "Inconclusive"
            verdicts[t].append(GapResult(verdict=v, gap_bits=gap,
                                         error_bits=err_bits,
                                         cf_bits=full_vals[i], g_bits=g_bits,
                                         lam=float(lam), tau=t))
    best = int(np.argmax(full_vals))
    if refine_sup:
        lo = float(grid[max(best - 1, 0)])
        hi = float(grid[min(best + 1, grid.size - 1)])
        lam_star, val_star = _golden_max(
            lambda l: _cf_solved(service, l, opts)[0], lo, hi)
        if full_vals[best] > val_star:
            lam_star, val_star = float(grid[best]), full_vals[best]
    else:
        lam_star, val_star = float(grid[best]), full_vals[best]
    return CapacityCurve(
        lambda_grid=tuple(float(v) for v in grid),
        full_bits=tuple(full_vals),
        g_bits={t: tuple(v) for t, v in g_vals.items()},
        verdicts={t: tuple(v) for t, v in verdicts.items()},
        sup_full=(lam_star, val_star),
        service_json=service_to_json(service),
        options=opts.to_dict(),
    )


def geometric_output_bound_bits(service: ServiceModel, lam: float) -> float:
    """Rate bound from the max-entropy law at the output's mean, bits/slot."""
    excess = max_entropy_mean_bound(1.0 / lam) - entropy(service.pmf)
    return lam * max(excess, 0.0) / LN2
