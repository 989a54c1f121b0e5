"""Entropy maximization over truncated nonnegative-integer input laws.

Two concave programs share one engine: maximize the entropy of the output
law subject to a linear waiting-time budget.  In ``full`` mode the output
is W + S; in ``gfeedback`` mode the input X first passes through the
clip-subtract channel with threshold variable T = max(S - tau, 0) and the
budget applies to the clipped waiting time.

The engine brackets the budget multiplier by bisection with an inner
exponentiated-gradient ascent on the simplex, then refines the iterate,
both multipliers, and the active set with a damped Newton method on the
joint first-order system (the ascent alone converges too slowly on wide
windows to hit the residual tolerance).  A brute-force simplex grid search
doubles as an independent oracle for tiny instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dist import (Pmf, RateParams, ServiceModel, _tail_geq, clip_subtract_matrix,
                   threshold_transform)
from .errors import (BadParameter, InstanceTooLarge, NoConvergence,
                     TruncationInsufficient)

ACTIVE_EPS = 1e-12   # simplex entries above this count as active for residuals
MASS_FLOOR = 1e-300  # multiplicative updates must never hit exact zero


_OPTION_KEYS = ("kkt_tol", "feas_tol", "boundary_tol", "max_iters", "n_in_cap")


@dataclass(frozen=True)
class SolverOptions:
    kkt_tol: float = 1e-9
    feas_tol: float = 1e-9
    boundary_tol: float = 1e-10
    max_iters: int = 100_000
    n_in_cap: int = 2 ** 14

    @staticmethod
    def from_dict(d: dict) -> "SolverOptions":
        for key in d:
            if key not in _OPTION_KEYS:
                raise BadParameter(f"unknown option key: {key!r}")
        return SolverOptions(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in _OPTION_KEYS}


@dataclass(frozen=True)
class EntMaxProblem:
    """One instance of either program over inputs on {0..n_in_top}."""

    service: ServiceModel
    budget: float
    mode: str = "full"                 # "full" or "gfeedback"
    tau: int | None = None
    rate: RateParams | None = None
    n_in_top: int | None = None        # None: adaptive doubling
    options: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.mode not in ("full", "gfeedback"):
            raise BadParameter(f"unknown mode: {self.mode!r}")
        if self.mode == "gfeedback":
            if self.tau is None or self.tau < 0 or int(self.tau) != self.tau:
                raise BadParameter("gfeedback mode needs a finite integer tau >= 0")
        if self.budget < 0.0:
            raise BadParameter("budget must be nonnegative")
        if self.n_in_top is not None and self.n_in_top < 1:
            raise BadParameter("n_in_top must be at least 1")


@dataclass(frozen=True)
class TruncationReport:
    n_in_top: int
    boundary_mass: float

    def to_json_dict(self) -> dict:
        return {"n_in_top": self.n_in_top, "boundary_mass": self.boundary_mass}


@dataclass(frozen=True)
class EntMaxSolution:
    """Optimizer output: laws, value, multipliers, and diagnostics."""

    input_law: Pmf
    output_law: Pmf
    entropy_value: float
    multiplier_mean: float | None
    multiplier_norm: float | None
    constraint_slack: float
    kkt_max_residual: float | None
    truncation_report: TruncationReport
    mode: str
    tau: int | None
    budget: float
    iterations: int = 0
    error_bound: float | None = None   # filled by the grid-search oracle only

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "tau": self.tau,
            "budget": self.budget,
            "input_law": self.input_law.to_json_dict(),
            "output_law": self.output_law.to_json_dict(),
            "entropy_nats": self.entropy_value,
            "entropy_bits": self.entropy_value / math.log(2.0),
            "multiplier_mean": self.multiplier_mean,
            "multiplier_norm": self.multiplier_norm,
            "constraint_slack": self.constraint_slack,
            "kkt_max_residual": self.kkt_max_residual,
            "iterations": self.iterations,
            "truncation_report": self.truncation_report.to_json_dict(),
            "error_bound": self.error_bound,
        }


def _entropy_arr(y: np.ndarray) -> float:
    logs = np.log(np.where(y > 0.0, y, 1.0))
    return float(-(y * logs).sum())


class _Channel:
    """Linear response map, its adjoint, and the budget functional.

    When the threshold variable T sits at or above j0 > 0 almost surely,
    the inputs 0..j0 are indistinguishable through the channel and cost
    nothing, so the decision domain is reduced: T is shifted down by j0
    and the collapsed mass is reported canonically at input index 0.
    """

    def __init__(self, service: ServiceModel, tau: int | None, n_top: int):
        self.n_top = n_top
        self.n_full = n_top + 1
        self.s_arr = service.pmf.as_array()
        self.s_tail = service.pmf.tail_mass
        if tau is None:
            self.shift = 0
            self.n_in = self.n_full
            self.q_arr = None
            self.c = np.arange(self.n_in, dtype=float)
        else:
            t = threshold_transform(service.pmf, tau)
            j0 = t.first_positive_index
            self.shift = j0
            self.n_in = max(1, self.n_full - j0)
            q_red = t.as_array()[j0:]
            self.q_arr = q_red
            t_red = Pmf.make(q_red, t.tail_mass)
            self.tgeq = _tail_geq(t_red, self.n_in)
            idx = np.arange(self.n_in, dtype=float)
            self.c = np.convolve(q_red, idx)[: self.n_in]
        self.out_len = self.n_in + self.s_arr.size - 1
        self.out_tail_base = self.s_tail

    def expand(self, p: np.ndarray) -> np.ndarray:
        """Map a reduced-domain law back to the original input indexing."""
        if self.shift == 0:
            return p
        out = np.zeros(self.n_full)
        out[0] = p[0]
        if p.size > 1:
            out[self.shift + 1:] = p[1:]
        return out

    def waiting_law(self, p: np.ndarray) -> np.ndarray:
        if self.q_arr is None:
            return p
        w = np.empty(self.n_in)
        w[0] = float(p @ self.tgeq)
        if self.n_in > 1:
            full = np.convolve(p, self.q_arr[::-1])
            w[1:] = full[self.q_arr.size: self.q_arr.size + self.n_in - 1]
        return w

    def response(self, p: np.ndarray) -> np.ndarray:
        return np.convolve(self.waiting_law(p), self.s_arr)

    def grad_entropy(self, y: np.ndarray) -> np.ndarray:
        """d H(response(p)) / d p at the point with response y."""
        neglog = -np.log(np.where(y > 0.0, y, 1.0))
        u = np.correlate(neglog, self.s_arr, mode="valid")
        if self.q_arr is None:
            return u - 1.0
        g = self.tgeq * u[0]
        u0 = u.copy()
        u0[0] = 0.0
        g = g + np.convolve(u0, self.q_arr)[: self.n_in]
        return g - 1.0

    def matrix(self) -> np.ndarray:
        if not hasattr(self, "_dense"):
            cols = [self.response(row) for row in np.eye(self.n_in)]
            self._dense = np.stack(cols, axis=1)
        return self._dense


@dataclass
class _Iterate:
    p: np.ndarray
    y: np.ndarray
    resid: float
    iters: int
    mult_norm: float
    eta: float
    achieved: float


def _residual(p: np.ndarray, dev: np.ndarray) -> float:
    """Stationarity violation: equality on the active set, <= 0 off it."""
    act = p > ACTIVE_EPS
    r_eq = float(np.abs(dev[act]).max()) if act.any() else 0.0
    r_in = float(dev[~act].max()) if (~act).any() else 0.0
    return max(r_eq, r_in, 0.0)


def _ascend(ch: _Channel, mult: float, p0: np.ndarray, opts: SolverOptions,
            eta0: float = 1.0, tol: float | None = None,
            cap: int | None = None) -> _Iterate:
    """Maximize H(response(p)) - mult * <c, p> over the simplex.

    Exponentiated-gradient ascent with backtracking, from ``p0``.  Used as
    the globalization phase; the Newton stage finishes the job.
    """
    c = ch.c
    tol = opts.kkt_tol if tol is None else tol
    cap = opts.max_iters if cap is None else min(cap, opts.max_iters)
    p = np.maximum(p0, MASS_FLOOR)
    p = p / p.sum()
    y = ch.response(p)
    fval = _entropy_arr(y) - mult * float(c @ p)
    eta = eta0
    resid = math.inf
    nu = 0.0
    it = 0
    for it in range(cap):
        g = ch.grad_entropy(y) - mult * c
        nu = float(p @ g)
        dev = g - nu
        resid = _residual(p, dev)
        if resid < tol:
            break
        moved = False
        while eta > 1e-18:
            z = eta * (dev - dev.max())
            cand = p * np.exp(z)
            cand = np.maximum(cand, MASS_FLOOR)
            cand /= cand.sum()
            ascent = float(g @ (cand - p))
            y_c = ch.response(cand)
            f_c = _entropy_arr(y_c) - mult * float(c @ cand)
            if ascent >= 0.0 and f_c >= fval + 1e-4 * ascent:
                p, y, fval = cand, y_c, f_c
                eta = min(eta * 1.5, 64.0)
                moved = True
                break
            eta *= 0.5
        if not moved:
            break
    return _Iterate(p=p, y=y, resid=resid, iters=it, mult_norm=nu,
                    eta=max(eta, 1e-6), achieved=float(c @ p))


class _NewtonFailed(Exception):
    pass


_BARRIER_PATH = (1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12, 1e-14,
                 1e-16, 1e-18, 1e-20, 1e-22)


def _newton_refine(ch: _Channel, budget: float, p0: np.ndarray, m0: float,
                   opts: SolverOptions, constrained: bool) -> tuple[float, _Iterate, int]:
    """Interior-point refinement of the joint stationarity system.

    Follows a log-barrier path in the input law (multiplicative Newton
    steps keep it positive and self-scaled), solving simultaneously for
    the normalization multiplier and, in the constrained case, the budget
    multiplier.  Entries pinned to the boundary by a negative stationarity
    gap settle at barrier level over active-mass gap, far below the active
    threshold, so no explicit freezing is needed.
    """
    if ch.n_in > 4096:
        raise _NewtonFailed("window too wide for the dense refinement stage")
    mat = ch.matrix()
    c = ch.c
    n = ch.n_in
    p = np.maximum(np.asarray(p0, dtype=float), 1e-3 / n)
    p = p / p.sum()
    m = max(float(m0), 0.0)
    tol = 0.01 * min(opts.kkt_tol, opts.feas_tol)

    def full_state(p_vec):
        y = ch.response(p_vec)
        g = ch.grad_entropy(y)
        return y, g

    y, g = full_state(p)
    nu = float(p @ (g - m * c))
    total_steps = 0
    for mu in _BARRIER_PATH:
        stage_tol = max(0.3 * mu, tol)
        for _step in range(40):
            total_steps += 1
            dev = g - m * c - nu + mu / p
            e2 = float(p.sum() - 1.0)
            e3 = float(c @ p - budget) if constrained else 0.0
            err = max(float(np.abs(dev).max()), abs(e2), abs(e3))
            if err < stage_tol:
                break
            mask = y > 0.0
            am = mat[mask]
            binv = am.T @ (am / y[mask][:, None])
            k_dim = n + (2 if constrained else 1)
            kmat = np.zeros((k_dim, k_dim))
            kmat[:n, :n] = -binv * p[None, :]
            kmat[np.arange(n), np.arange(n)] -= mu / p
            kmat[:n, n] = -1.0
            kmat[n, :n] = p
            if constrained:
                kmat[:n, n + 1] = -c
                kmat[n + 1, :n] = c * p
            rhs = np.concatenate(
                [-dev, [-e2, -e3]] if constrained else [-dev, [-e2]])
            try:
                delta = np.linalg.solve(kmat, rhs)
            except np.linalg.LinAlgError as exc:
                raise _NewtonFailed(str(exc))
            dlog = np.clip(delta[:n], -60.0, 60.0)
            dnu = float(delta[n])
            dm = float(delta[n + 1]) if constrained else 0.0
            sigma = 1.0
            improved = False
            for _bt in range(50):
                p_try = p * np.exp(sigma * dlog)
                m_try = max(m + sigma * dm, 0.0) if constrained else 0.0
                nu_try = nu + sigma * dnu
                y_try, g_try = full_state(p_try)
                dev_t = g_try - m_try * c - nu_try + mu / p_try
                e2_t = float(p_try.sum() - 1.0)
                e3_t = float(c @ p_try - budget) if constrained else 0.0
                err_t = max(float(np.abs(dev_t).max()), abs(e2_t), abs(e3_t))
                if err_t <= err * (1.0 - 1e-4 * sigma) or err_t < stage_tol:
                    p, m, nu, y, g = p_try, m_try, nu_try, y_try, g_try
                    improved = True
                    break
                sigma *= 0.5
            if not improved:
                raise _NewtonFailed(
                    f"barrier stage {mu:.0e} stalled at error {err:.3e}")
        else:
            raise _NewtonFailed(
                f"stage {mu:.0e} not converged after {total_steps} steps")
    dev = g - m * c - nu
    resid = _residual(p, dev)
    if resid > opts.kkt_tol:
        raise _NewtonFailed(f"refined residual {resid:.3e} above tolerance")
    it = _Iterate(p=p, y=y, resid=resid, iters=total_steps, mult_norm=nu,
                  eta=1.0, achieved=float(c @ p))
    return m, it, total_steps


_COARSE_TOL = 1e-5
_COARSE_CAP = 500


def _solve_at(ch: _Channel, budget: float, opts: SolverOptions,
              fallback: bool = True) -> tuple[float, _Iterate]:
    """Bracket the budget multiplier, then refine; returns (multiplier, iterate)."""
    coarse = max(_COARSE_TOL, opts.kkt_tol)
    p0 = np.full(ch.n_in, 1.0 / ch.n_in)
    s0 = _ascend(ch, 0.0, p0, opts, tol=coarse, cap=_COARSE_CAP)
    slack_first = s0.achieved <= budget
    if not slack_first:
        lo = 0.0
        hi = 1.0
        s_hi = _ascend(ch, hi, s0.p, opts, s0.eta, tol=coarse, cap=_COARSE_CAP)
        while s_hi.achieved > budget:
            lo = hi
            hi *= 2.0
            if hi > 1e18:
                raise NoConvergence("budget multiplier bracket exhausted",
                                    {"budget": budget, "multiplier": hi})
            s_hi = _ascend(ch, hi, s_hi.p, opts, s_hi.eta,
                           tol=coarse, cap=_COARSE_CAP)
        while hi - lo > 0.05 * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            s_mid = _ascend(ch, mid, s_hi.p, opts, s_hi.eta,
                            tol=coarse, cap=_COARSE_CAP)
            if s_mid.achieved > budget:
                lo = mid
            else:
                hi, s_hi = mid, s_mid
        start_p, start_m = s_hi.p, hi
    else:
        start_p, start_m = s0.p, 0.0
    try:
        if slack_first:
            m, it, _ = _newton_refine(ch, budget, start_p, 0.0, opts,
                                      constrained=False)
            if it.achieved <= budget + opts.feas_tol:
                return 0.0, it
            # the unconstrained optimum overspends after all: bind the budget
            m, it, _ = _newton_refine(ch, budget, it.p, 1.0, opts,
                                      constrained=True)
            return m, it
        m, it, _ = _newton_refine(ch, budget, start_p, start_m, opts,
                                  constrained=True)
        return m, it
    except _NewtonFailed:
        if not fallback:
            raise
    # fallback: pure ascent at full strength (slow, but keeps the contract)
    if slack_first:
        s_fin = _ascend(ch, 0.0, start_p, opts)
        if s_fin.achieved <= budget + opts.feas_tol:
            return 0.0, s_fin
    lo, hi = 0.0, max(2.0 * start_m, 1.0)
    s_hi = _ascend(ch, hi, start_p, opts)
    while s_hi.achieved > budget:
        lo, hi = hi, hi * 2.0
        if hi > 1e18:
            raise NoConvergence("budget multiplier bracket exhausted",
                                {"budget": budget, "multiplier": hi})
        s_hi = _ascend(ch, hi, s_hi.p, opts, s_hi.eta)
    mult, final = hi, s_hi
    while hi - lo > 1e-15 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        s_mid = _ascend(ch, mid, s_hi.p, opts, s_hi.eta)
        if abs(budget - s_mid.achieved) <= opts.feas_tol:
            mult, final = mid, s_mid
            break
        if s_mid.achieved > budget:
            lo = mid
        else:
            hi, s_hi = mid, s_mid
            mult, final = hi, s_hi
    return mult, final


def _degenerate_zero_budget(ch: _Channel) -> tuple[float, _Iterate]:
    # Only inputs with zero budget cost are feasible; the canonical choice
    # is the point mass at 0, whose output is the service law itself.
    p = np.zeros(ch.n_in)
    p[0] = 1.0
    y = ch.response(p)
    g = ch.grad_entropy(y)
    it = _Iterate(p=p, y=y, resid=0.0, iters=0, mult_norm=float(g[0]),
                  eta=1.0, achieved=0.0)
    return math.inf, it


def _start_n_top(budget: float, service: ServiceModel, tol: float) -> int:
    # geometric proxy for the optimal input tail: the window must reach the
    # index where a geometric law with the output's mean decays below tol
    mean_out = budget + service.mean
    ratio = mean_out / (1.0 + mean_out)
    est = math.ceil(math.log(tol) / math.log(ratio)) + 8 if ratio > 0 else 8
    return max(8, int(math.ceil(4.0 * mean_out)), int(est))


def dual_bisection(problem: EntMaxProblem,
                   options: SolverOptions | None = None) -> EntMaxSolution:
    """Solve one program instance, adapting the input truncation if needed."""
    opts = options or problem.options
    budget = problem.budget
    tau = problem.tau if problem.mode == "gfeedback" else None
    service = problem.service
    explicit = problem.n_in_top is not None
    n_top = problem.n_in_top if explicit else _start_n_top(budget, service,
                                                           opts.boundary_tol)
    n_top = min(n_top, opts.n_in_cap)
    while True:
        ch = _Channel(service, tau, n_top)
        at_cap = explicit or n_top >= opts.n_in_cap
        if budget == 0.0:
            mult, res = _degenerate_zero_budget(ch)
        else:
            try:
                mult, res = _solve_at(ch, budget, opts, fallback=at_cap)
            except _NewtonFailed:
                # non-final window: a wider one usually cures the stall,
                # and this window's iterate gets discarded anyway
                n_top = min(2 * n_top, opts.n_in_cap)
                continue
        boundary = 0.0 if ch.n_in == 1 else float(res.p[-1])
        if explicit or boundary < opts.boundary_tol:
            break
        if n_top >= opts.n_in_cap:
            raise TruncationInsufficient(
                "boundary mass still above tolerance at the truncation cap",
                {"n_in_top": n_top, "boundary_mass": boundary,
                 "boundary_tol": opts.boundary_tol})
        n_top = min(2 * n_top, opts.n_in_cap)
    if budget > 0.0 and res.resid > opts.kkt_tol:
        raise NoConvergence(
            "iteration cap hit with stationarity residual above tolerance",
            {"residual": res.resid, "kkt_tol": opts.kkt_tol,
             "iterations": res.iters, "n_in_top": n_top, "multiplier": mult})
    out_tail = ch.out_tail_base
    return EntMaxSolution(
        input_law=Pmf.make(ch.expand(res.p)),
        output_law=Pmf.make(res.y, out_tail),
        entropy_value=_entropy_arr(res.y),
        multiplier_mean=mult,
        multiplier_norm=res.mult_norm,
        constraint_slack=budget - res.achieved,
        kkt_max_residual=res.resid,
        truncation_report=TruncationReport(n_in_top=n_top, boundary_mass=boundary),
        mode=problem.mode,
        tau=problem.tau,
        budget=budget,
        iterations=res.iters,
    )


def _budget_of(service: ServiceModel, rate: RateParams | None,
               budget: float | None) -> float:
    if (rate is None) == (budget is None):
        raise BadParameter("provide exactly one of rate or budget")
    if rate is not None:
        if not math.isinf(service.rate_mu) and \
                abs(rate.mu - service.rate_mu) > 1e-9 * service.rate_mu:
            raise BadParameter("rate.mu is inconsistent with the service model")
        return rate.budget_q
    if budget < 0.0:
        raise BadParameter("budget must be nonnegative")
    return float(budget)


def solve_full(service: ServiceModel, rate: RateParams | None = None, *,
               budget: float | None = None,
               options: SolverOptions | None = None,
               n_in_top: int | None = None) -> EntMaxSolution:
    """Maximize H(W + S) over laws of W >= 0 with E[W] <= budget."""
    q = _budget_of(service, rate, budget)
    problem = EntMaxProblem(service=service, budget=q, mode="full", tau=None,
                            rate=rate, n_in_top=n_in_top,
                            options=options or SolverOptions())
    return dual_bisection(problem)


def solve_gfeedback(service: ServiceModel, rate: RateParams | None = None,
                    tau: int | None = None, *,
                    budget: float | None = None,
                    options: SolverOptions | None = None,
                    n_in_top: int | None = None) -> EntMaxSolution:
    """Maximize H((X - T)+ + S2) with T = max(S1 - tau, 0), E[(X - T)+] <= budget."""
    if tau is None and rate is not None and not math.isinf(rate.tau):
        tau = int(rate.tau)
    if tau is None or (isinstance(tau, float) and math.isinf(tau)):
        raise BadParameter("gfeedback needs a finite tau; use solve_full for tau = inf")
    q = _budget_of(service, rate, budget)
    problem = EntMaxProblem(service=service, budget=q, mode="gfeedback",
                            tau=int(tau), rate=rate, n_in_top=n_in_top,
                            options=options or SolverOptions())
    return dual_bisection(problem)


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

def _entropy_rows(y: np.ndarray) -> np.ndarray:
    logs = np.log(np.where(y > 0.0, y, 1.0))
    return -(y * logs).sum(axis=1)


def _oracle_bound(support_cap: int, resolution: float, out_len: int) -> float:
    """Gap between the best grid point and the true optimum on this support.

    Any feasible law can be pushed onto the grid by flooring entries 1..K
    down to grid multiples and dumping the freed mass on index 0, which has
    zero budget cost, so feasibility survives.  That costs at most
    eps = 2 K r in L1, and entropy moves by at most eps ln(m) + h_b(eps).
    """
    eps = min(0.5, 2.0 * support_cap * resolution)
    hb = 0.0 if eps in (0.0, 1.0) else -(eps * math.log(eps)
                                         + (1 - eps) * math.log1p(-eps))
    return eps * math.log(out_len) + hb


def oracle_grid_search(problem: EntMaxProblem, support_cap: int,
                       resolution: float) -> EntMaxSolution:
    """Exhaustive simplex-grid search over inputs on {0..support_cap}.

    Independent of the iterative solver; the returned ``error_bound`` is a
    certified distance to the true optimum restricted to this support.
    """
    if support_cap < 1 or support_cap > 6:
        raise InstanceTooLarge("oracle handles support_cap in 1..6 only")
    if not (1e-3 - 1e-12 <= resolution <= 1e-1 + 1e-12):
        raise InstanceTooLarge("oracle resolution must lie in [1e-3, 1e-1]")
    units = int(round(1.0 / resolution))
    k = support_cap
    if math.comb(units + k, k) > 3e8:
        raise InstanceTooLarge("oracle grid would exceed the size contract")
    # the channel matrix and budget weights are assembled from the public
    # pmf operations, independently of the iterative solver's internals
    s_arr = problem.service.pmf.as_array()
    if problem.mode == "gfeedback":
        t = threshold_transform(problem.service.pmf, problem.tau)
        clip = clip_subtract_matrix(t, k + 1)
        mat = np.stack([np.convolve(clip[:, j], s_arr) for j in range(k + 1)],
                       axis=1)
        cost = np.convolve(t.as_array(), np.arange(k + 1, dtype=float))[: k + 1]
    else:
        mat = np.stack([np.convolve(np.eye(k + 1)[j], s_arr) for j in range(k + 1)],
                       axis=1)
        cost = np.arange(k + 1, dtype=float)
    out_len = mat.shape[0]
    out_tail = problem.service.pmf.tail_mass
    col_unit = mat / units
    budget_units = problem.budget * units + 1e-9

    rng = np.arange(units + 1)
    if k >= 2:
        n2g, n1g = np.meshgrid(rng, rng, indexing="ij")
        pair_y = (n2g[..., None] * col_unit[:, 2]
                  + n1g[..., None] * col_unit[:, 1])
        pair_cost = n2g * cost[2] + n1g * cost[1]
        pair_mass = n2g + n1g
    else:
        n1g = rng
        pair_y = n1g[:, None] * col_unit[:, 1]
        pair_cost = n1g * cost[1]
        pair_mass = n1g

    best = {"H": -math.inf, "counts": None}

    def scan_block(counts_hi: tuple[int, ...], mass_used: int, cost_used: float,
                   y_base: np.ndarray) -> None:
        rem = units - mass_used
        cost_rem = budget_units - cost_used
        if rem < 0 or cost_rem < -1e-9:
            return
        sel = (pair_mass <= rem) & (pair_cost <= cost_rem)
        if not sel.any():
            return
        n0 = rem - pair_mass[sel]
        y = y_base + pair_y[sel] + n0[:, None] * col_unit[:, 0]
        h = _entropy_rows(y)
        j = int(np.argmax(h))
        if h[j] > best["H"]:
            if k >= 2:
                ii = np.nonzero(sel)
                n2v, n1v = int(ii[0][j]), int(ii[1][j])
            else:
                n2v, n1v = 0, int(np.nonzero(sel)[0][j])
            counts = np.zeros(k + 1, dtype=int)
            for pos, val in zip(range(k, 2, -1), counts_hi):
                counts[pos] = val
            if k >= 2:
                counts[2] = n2v
            counts[1] = n1v
            counts[0] = int(n0[j])
            best["H"] = float(h[j])
            best["counts"] = counts

    def outer(pos: int, counts_hi: tuple[int, ...], mass_used: int,
              cost_used: float, y_base: np.ndarray) -> None:
        if pos <= 2:
            scan_block(counts_hi, mass_used, cost_used, y_base)
            return
        cap = units - mass_used
        if cost[pos] > 0:
            cap = min(cap, int((budget_units - cost_used) / cost[pos]))
        for cnt in range(cap + 1):
            outer(pos - 1, counts_hi + (cnt,), mass_used + cnt,
                  cost_used + cnt * cost[pos], y_base + cnt * col_unit[:, pos])

    outer(k, (), 0, 0.0, np.zeros(out_len))

    counts = best["counts"]
    if counts is None:
        raise NoConvergence("oracle found no feasible grid point",
                            {"budget": problem.budget})
    p = counts / units
    y = mat @ p
    bound = _oracle_bound(k, 1.0 / units, out_len)
    return EntMaxSolution(
        input_law=Pmf.make(p),
        output_law=Pmf.make(y, out_tail),
        entropy_value=_entropy_arr(y),
        multiplier_mean=None,
        multiplier_norm=None,
        constraint_slack=problem.budget - float(cost @ p),
        kkt_max_residual=None,
        truncation_report=TruncationReport(n_in_top=k, boundary_mass=float(p[-1])),
        mode=problem.mode,
        tau=problem.tau,
        budget=problem.budget,
        error_bound=bound,
    )
