"""Independent verification of the optimizers' first-order structure.

Everything here re-derives stationarity quantities directly from the
output law, the service law, and the reported multipliers, without
touching the solver's internals: residuals of the two stationarity
systems, the order-1 recursion closed form, and the lower-triangular
Toeplitz system behind the general recursion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dist import Pmf, ServiceModel, threshold_transform
from .entmax import EntMaxSolution
from .errors import BadParameter, BadQ, WindowTooSmall, ZeroQ0

ACTIVE_MASS = 1e-9
INACTIVE_EXCESS_TOL = 1e-8


def neglog_under_service(out_probs: np.ndarray, s_probs: np.ndarray) -> np.ndarray:
    """Service-weighted negative log of the output law, per offset.

    Entry n is the expectation over the service draw of -log(out[n + draw]);
    offsets whose window touches a zero output entry come back +inf.  The
    window stops where the service support would run off the output array,
    so no boundary-contaminated values are reported.
    """
    y = np.asarray(out_probs, dtype=float)
    s = np.asarray(s_probs, dtype=float)
    length = y.size - s.size + 1
    if length < 2:
        raise WindowTooSmall(
            f"output window {y.size} too short for service support {s.size}")
    neg = np.where(y > 0.0, -np.log(np.where(y > 0.0, y, 1.0)), np.inf)
    win = np.lib.stride_tricks.sliding_window_view(neg, s.size)[:length]
    contrib = np.where(s > 0.0, win * s, 0.0)
    return contrib.sum(axis=1)


@dataclass
class StationarityReport:
    """Per-index residuals of one stationarity system."""

    residuals: np.ndarray
    max_abs_residual: float
    fitted_multipliers: tuple[float, float]
    active_set: np.ndarray
    inactive_excess: float
    excluded: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    shifted_index: int | None = None

    @property
    def inactive_ok(self) -> bool:
        return self.inactive_excess <= INACTIVE_EXCESS_TOL

    def to_json_dict(self) -> dict:
        return {
            "residuals": [None if not np.isfinite(r) else float(r)
                          for r in self.residuals],
            "max_abs_residual": self.max_abs_residual,
            "fitted_multiplier_norm": self.fitted_multipliers[0],
            "fitted_multiplier_mean": self.fitted_multipliers[1],
            "active_set": [int(i) for i in self.active_set],
            "inactive_excess": self.inactive_excess,
            "excluded": [int(i) for i in self.excluded],
            "shifted_index": self.shifted_index,
        }

    def format_table(self) -> str:
        lines = [f"{'n':>4}  {'residual':>14}  {'active':>6}"]
        active = set(int(i) for i in self.active_set)
        for n, r in enumerate(self.residuals):
            shown = f"{r:+.6e}" if np.isfinite(r) else "excluded"
            lines.append(f"{n:>4}  {shown:>14}  {'yes' if n in active else 'no':>6}")
        lines.append(f"max |residual| on active set: {self.max_abs_residual:.3e}")
        return "\n".join(lines)


def _report(resid: np.ndarray, input_probs: np.ndarray,
            fitted: tuple[float, float],
            shifted_index: int | None = None) -> StationarityReport:
    length = resid.size
    p_in = np.zeros(length)
    take = min(length, input_probs.size)
    p_in[:take] = input_probs[:take]
    finite = np.isfinite(resid)
    active = (p_in > ACTIVE_MASS) & finite
    inactive = ~(p_in > ACTIVE_MASS) & finite
    max_abs = float(np.abs(resid[active]).max()) if active.any() else 0.0
    excess = float(resid[inactive].max()) if inactive.any() else 0.0
    out = resid.copy()
    return StationarityReport(
        residuals=out,
        max_abs_residual=max_abs,
        fitted_multipliers=fitted,
        active_set=np.nonzero(active)[0],
        inactive_excess=max(excess, 0.0),
        excluded=np.nonzero(~finite)[0],
        shifted_index=shifted_index,
    )


def residual_full(solution: EntMaxSolution, service: ServiceModel) -> StationarityReport:
    """Check the full-feedback stationarity line against the solved output.

    The service-weighted neglog of the output must be affine in the index,
    with intercept 1 + norm multiplier and slope the mean multiplier, on
    the support of the input law; off the support it may only undershoot.
    """
    if solution.multiplier_norm is None or solution.multiplier_mean is None:
        raise BadParameter("solution carries no multipliers to verify")
    x = neglog_under_service(solution.output_law.as_array(),
                             service.pmf.as_array())
    n = np.arange(x.size)
    pred = 1.0 + solution.multiplier_norm + solution.multiplier_mean * n
    fitted = (float(x[0] - 1.0), float(x[1] - x[0]))
    return _report(x - pred, solution.input_law.as_array(), fitted)


def residual_gfeedback(solution: EntMaxSolution, service: ServiceModel,
                       tau: int) -> StationarityReport:
    """Check the clipped-channel stationarity system against the output.

    The left side couples the service-weighted neglogs through the law of
    the threshold variable T; the right side is affine in the expected
    clipped waiting cost.  When T has no mass at 0 the coupling starts at
    the first positive index, which is reported as ``shifted_index``.
    """
    if solution.multiplier_norm is None or solution.multiplier_mean is None:
        raise BadParameter("solution carries no multipliers to verify")
    x = neglog_under_service(solution.output_law.as_array(),
                             service.pmf.as_array())
    t = threshold_transform(service.pmf, tau)
    q = t.as_array()
    length = x.size
    gamma = solution.multiplier_norm
    delta = solution.multiplier_mean

    # lhs_n = sum_{i < n} q_i x_{n-i} + P[T >= n] x_0
    lhs = np.zeros(length)
    for i in np.nonzero(q)[0]:
        if i + 1 < length:
            lhs[i + 1:] += q[i] * x[1: length - i]
    partial = np.concatenate(([0.0], np.cumsum(q)))
    geq = 1.0 - partial[np.minimum(np.arange(length), q.size)]
    lhs += geq * x[0]

    cost = np.convolve(q, np.arange(length, dtype=float))[:length]
    resid = lhs - (1.0 + gamma + delta * cost)

    shifted = t.first_positive_index if q[0] == 0.0 else None
    n_star = (shifted or 0) + 1
    if n_star >= length or cost[n_star] == 0.0:
        raise WindowTooSmall("window too short to recover the mean multiplier")
    fitted_gamma = float(x[0] - 1.0)
    fitted_delta = float((lhs[n_star] - (1.0 + fitted_gamma)) / cost[n_star])
    return _report(resid, solution.input_law.as_array(),
                   (fitted_gamma, fitted_delta), shifted_index=shifted)


def recursion_closed_form(q: float, gamma: float, delta: float,
                          n_max: int) -> np.ndarray:
    """Closed form of the order-1 stationarity recursion.

    Returns x_n = 1 + gamma + n delta + (q/(q-1))^n (1 + gamma) for
    n = 0..n_max; the affine part solves the driven recursion and the
    alternating-sign term spans its homogeneous solutions.
    """
    if not 0.0 < q < 1.0:
        raise BadQ(f"q must lie strictly between 0 and 1, got {q!r}")
    if n_max < 0:
        raise BadParameter("n_max must be nonnegative")
    n = np.arange(n_max + 1, dtype=float)
    ratio = q / (q - 1.0)
    return 1.0 + gamma + delta * n + ratio ** n * (1.0 + gamma)


def recursion_residual(x: np.ndarray, q: float, gamma: float,
                       delta: float) -> np.ndarray:
    """How far a sequence is from satisfying the order-1 recursion."""
    x = np.asarray(x, dtype=float)
    n = np.arange(1, x.size, dtype=float)
    return (1.0 - q) * x[1:] + q * x[:-1] - (1.0 + gamma + delta * (n - q))


@dataclass(frozen=True)
class ToeplitzSystem:
    """Lower-triangular Toeplitz system of the general recursion."""

    q_pmf: Pmf
    dimension: int
    matrix: np.ndarray
    rhs: np.ndarray
    delta: float

    def to_json_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "delta": self.delta,
            "first_column": [float(v) for v in self.matrix[:, 0]],
            "rhs": [float(v) for v in self.rhs],
        }


@dataclass(frozen=True)
class ToeplitzVerdict:
    null_space_trivial: bool
    sigma_min: float
    diagonal_value: float

    def to_json_dict(self) -> dict:
        return {"null_space_trivial": self.null_space_trivial,
                "sigma_min": self.sigma_min,
                "diagonal_value": self.diagonal_value}


def toeplitz_build(q: Pmf, n: int, delta: float = 1.0) -> ToeplitzSystem:
    """Assemble the n-by-n system with first column q and driven right side."""
    if n < 1:
        raise BadParameter("dimension must be at least 1")
    qa = q.as_array()
    col = np.zeros(n)
    col[: min(n, qa.size)] = qa[:n]
    ii, jj = np.indices((n, n))
    d = ii - jj
    mat = np.zeros((n, n))
    sel = d >= 0
    mat[sel] = col[d[sel]]
    cost = np.convolve(qa, np.arange(n + 1, dtype=float))[: n + 1]
    rhs = delta * cost[1: n + 1]
    return ToeplitzSystem(q_pmf=q, dimension=n, matrix=mat, rhs=rhs,
                          delta=float(delta))


def toeplitz_forward_solve(system: ToeplitzSystem,
                           rhs: np.ndarray | None = None) -> np.ndarray:
    """Solve the triangular system by explicit forward substitution."""
    mat = system.matrix
    q0 = float(mat[0, 0])
    if q0 <= 0.0:
        raise ZeroQ0("forward substitution needs a positive leading entry")
    b = system.rhs if rhs is None else np.asarray(rhs, dtype=float)
    n = system.dimension
    x = np.zeros(n)
    for k in range(n):
        x[k] = (b[k] - float(mat[k, :k] @ x[:k])) / q0
    return x


def toeplitz_homogeneous_null(system: ToeplitzSystem) -> ToeplitzVerdict:
    """Prove the homogeneous system has only the zero solution.

    Forward substitution with a zero right side pins every coordinate to
    exactly zero in turn, because the diagonal is constant and positive.
    The smallest singular value is reported for diagnostics only; nothing
    is asserted about its relation to the diagonal.
    """
    zeros = toeplitz_forward_solve(system, np.zeros(system.dimension))
    trivial = bool(np.all(zeros == 0.0))
    sigma = float(np.linalg.svd(system.matrix, compute_uv=False)[-1])
    return ToeplitzVerdict(null_space_trivial=trivial, sigma_min=sigma,
                           diagonal_value=float(system.matrix[0, 0]))
