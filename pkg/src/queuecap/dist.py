"""Probability-mass-function algebra on the nonnegative integers.

Carries the service law S, the clipped threshold variable T, input laws,
and output laws.  Infinite supports are represented by truncation with the
lost mass recorded in ``tail_mass``; trailing zeros are always trimmed so
the top support index is well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BadParameter, NegativeMass, NotNormalized

SUM_REJECT_TOL = 1e-9    # pmf_new refuses to repair larger deviations
CLOSURE_TOL = 1e-12      # invariant: probs + tail_mass sum to 1 within this
ENTRY_NEG_TOL = -1e-15


def _clean(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise BadParameter("pmf values must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(arr)):
        raise BadParameter("pmf values must be finite")
    if np.any(arr < ENTRY_NEG_TOL):
        raise NegativeMass(f"negative probability mass: min entry {float(arr.min())!r}")
    return np.where(arr < 0.0, 0.0, arr)


def _trim(arr: np.ndarray) -> np.ndarray:
    nz = np.nonzero(arr)[0]
    if nz.size == 0:
        return arr[:1]
    return arr[: nz[-1] + 1]


@dataclass(frozen=True)
class Pmf:
    """Distribution on {0, 1, 2, ...}, trimmed, with recorded truncation loss."""

    probs: tuple[float, ...]
    tail_mass: float = 0.0

    @staticmethod
    def make(values, tail_mass: float = 0.0) -> "Pmf":
        """Validating constructor.  Never renormalizes; rejects broken mass."""
        arr = _trim(_clean(values))
        total = float(arr.sum()) + tail_mass
        if abs(total - 1.0) > CLOSURE_TOL:
            raise NotNormalized(
                f"total probability mass {total!r} deviates from 1 beyond {CLOSURE_TOL}"
            )
        return Pmf(tuple(float(v) for v in arr), float(tail_mass))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    @property
    def support_max(self) -> int:
        """Top index of the stored window (the largest value with mass)."""
        return len(self.probs) - 1

    @property
    def first_positive_index(self) -> int:
        for i, v in enumerate(self.probs):
            if v > 0.0:
                return i
        return 0

    @property
    def is_truncated(self) -> bool:
        return self.tail_mass > 0.0

    def to_json_dict(self) -> dict:
        return {"probs": list(self.probs), "tail_mass": self.tail_mass}


def pmf_new(values: Sequence[float]) -> Pmf:
    """Build a Pmf from raw probabilities.

    Float drift up to ``SUM_REJECT_TOL`` is repaired by exact division;
    anything larger raises ``NotNormalized`` instead of being papered over.
    """
    arr = _clean(values)
    total = float(arr.sum())
    if abs(total - 1.0) > SUM_REJECT_TOL:
        raise NotNormalized(f"probabilities sum to {total!r}, not 1")
    return Pmf.make(arr / total)


def point_pmf(k: int) -> Pmf:
    if k < 0 or int(k) != k:
        raise BadParameter("point mass location must be a nonnegative integer")
    arr = np.zeros(int(k) + 1)
    arr[-1] = 1.0
    return Pmf.make(arr)


def entropy(p: Pmf) -> float:
    """Shannon entropy in nats, with 0 ln 0 = 0."""
    arr = p.as_array()
    pos = arr[arr > 0.0]
    return float(-(pos * np.log(pos)).sum())


def mean(p: Pmf) -> float:
    """First moment of the stored window; a lower bound when tail_mass > 0."""
    arr = p.as_array()
    return float(np.arange(arr.size) @ arr)


def convolve(a: Pmf, b: Pmf) -> Pmf:
    """Law of the sum of independent draws from ``a`` and ``b``."""
    raw = np.convolve(a.as_array(), b.as_array())
    tail = a.tail_mass + b.tail_mass - a.tail_mass * b.tail_mass
    return Pmf.make(raw, tail)


def threshold_transform(s: Pmf, tau: int) -> Pmf:
    """Law of ``max(S - tau, 0)``: mass at or below tau collapses onto 0."""
    if tau < 0 or int(tau) != tau:
        raise BadParameter("tau must be a nonnegative integer")
    tau = int(tau)
    if tau == 0:
        return Pmf(s.probs, s.tail_mass)
    arr = s.as_array()
    head = float(arr[: tau + 1].sum())
    return Pmf.make(np.concatenate(([head], arr[tau + 1:])), s.tail_mass)


def _tail_geq(t: Pmf, n: int) -> np.ndarray:
    """P[T >= j] for j = 0..n-1; truncated tail counts as mass above the window."""
    q = t.as_array()
    geq = np.zeros(n)
    m = min(n, q.size)
    rev = np.cumsum(q[::-1])[::-1]
    geq[:m] = rev[:m]
    return geq + t.tail_mass


def clip_subtract_map(x: Pmf, t: Pmf) -> Pmf:
    """Law of ``max(X - T, 0)`` for independent X and T.

    Atom at 0 collects every pair with T >= X; above 0 the map is the
    downward shift by T.  Linear in ``x`` for fixed ``t``; the matrix form
    is exposed by :func:`clip_subtract_matrix`.
    """
    xa = x.as_array()
    q = t.as_array()
    n = xa.size
    w = np.zeros(n)
    w[0] = float(xa @ _tail_geq(t, n))
    if n > 1:
        full = np.convolve(xa, q[::-1])
        w[1:] = full[q.size: q.size + n - 1]
    return Pmf.make(w, x.tail_mass)


def clip_subtract_matrix(t: Pmf, n_in: int) -> np.ndarray:
    """Column-stochastic matrix of the clip-subtract channel on {0..n_in-1}."""
    if n_in < 1:
        raise BadParameter("n_in must be at least 1")
    q = t.as_array()
    mat = np.zeros((n_in, n_in))
    ii, jj = np.indices((n_in, n_in))
    d = jj - ii
    sel = (ii >= 1) & (d >= 0) & (d < q.size)
    mat[sel] = q[d[sel]]
    mat[0, :] = _tail_geq(t, n_in)
    return mat


def max_entropy_mean_bound(m: float) -> float:
    """Entropy (nats) of the geometric law with the given mean.

    This is the largest entropy any nonnegative-integer law with that mean
    can have, so it upper-bounds every output entropy computed here.
    """
    if m <= 0.0:
        raise BadParameter("mean must be positive")
    return float(-m * math.log(m) + (1.0 + m) * math.log1p(m))


# ---------------------------------------------------------------------------
# Service-time models
# ---------------------------------------------------------------------------

SERVICE_SCHEMA_VERSION = 1

_FAMILIES = ("point", "uniform-range", "geometric", "truncated-geometric", "custom")


@dataclass(frozen=True)
class ServiceModel:
    """A service-time law with its mean and rate cached.

    ``mean`` is always the first moment of the stored window, so the
    invariants mean == sum(n p_n) and rate_mu * mean == 1 hold exactly by
    construction.  The single degenerate case point_mass(0) carries mean 0
    and infinite rate; it is rejected by RateParams and usable only through
    raw-budget solves.
    """

    pmf: Pmf
    mean: float
    rate_mu: float
    family_tag: str
    params: tuple[tuple[str, object], ...]

    def to_json_dict(self) -> dict:
        body: dict = {"version": SERVICE_SCHEMA_VERSION, "family": self.family_tag}
        body.update({k: v for k, v in self.params})
        return body


def _service(pmf: Pmf, tag: str, params: dict) -> ServiceModel:
    mu = mean(pmf)
    rate = math.inf if mu == 0.0 else 1.0 / mu
    return ServiceModel(pmf=pmf, mean=mu, rate_mu=rate, family_tag=tag,
                        params=tuple(sorted(params.items())))


def point_mass(k: int) -> ServiceModel:
    return _service(point_pmf(k), "point", {"k": int(k)})


def uniform_range(a: int, b: int) -> ServiceModel:
    if a < 0 or b < a or int(a) != a or int(b) != b:
        raise BadParameter("uniform range needs integers 0 <= a <= b")
    a, b = int(a), int(b)
    arr = np.zeros(b + 1)
    arr[a:] = 1.0 / (b - a + 1)
    return _service(Pmf.make(arr), "uniform-range", {"a": a, "b": b})


def geometric(mean_value: float, tol: float = 1e-12,
              truncation: int | None = None) -> ServiceModel:
    """Geometric law on {0,1,...} with the given mean, truncated.

    With ``truncation`` the window is {0..N} and the lopped tail is recorded;
    otherwise N is the smallest index with geometric tail below ``tol``.
    """
    if mean_value <= 0.0:
        raise BadParameter("geometric mean must be positive")
    theta = mean_value / (1.0 + mean_value)
    if truncation is None:
        if not (0.0 < tol < 1.0):
            raise BadParameter("tol must be in (0, 1)")
        n_top = max(1, math.ceil(math.log(tol) / math.log(theta)) - 1)
        tag = "geometric"
        params = {"mean": float(mean_value), "tol": float(tol)}
    else:
        if truncation < 1 or int(truncation) != truncation:
            raise BadParameter("truncation must be a positive integer")
        n_top = int(truncation)
        tag = "truncated-geometric"
        params = {"mean": float(mean_value), "truncation": n_top}
    n = np.arange(n_top + 1)
    arr = (1.0 - theta) * theta ** n
    tail = max(0.0, 1.0 - float(arr.sum()))
    return _service(Pmf.make(arr, tail), tag, params)


def custom(values: Sequence[float]) -> ServiceModel:
    p = pmf_new(values)
    return _service(p, "custom", {"probs": list(p.probs)})


def service_from_json(obj: dict) -> ServiceModel:
    """Parse the versioned service JSON; unknown keys are rejected."""
    if not isinstance(obj, dict):
        raise BadParameter("service JSON must be an object")
    body = dict(obj)
    version = body.pop("version", SERVICE_SCHEMA_VERSION)
    if version != SERVICE_SCHEMA_VERSION:
        raise BadParameter(f"unsupported service schema version: {version!r}")
    family = body.pop("family", None)
    if family not in _FAMILIES:
        raise BadParameter(f"unknown service family: {family!r}")
    if family == "point":
        k = body.pop("k", None)
        if body:
            raise BadParameter(f"unknown service key: {sorted(body)[0]!r}")
        return point_mass(k)
    if family == "uniform-range":
        a, b = body.pop("a", None), body.pop("b", None)
        if body:
            raise BadParameter(f"unknown service key: {sorted(body)[0]!r}")
        return uniform_range(a, b)
    if family == "geometric":
        m, tol = body.pop("mean", None), body.pop("tol", 1e-12)
        if body:
            raise BadParameter(f"unknown service key: {sorted(body)[0]!r}")
        return geometric(m, tol=tol)
    if family == "truncated-geometric":
        m, trunc = body.pop("mean", None), body.pop("truncation", None)
        if body:
            raise BadParameter(f"unknown service key: {sorted(body)[0]!r}")
        return geometric(m, truncation=trunc)
    probs = body.pop("probs", None)
    if body:
        raise BadParameter(f"unknown service key: {sorted(body)[0]!r}")
    if probs is None:
        raise BadParameter("custom service needs a 'probs' array")
    return custom(probs)


def service_to_json(model: ServiceModel) -> dict:
    return model.to_json_dict()


@dataclass(frozen=True)
class RateParams:
    """Output rate, service rate, the implied waiting budget, and tau."""

    lam: float
    mu: float
    budget_q: float
    tau: float

    def to_json_dict(self) -> dict:
        return {"lambda": self.lam, "mu": self.mu,
                "budget_q": self.budget_q,
                "tau": None if math.isinf(self.tau) else self.tau}


def rate_params(lam: float, mu: float, tau: float = math.inf) -> RateParams:
    if not (0.0 < lam < mu) or math.isinf(mu):
        raise BadParameter("rates must satisfy 0 < lambda < mu < infinity")
    if tau < 0:
        raise BadParameter("tau must be nonnegative")
    if not math.isinf(tau) and int(tau) != tau:
        raise BadParameter("tau must be an integer or infinity")
    budget = 1.0 / lam - 1.0 / mu
    if budget <= 0.0:
        raise BadParameter("waiting budget must be positive")
    return RateParams(lam=float(lam), mu=float(mu), budget_q=budget, tau=tau)


def rate_for(service: ServiceModel, lam: float, tau: float = math.inf) -> RateParams:
    return rate_params(lam, service.rate_mu, tau)
