"""Discrete-time FIFO single-server queue with pluggable feedback delay.

Times are integers throughout, so the enumeration and reduction checks are
exact.  A policy is a callable ``policy(message, view, now)`` returning the
next arrival slot, where ``view`` is the tuple of (service-entry, feedback)
time pairs for earlier packets with entries not yet revealed at ``now``
replaced by None.  Feedback for packet i is revealed at the instant it
names: entry time b_i, and c_i = min(departure, entry + tau).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .dist import Pmf, ServiceModel
from .errors import (BadParameter, CausalityViolation, InstanceTooLarge,
                     TooFewSamples)

Policy = Callable[[int, tuple, float], int]


@dataclass(frozen=True)
class QueueTrace:
    """Per-packet times of one run; all invariants hold exactly."""

    arrivals: tuple[int, ...]
    entries: tuple[int, ...]
    feedbacks: tuple[int, ...]
    departures: tuple[int, ...]
    services: tuple[int, ...]
    waits: tuple[int, ...]
    tau: float
    seed: int | None = None

    @property
    def n(self) -> int:
        return len(self.arrivals)

    def to_csv(self) -> str:
        lines = []
        if self.seed is not None:
            lines.append(f"# seed={self.seed} tau={_tau_str(self.tau)}")
        lines.append("packet,a,b,c,d,s,w")
        for i in range(self.n):
            lines.append(f"{i + 1},{self.arrivals[i]},{self.entries[i]},"
                         f"{self.feedbacks[i]},{self.departures[i]},"
                         f"{self.services[i]},{self.waits[i]}")
        return "\n".join(lines) + "\n"


def _tau_str(tau: float) -> str:
    return "inf" if math.isinf(tau) else str(int(tau))


def _feedback_time(entry: int, departure: int, tau: float) -> int:
    if math.isinf(tau):
        return departure
    return min(departure, entry + int(tau))


def _mask_view(view: tuple, now: float) -> tuple:
    return tuple(
        (b if b <= now else None, c if c <= now else None) for b, c in view)


def _query_policy(policy: Policy, message: int, view: tuple) -> int:
    """Ask for the next arrival and audit that it used only revealed data."""
    a = policy(message, view, math.inf)
    if a < 0 or int(a) != a:
        raise BadParameter("policies must return nonnegative integer slots")
    a = int(a)
    again = policy(message, _mask_view(view, a), a)
    if again != a:
        raise CausalityViolation(
            f"arrival {a} changes to {again} when unrevealed feedback is masked")
    return a


def schedule_policy(arrivals) -> Policy:
    """A fixed arrival schedule as a (trivially causal) policy."""
    fixed = tuple(int(a) for a in arrivals)

    def policy(message: int, view: tuple, now: float) -> int:
        return fixed[len(view)]

    return policy


def offset_policy(offsets) -> Policy:
    """Arrive a fixed offset after the previous packet's feedback time."""
    fixed = tuple(int(x) for x in offsets)

    def policy(message: int, view: tuple, now: float) -> int:
        i = len(view)
        if i == 0:
            return fixed[0]
        c_prev = view[-1][1]
        if c_prev is None:
            raise CausalityViolation("previous feedback not yet revealed")
        return c_prev + fixed[i]

    return policy


def run_trace(policy_or_schedule, service_draws, tau: float,
              message: int = 0, seed: int | None = None) -> QueueTrace:
    """Roll one trace from concrete service draws.

    The queue starts empty: the first packet enters service on arrival,
    each later packet when both it and the server are ready.
    """
    if tau < 0:
        raise BadParameter("tau must be nonnegative")
    draws = [int(s) for s in service_draws]
    if any(s < 0 for s in draws):
        raise BadParameter("service draws must be nonnegative")
    policy = policy_or_schedule
    if not callable(policy):
        policy = schedule_policy(policy_or_schedule)
    arrivals, entries, feedbacks, departures, waits = [], [], [], [], []
    view: tuple = ()
    d_prev = 0
    for i, s in enumerate(draws):
        a = _query_policy(policy, message, view)
        if arrivals and a < arrivals[-1]:
            raise BadParameter("arrivals must be nondecreasing")
        b = max(a, d_prev)
        d = b + s
        c = _feedback_time(b, d, tau)
        arrivals.append(a)
        entries.append(b)
        feedbacks.append(c)
        departures.append(d)
        waits.append(b - d_prev)
        view = view + ((b, c),)
        d_prev = d
    return QueueTrace(arrivals=tuple(arrivals), entries=tuple(entries),
                      feedbacks=tuple(feedbacks), departures=tuple(departures),
                      services=tuple(draws), waits=tuple(waits),
                      tau=tau, seed=seed)


@dataclass(frozen=True)
class EnumerableCode:
    """A tiny timing code: messages mapped to causal arrival policies."""

    message_count: int
    n_packets: int
    policy: Policy
    message_probs: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.message_count < 1 or self.n_packets < 1:
            raise BadParameter("need at least one message and one packet")

    def prior(self) -> np.ndarray:
        if self.message_probs is None:
            return np.full(self.message_count, 1.0 / self.message_count)
        return np.asarray(self.message_probs, dtype=float)


def normalize_arrivals(policy_or_code):
    """Push every arrival up to the previous feedback time.

    The returned policy emits max(inner arrival, previous feedback); the
    induced departure law is unchanged, and the transform is idempotent.
    """
    if isinstance(policy_or_code, EnumerableCode):
        return replace(policy_or_code,
                       policy=normalize_arrivals(policy_or_code.policy))
    inner = policy_or_code

    def normalized(message: int, view: tuple, now: float) -> int:
        a = inner(message, view, now)
        if not view:
            return a
        c_prev = view[-1][1]
        if c_prev is None:
            # the wrapped arrival is at or above c_prev by construction,
            # so a masked c_prev can only mean the query time is too early
            raise CausalityViolation("previous feedback not yet revealed")
        return max(a, c_prev)

    return normalized


def downgrade_feedback(policy_or_code, tau_inner: float):
    """Run a shorter-delay policy inside a longer-delay environment.

    The wrapper reconstructs the inner feedback clock min(entry + tau_inner,
    outer feedback) from what the environment reveals, so enumerating the
    wrapped policy under the weaker (larger-tau) environment reproduces the
    inner policy's departure law exactly.
    """
    if isinstance(policy_or_code, EnumerableCode):
        return replace(policy_or_code,
                       policy=downgrade_feedback(policy_or_code.policy, tau_inner))
    inner = policy_or_code

    def translate(view: tuple, now: float) -> tuple:
        out = []
        for b, c2 in view:
            if b is None:
                out.append((None, None))
                continue
            cap = math.inf if math.isinf(tau_inner) else b + int(tau_inner)
            if c2 is not None:
                c1 = min(cap, c2)
            elif cap <= now:
                # no departure report by the inner deadline: the inner
                # clock fires at the deadline itself
                c1 = cap
            else:
                c1 = None
            out.append((b, c1))
        return tuple(out)

    def wrapped(message: int, view: tuple, now: float) -> int:
        return inner(message, translate(view, now), now)

    return wrapped


@dataclass
class JointLaw:
    """Exact joint law over (message, departure vector)."""

    table: dict
    n_packets: int
    message_count: int

    def total(self) -> float:
        return float(sum(self.table.values()))

    def departure_marginal(self, message: int) -> dict:
        prior = sum(p for (u, _), p in self.table.items() if u == message)
        out: dict = {}
        for (u, d), p in self.table.items():
            if u == message:
                out[d] = out.get(d, 0.0) + p / prior
        return out

    def prefix_law(self, message: int, length: int) -> dict:
        out: dict = {}
        for d, p in self.departure_marginal(message).items():
            key = d[:length]
            out[key] = out.get(key, 0.0) + p
        return out

    def tv_distance(self, other: "JointLaw") -> float:
        keys = set(self.table) | set(other.table)
        return 0.5 * sum(abs(self.table.get(k, 0.0) - other.table.get(k, 0.0))
                         for k in keys)

    def to_json_dict(self) -> dict:
        return {
            "n_packets": self.n_packets,
            "message_count": self.message_count,
            "entries": [
                {"message": u, "departures": list(d), "prob": p}
                for (u, d), p in sorted(self.table.items())
            ],
        }


def exact_departure_law(code: EnumerableCode, service: ServiceModel,
                        tau: float) -> JointLaw:
    """Exhaustive enumeration of the joint (message, departures) law.

    Walks every service branch per message, auditing causality at each
    arrival choice.  Small instances only: at most 3 packets, at most 4
    service atoms, and at most 4 distinct arrival slots per step.
    """
    if code.n_packets > 3:
        raise InstanceTooLarge("enumeration handles at most 3 packets")
    s_arr = service.pmf.as_array()
    atoms = [(v, p) for v, p in enumerate(s_arr) if p > 0.0]
    if len(atoms) > 4:
        raise InstanceTooLarge("enumeration handles at most 4 service atoms")
    if service.pmf.tail_mass > 0.0:
        raise InstanceTooLarge("enumeration needs an exactly finite service law")
    prior = code.prior()
    table: dict = {}
    arrivals_seen: list[set] = [set() for _ in range(code.n_packets)]

    def walk(u: int, step: int, view: tuple, d_prev: int,
             partial: tuple, prob: float) -> None:
        a = _query_policy(code.policy, u, view)
        arrivals_seen[step].add(a)
        if len(arrivals_seen[step]) > 4:
            raise InstanceTooLarge(
                "enumeration handles at most 4 arrival slots per step")
        b = max(a, d_prev)
        for s_val, s_p in atoms:
            d = b + s_val
            c = _feedback_time(b, d, tau)
            branch = partial + (d,)
            if step + 1 == code.n_packets:
                key = (u, branch)
                table[key] = table.get(key, 0.0) + prob * s_p
            else:
                walk(u, step + 1, view + ((b, c),), d, branch, prob * s_p)

    for u in range(code.message_count):
        walk(u, 0, (), 0, (), float(prior[u]))
    return JointLaw(table=table, n_packets=code.n_packets,
                    message_count=code.message_count)


def reduction_check(x_schedule, service: ServiceModel, tau: float,
                    trials: int, seed: int = 0) -> int:
    """Max discrepancy between queue waits and their clipped closed form.

    Policies of the form arrival = previous feedback + X make the server
    idle time equal max(X - max(prev service - tau, 0), 0) exactly, and the
    inter-departure gap splits into that wait plus the service draw.  Both
    identities are checked in integer arithmetic over seeded trials.
    """
    xs = np.asarray([int(v) for v in x_schedule], dtype=np.int64)
    if np.any(xs < 0):
        raise BadParameter("transmit offsets must be nonnegative")
    n = xs.size
    probs = service.pmf.as_array()
    rng = np.random.default_rng(seed)
    draws = rng.choice(np.arange(probs.size), size=(trials, n), p=probs)
    draws = draws.astype(np.int64)
    c_prev = np.zeros(trials, dtype=np.int64)
    d_prev = np.zeros(trials, dtype=np.int64)
    s_prev = np.zeros(trials, dtype=np.int64)
    worst = 0
    for i in range(n):
        a = c_prev + xs[i]
        b = np.maximum(a, d_prev)
        d = b + draws[:, i]
        if math.isinf(tau):
            c = d
            t_prev = np.zeros(trials, dtype=np.int64)
        else:
            c = np.minimum(d, b + int(tau))
            t_prev = np.maximum(s_prev - int(tau), 0)
        w_queue = b - d_prev
        w_closed = np.maximum(xs[i] - t_prev, 0)
        gap_split = (d - d_prev) - (w_closed + draws[:, i])
        worst = max(worst,
                    int(np.abs(w_queue - w_closed).max()),
                    int(np.abs(gap_split).max()))
        c_prev, d_prev, s_prev = c, d, draws[:, i]
    return worst


@dataclass(frozen=True)
class EntropyEstimate:
    entropy_nats: float
    miller_madow_correction: float
    n_samples: int
    support_size: int

    def to_json_dict(self) -> dict:
        return {"entropy_nats": self.entropy_nats,
                "miller_madow_correction": self.miller_madow_correction,
                "n_samples": self.n_samples,
                "support_size": self.support_size}


def plugin_entropy_estimate(samples) -> EntropyEstimate:
    """Empirical-frequency entropy with the bias correction kept separate."""
    arr = np.asarray(samples)
    if arr.size < 1000:
        raise TooFewSamples(f"need at least 1000 samples, got {arr.size}")
    _, counts = np.unique(arr, return_counts=True)
    freq = counts / arr.size
    est = float(-(freq * np.log(freq)).sum())
    mm = (counts.size - 1) / (2.0 * arr.size)
    return EntropyEstimate(entropy_nats=est, miller_madow_correction=float(mm),
                           n_samples=int(arr.size), support_size=int(counts.size))


def sample_service(service: ServiceModel, size, seed: int = 0) -> np.ndarray:
    """Seeded draws from the service law (PCG64; the seed names the stream)."""
    probs = service.pmf.as_array()
    if service.pmf.tail_mass > 0.0:
        total = probs.sum()
        probs = probs / total
    rng = np.random.default_rng(seed)
    return rng.choice(np.arange(probs.size), size=size, p=probs)
