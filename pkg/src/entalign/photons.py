"""Monte Carlo photon-pair detection statistics.

Pair events are drawn with 50/50 basis routing on each side and Born-rule
outcomes from the effective two-qubit state. Coincidence quads feed the
visibility estimator with its first-order Poisson error bar, and a slow
random-walk drift can be applied to the environmental channel unitaries.

Event streams are numpy structured arrays (EVENT_DTYPE); outcomes are
stored as +1/-1.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .model import BASIS_PAIRS, BasisPair, ChannelStack, effective_state
from .su2 import rotation_about

__all__ = [
    "EVENT_DTYPE",
    "PairEvent",
    "CountsQuad",
    "VisibilityEstimate",
    "DriftModel",
    "EmptyCounts",
    "OutOfRange",
    "ZeroCounts",
    "born_probabilities",
    "sample_pair_events",
    "sample_counts",
    "accumulate_counts",
    "estimate_visibility",
    "qber_from_visibility",
    "visibility_sigma",
    "apply_drift",
    "events_to_csv",
    "events_from_csv",
    "error_curve",
]

EVENT_DTYPE = np.dtype([
    ("t_ns", np.int64),
    ("a_basis", np.int8),
    ("b_basis", np.int8),
    ("a_out", np.int8),
    ("b_out", np.int8),
])


class PairEvent(NamedTuple):
    t_ns: int
    a_basis: int
    b_basis: int
    a_out: int  # +1 / -1
    b_out: int  # +1 / -1


class EmptyCounts(ValueError):
    """No coincidences available for an estimate."""


class OutOfRange(ValueError):
    """Visibility argument outside [-1, 1]."""


class ZeroCounts(ValueError):
    """Sigma requested for zero total counts."""


@dataclass(frozen=True)
class CountsQuad:
    """The four coincidence counters of one basis pair (++, +-, -+, --)."""

    cc_pp: int = 0
    cc_pm: int = 0
    cc_mp: int = 0
    cc_mm: int = 0

    def __post_init__(self):
        if min(self.cc_pp, self.cc_pm, self.cc_mp, self.cc_mm) < 0:
            raise ValueError("coincidence counts must be non-negative")

    @property
    def total(self) -> int:
        return self.cc_pp + self.cc_pm + self.cc_mp + self.cc_mm

    def __add__(self, other: "CountsQuad") -> "CountsQuad":
        return CountsQuad(self.cc_pp + other.cc_pp, self.cc_pm + other.cc_pm,
                          self.cc_mp + other.cc_mp, self.cc_mm + other.cc_mm)


@dataclass(frozen=True)
class VisibilityEstimate:
    value: float
    sigma: float
    n: int
    qber: float


@dataclass(frozen=True)
class DriftModel:
    """Random-walk drift of the environmental unitaries.

    angular_rate is the Bloch-sphere angle standard deviation per sqrt
    second applied to each affected unitary ('u_a', 'u_b').
    """

    angular_rate: float = 0.0
    affected: frozenset = field(default_factory=lambda: frozenset({"u_a", "u_b"}))

    def __post_init__(self):
        if self.angular_rate < 0:
            raise ValueError("angular_rate must be >= 0")
        if not self.affected <= {"u_a", "u_b"}:
            raise ValueError("affected may only contain 'u_a' and 'u_b'")


def born_probabilities(psi: np.ndarray, stack: ChannelStack, bp: BasisPair) -> np.ndarray:
    """Outcome probabilities (++, +-, -+, --) for one basis pair."""
    p = np.abs(effective_state(psi, stack, bp)) ** 2
    return p / p.sum()


def sample_pair_events(psi: np.ndarray, stack: ChannelStack, n: int,
                       rate: float, rng: np.random.Generator) -> np.ndarray:
    """Draw n coincidence events with uniform basis routing.

    Timestamps are integer nanoseconds from an exponential inter-arrival
    clock of the given pair rate (at least 1 ns apart, so strictly
    increasing). Deterministic for a given generator state.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    events = np.zeros(n, dtype=EVENT_DTYPE)
    if n == 0:
        return events
    dt_ns = np.maximum(1, np.rint(rng.exponential(1e9 / rate, size=n))).astype(np.int64)
    events["t_ns"] = np.cumsum(dt_ns)
    events["a_basis"] = rng.integers(1, 3, size=n, dtype=np.int8)
    events["b_basis"] = rng.integers(1, 3, size=n, dtype=np.int8)
    for bp in BASIS_PAIRS:
        mask = (events["a_basis"] == bp.i) & (events["b_basis"] == bp.j)
        m = int(mask.sum())
        if m == 0:
            continue
        cats = rng.choice(4, size=m, p=born_probabilities(psi, stack, bp))
        events["a_out"][mask] = np.where(cats < 2, 1, -1)
        events["b_out"][mask] = np.where(cats % 2 == 0, 1, -1)
    return events


def sample_counts(psi: np.ndarray, stack: ChannelStack, n: int,
                  rng: np.random.Generator) -> dict:
    """Coincidence quads for all four basis pairs from n routed pairs.

    Statistically equivalent to sample_pair_events + accumulate_counts
    but samples the 16-cell multinomial directly.
    """
    probs = np.concatenate([0.25 * born_probabilities(psi, stack, bp)
                            for bp in BASIS_PAIRS])
    cells = rng.multinomial(n, probs)
    return {bp: CountsQuad(*map(int, cells[4 * k: 4 * k + 4]))
            for k, bp in enumerate(BASIS_PAIRS)}


def accumulate_counts(events: np.ndarray, bp: BasisPair) -> CountsQuad:
    """Tally the four outcome combinations of one basis pair."""
    events = np.asarray(events)
    mask = (events["a_basis"] == bp.i) & (events["b_basis"] == bp.j)
    a = events["a_out"][mask]
    b = events["b_out"][mask]
    return CountsQuad(
        cc_pp=int(np.sum((a == 1) & (b == 1))),
        cc_pm=int(np.sum((a == 1) & (b == -1))),
        cc_mp=int(np.sum((a == -1) & (b == 1))),
        cc_mm=int(np.sum((a == -1) & (b == -1))),
    )


def estimate_visibility(q: CountsQuad) -> VisibilityEstimate:
    """Visibility, Poisson error bar and QBER from a coincidence quad."""
    n = q.total
    if n == 0:
        raise EmptyCounts("cannot estimate visibility from zero coincidences")
    value = (q.cc_pp + q.cc_mm - q.cc_pm - q.cc_mp) / n
    return VisibilityEstimate(value=value, sigma=visibility_sigma(value, n),
                              n=n, qber=qber_from_visibility(value))


def qber_from_visibility(v: float) -> float:
    """QBER = (1 - |V|) / 2."""
    if not -1.0 <= v <= 1.0:
        raise OutOfRange(f"visibility {v} outside [-1, 1]")
    return 0.5 * (1.0 - abs(v))


def visibility_sigma(v: float, n: int) -> float:
    """First-order Poisson error of the visibility estimator.

    With the four coincidence counts independent Poisson and total n,
    propagating through the estimator gives sigma = sqrt((1 - v^2) / n).
    """
    if not -1.0 <= v <= 1.0:
        raise OutOfRange(f"visibility {v} outside [-1, 1]")
    if n <= 0:
        raise ZeroCounts("sigma undefined for zero counts")
    return float(np.sqrt(max(0.0, 1.0 - v * v) / n))


def apply_drift(stack: ChannelStack, dt: float, d: DriftModel,
                rng: np.random.Generator) -> ChannelStack:
    """Left-multiply each affected unitary by a small random rotation.

    The rotation angle is normal with standard deviation
    angular_rate * sqrt(dt); the axis is uniform on the sphere.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if dt == 0 or d.angular_rate == 0 or not d.affected:
        return stack
    updates = {}
    for name in sorted(d.affected):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        angle = rng.normal(0.0, d.angular_rate * np.sqrt(dt))
        updates[name] = rotation_about(axis, angle) @ getattr(stack, name)
    return stack.with_(**updates)


_CSV_HEADER = "timestamp_ns,a_basis,b_basis,a_out,b_out"


def events_to_csv(events: np.ndarray) -> str:
    """Serialize an event stream as CSV lines (outcomes as +/-)."""
    out = io.StringIO()
    out.write(_CSV_HEADER + "\n")
    for ev in np.asarray(events):
        out.write(f"{ev['t_ns']},{ev['a_basis']},{ev['b_basis']},"
                  f"{'+' if ev['a_out'] > 0 else '-'},"
                  f"{'+' if ev['b_out'] > 0 else '-'}\n")
    return out.getvalue()


def events_from_csv(text: str) -> np.ndarray:
    lines = [ln for ln in text.strip().splitlines() if ln and not ln.startswith("#")]
    if lines and lines[0] == _CSV_HEADER:
        lines = lines[1:]
    events = np.zeros(len(lines), dtype=EVENT_DTYPE)
    for k, ln in enumerate(lines):
        t, ab, bb, ao, bo = ln.split(",")
        events[k] = (int(t), int(ab), int(bb),
                     1 if ao.strip() == "+" else -1,
                     1 if bo.strip() == "+" else -1)
    return events


def error_curve(v_list, n_list, trials: int, rng: np.random.Generator):
    """Closed-form sigma vs Monte Carlo standard deviation per (v, n).

    The oracle resamples the four quad counts as independent Poisson
    around their means and re-runs the estimator. Returns rows of
    (v, n, sigma_formula, sigma_mc).
    """
    if not len(v_list) or not len(n_list) or trials <= 0:
        raise ValueError("non-empty grids and positive trial count required")
    rows = []
    for v in v_list:
        if not -1.0 <= v <= 1.0:
            raise OutOfRange(f"visibility {v} outside [-1, 1]")
        means = np.array([(1 + v) / 4, (1 - v) / 4, (1 - v) / 4, (1 + v) / 4])
        for n in n_list:
            if n <= 0:
                raise ValueError("counts must be positive")
            counts = rng.poisson(n * means, size=(trials, 4))
            tot = counts.sum(axis=1)
            ok = tot > 0
            est = (counts[ok, 0] + counts[ok, 3] - counts[ok, 1] - counts[ok, 2]) / tot[ok]
            rows.append((float(v), int(n), visibility_sigma(v, n), float(np.std(est))))
    return rows
