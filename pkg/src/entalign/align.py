"""Visibility-feedback alignment of the measurement bases.

Implements the three-step procedure (maximize V11 with PCB1, null V12
with PCB2, maximize V22 with PCA2) in sequential or simultaneous mode,
driven only by visibility estimates. The optimizer is a noise-aware
stochastic coordinate search over each controller's (gamma, delta, beta)
angles: a move is kept only when the objective improves by more than the
combined standard error, and the step shrinks geometrically after a
fully rejected sweep.

Also provides post-alignment stabilization under drift and the
V11 + V22 > 1 entanglement witness.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .model import (
    BASIS_PAIRS,
    BasisPair,
    ChannelStack,
    predicted_visibility,
)
from .photons import (
    CountsQuad,
    DriftModel,
    VisibilityEstimate,
    apply_drift,
    estimate_visibility,
    qber_from_visibility,
    sample_counts,
    sample_pair_events,
)
from .sifting import QberReport, SiftedKey, qber_report_merge, sift_events
from .su2 import SU2Params, params_from_unitary, su2_from_params

__all__ = [
    "ControllerHandle",
    "AlignmentTargets",
    "OptimizerConfig",
    "TraceRow",
    "AlignmentTrace",
    "StabilizeResult",
    "BudgetExhausted",
    "evaluate_objective",
    "optimize_controller",
    "run_alignment",
    "stabilize",
    "witness_check",
]

BP11, BP12, BP21, BP22 = BASIS_PAIRS

# Controller assignment: one polarization controller per alignment step.
# PCA1 / U_A1 is never actuated.
STEP_TARGET = {1: "PCB1", 2: "PCB2", 3: "PCA2"}
STEP_BP = {1: BP11, 2: BP12, 3: BP22}

# Controllers whose motion changes each basis pair's visibility.
_BP_DEPS = {BP11: {"PCB1"}, BP12: {"PCB2"},
            BP21: {"PCB1", "PCA2"}, BP22: {"PCB2", "PCA2"}}
TARGET_FIELD = {"PCB1": "u_b1", "PCB2": "u_b2", "PCA2": "u_a2"}

# Coordinate order for the search; beta last since the visibilities are
# insensitive to it (pure row phase).
_COORDS = ("gamma", "delta", "beta")

TRACE_COLUMNS = ("pairs_total", "seconds", "v11", "v12", "v21", "v22",
                 "qber11", "qber22", "status")


class BudgetExhausted(RuntimeError):
    """Pair budget spent before the objective crossed its target.

    Carries the partial results so callers can keep the trace.
    """

    def __init__(self, message: str, stack=None, rows=None, pairs: int = 0):
        super().__init__(message)
        self.stack = stack
        self.rows = rows or []
        self.pairs = pairs


@dataclass
class ControllerHandle:
    """Actuated polarization controller: which unitary it owns and the
    currently applied angles."""

    target: str
    params: SU2Params

    def __post_init__(self):
        if self.target not in TARGET_FIELD:
            raise ValueError(f"unknown controller {self.target!r}; "
                             f"actuatable: {sorted(TARGET_FIELD)}")

    @property
    def stack_field(self) -> str:
        return TARGET_FIELD[self.target]

    def unitary(self) -> np.ndarray:
        return su2_from_params(self.params)


@dataclass(frozen=True)
class AlignmentTargets:
    """Correlation sign and convergence thresholds."""

    sign: int = 1
    t_corr: float = 0.98
    t_uncorr: float = 0.05

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        if not 0.0 < self.t_uncorr < self.t_corr <= 1.0:
            raise ValueError("need 0 < t_uncorr < t_corr <= 1")


@dataclass(frozen=True)
class OptimizerConfig:
    batch_size: int = 10_000
    initial_step: float = 0.8
    shrink: float = 0.6
    step_floor: float = 1e-4
    max_pairs: int = 4_000_000
    max_rounds: int = 100_000
    mode: str = "simultaneous"
    oracle: str = "monte_carlo"
    pair_rate: float = 21900.0
    window_s: float = 1.0
    confirm_rounds: int = 2
    patience: int = 0
    resolution: float = 0.5
    realign_max_pairs: int = 400_000

    def __post_init__(self):
        if self.batch_size <= 0 or self.max_pairs <= 0 or self.max_rounds <= 0:
            raise ValueError("batch_size, max_pairs and max_rounds must be positive")
        if self.initial_step <= 0 or self.step_floor <= 0:
            raise ValueError("steps must be positive")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must be in (0, 1)")
        if self.mode not in ("sequential", "simultaneous"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.oracle not in ("monte_carlo", "analytic"):
            raise ValueError(f"unknown oracle {self.oracle!r}")
        if self.pair_rate <= 0 or self.window_s <= 0:
            raise ValueError("pair_rate and window_s must be positive")


@dataclass
class TraceRow:
    pairs_total: int
    seconds: float
    v11: float
    v12: float
    v21: float
    v22: float
    qber11: float
    qber22: float
    status: str = "running"
    angles: tuple = ()  # controller (beta, gamma, delta) snapshots; not serialized


@dataclass
class AlignmentTrace:
    rows: list
    status: str = "running"
    final_stack: Optional[ChannelStack] = None
    pairs_total: int = 0

    def to_csv(self, comments: tuple = ()) -> str:
        out = io.StringIO()
        for line in comments:
            out.write(f"# {line}\n")
        out.write(",".join(TRACE_COLUMNS) + "\n")
        for r in self.rows:
            out.write(f"{r.pairs_total},{r.seconds:.9g},{r.v11:.9g},{r.v12:.9g},"
                      f"{r.v21:.9g},{r.v22:.9g},{r.qber11:.9g},{r.qber22:.9g},"
                      f"{r.status}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "AlignmentTrace":
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("pairs_total"):
                continue
            parts = line.split(",")
            rows.append(TraceRow(
                pairs_total=int(parts[0]), seconds=float(parts[1]),
                v11=float(parts[2]), v12=float(parts[3]), v21=float(parts[4]),
                v22=float(parts[5]), qber11=float(parts[6]), qber22=float(parts[7]),
                status=parts[8]))
        status = rows[-1].status if rows else "running"
        pairs = rows[-1].pairs_total if rows else 0
        return cls(rows=rows, status=status, pairs_total=pairs)

    def to_json_rows(self) -> list:
        return [{c: getattr(r, c) for c in TRACE_COLUMNS} for r in self.rows]


def witness_check(v11: float, v22: float,
                  sigma11: float = 0.0, sigma22: float = 0.0) -> str:
    """Entanglement witness on the two correlated visibilities.

    Certifies entanglement iff |v11| + |v22| exceeds 1 by more than
    three combined standard deviations.
    """
    for v in (v11, v22):
        if not -1.0 <= v <= 1.0:
            raise ValueError(f"visibility {v} outside [-1, 1]")
    margin = 3.0 * (abs(sigma11) + abs(sigma22))
    if abs(v11) + abs(v22) > 1.0 + margin:
        return "entangled_certified"
    return "not_certified"


def _objective(step: int, value: float, sign: Optional[int]) -> float:
    """Maximization objective per alignment step."""
    if step == 2:
        return -abs(value)
    if sign is None:
        return abs(value)
    return sign * value


def _goal(step: int, targets: AlignmentTargets) -> float:
    return -targets.t_uncorr if step == 2 else targets.t_corr


def _hold_goal(step: int, targets: AlignmentTargets) -> float:
    # Step 2 parks well inside its band, not at the edge: the residual
    # |V12| it leaves behind feeds straight into the untouched V21.
    return -0.6 * targets.t_uncorr if step == 2 else targets.t_corr


def _clip(v: float) -> float:
    return min(1.0, max(-1.0, v))


def _analytic_estimate(psi, stack, bp) -> VisibilityEstimate:
    v = _clip(predicted_visibility(psi, stack, bp))
    return VisibilityEstimate(value=v, sigma=0.0, n=0,
                              qber=qber_from_visibility(v))


def _estimates_from_counts(counts: dict) -> dict:
    est = {}
    for bp, q in counts.items():
        if q.total == 0:
            est[bp] = VisibilityEstimate(value=0.0, sigma=1.0, n=0, qber=0.5)
        else:
            est[bp] = estimate_visibility(q)
    return est


def _round_estimates(psi, stack, cfg: OptimizerConfig, rng) -> tuple:
    """Visibility estimates for all four basis pairs and pairs consumed."""
    if cfg.oracle == "analytic":
        return {bp: _analytic_estimate(psi, stack, bp) for bp in BASIS_PAIRS}, 0
    counts = sample_counts(psi, stack, cfg.batch_size, rng)
    return _estimates_from_counts(counts), cfg.batch_size


def _conv_counts(targets: AlignmentTargets, cfg: OptimizerConfig) -> tuple:
    """Coincidences per basis pair needed before hitting a target is
    distinguishable from shot noise (standard error at the threshold)."""
    if cfg.oracle == "analytic":
        return 0, 0
    n_corr = math.ceil(2.0 / max(1.0 - targets.t_corr, 1e-12))
    n_unc = math.ceil(4.0 / max(targets.t_uncorr, 1e-6) ** 2)
    return n_corr, n_unc


def evaluate_objective(step: int, stack: ChannelStack, psi: np.ndarray,
                       cfg: OptimizerConfig, rng: np.random.Generator,
                       sign: Optional[int] = None) -> tuple:
    """Objective value and visibility estimate for one alignment step.

    Monte Carlo mode spends batch_size fresh pairs; the estimate is
    built from the coincidences that land in the step's basis pair.
    With sign=None the objective is |V| (two-sided); an explicit sign
    requests that signed target.
    """
    bp = STEP_BP[step]
    if cfg.oracle == "analytic":
        est = _analytic_estimate(psi, stack, bp)
    else:
        est = estimate_visibility(sample_counts(psi, stack, cfg.batch_size, rng)[bp])
    return _objective(step, est.value, sign), est


def _wrap_angle(d: float) -> float:
    return (d + math.pi) % (2.0 * math.pi) - math.pi


class _Search:
    """Stochastic coordinate search state for one controller.

    One angle is perturbed at a time by +/- step; a pending move is kept
    only when the next visibility estimate beats the retained baseline
    by more than the combined standard error. A rejected move is
    reverted and the opposite direction is tried immediately, reusing
    the baseline, which is still valid for the reverted stack.

    Every visibility restricted to one controller angle is an exact
    sinusoid in that angle, so once both probes of a coordinate are
    rejected the three measured points determine the sinusoid and with
    it the coordinate's optimum. That fitted jump is offered as a last
    candidate under the same accept rule before the coordinate counts
    as failed; a fully rejected sweep shrinks the step.

    step2 controllers drive the visibility magnitude to zero; the others
    push sign*visibility up (or |visibility| when sign is None).
    """

    def __init__(self, handle: ControllerHandle, cfg: OptimizerConfig,
                 rng: np.random.Generator, step_no: int,
                 sign: Optional[int] = None):
        self.handle = handle
        self.cfg = cfg
        self.rng = rng
        self.step_no = step_no
        self.sign = sign
        self.step = cfg.initial_step
        self.coord = 0
        self.dir = 1 if rng.random() < 0.5 else -1
        self.pending = None  # (kind, coord name, applied delta)
        self.baseline = None  # (raw visibility, sigma)
        self.probes = {}  # rejected probe delta -> raw visibility
        self.wait = 0
        self.last_sigma = None
        self.fails = 0
        self.stalled = False
        self.restarts = 0

    def objective(self, value: float) -> float:
        return _objective(self.step_no, value, self.sign)

    def _shift(self, coord: str, delta: float) -> None:
        self.handle.params = self.handle.params.replace(
            **{coord: getattr(self.handle.params, coord) + delta})

    def _next_coord(self, failed: bool) -> None:
        self.probes = {}
        self.coord = (self.coord + 1) % len(_COORDS)
        if not failed:
            return
        self.fails += 1
        if self.fails >= len(_COORDS):
            self.fails = 0
            # A fully rejected sweep may mean the baseline was a lucky
            # fluctuation; drop it so the next round re-measures.
            self.baseline = None
            if self.step <= self.cfg.step_floor * (1.0 + 1e-9):
                self.stalled = True
            else:
                self.step = max(self.step * self.cfg.shrink, self.cfg.step_floor)

    def _fit_jump(self, sigma: float) -> Optional[float]:
        """Offset to this coordinate's optimum from the sinusoid through
        the baseline and the two rejected probes; None if the modulation
        is lost in noise."""
        (dm, vm), (dp, vp) = sorted(self.probes.items())
        if not math.isclose(dp, -dm) or dp <= 0.0:
            return None
        v0 = self.baseline[0]
        a = (2.0 * v0 - vp - vm) / (2.0 * (1.0 - math.cos(dp)))
        b = (vm - vp) / (2.0 * math.sin(dp))
        c = v0 - a
        r = math.hypot(a, b)
        if r < 3.0 * sigma:
            return None
        phi = math.atan2(b, a)  # v(d) = c + r cos(d + phi)
        if self.step_no == 2:
            if abs(c) <= r:
                t = math.acos(max(-1.0, min(1.0, -c / r)))
                cands = [t - phi, -t - phi]
            else:
                cands = [(math.pi if c > 0 else 0.0) - phi]
        elif self.sign is None:
            cands = [-phi, math.pi - phi]
            cands = [max(cands, key=lambda d: abs(c + r * math.cos(d + phi)))]
        elif self.sign > 0:
            cands = [-phi]
        else:
            cands = [math.pi - phi]
        d = min((_wrap_angle(x) for x in cands), key=abs)
        return d if abs(d) > 1e-12 else None

    def _sigma_req(self, value: float) -> float:
        # A move of size `step`, taken at angular distance theta from
        # the objective's optimum, shifts the visibility by roughly
        # step * theta + step^2, with theta^2/2 = 1 - |obj|. That is the
        # resolution a judgement needs; estimates pool across rounds
        # while the settings sit still, which is what lets sigma fall
        # this far.
        theta = math.sqrt(2.0 * max(1.0 - abs(self.objective(value)), 0.0))
        scale = self.step * theta + self.step * self.step
        return max(self.cfg.resolution * scale, 2e-5)

    def _should_wait(self, value: float, sigma: float) -> bool:
        """Hold off judging while pooled counts keep sharpening the
        estimate. A sigma that rose since last round means another
        controller moved and the pool restarted; judge coarsely then
        rather than wait for precision that will never arrive."""
        if (sigma > self._sigma_req(value) and self.wait < self.cfg.patience
                and (self.last_sigma is None or sigma < self.last_sigma)):
            self.wait += 1
            self.last_sigma = sigma
            return True
        self.wait = 0
        self.last_sigma = None
        return False

    def advance(self, value: float, sigma: float, hold: bool) -> bool:
        """Consume a fresh visibility estimate for this controller's
        basis pair; returns True when the unitary changed (revert and/or
        new trial)."""
        changed = False
        if self.pending is not None:
            if self._should_wait(value, sigma):
                return False
            kind, coord, delta = self.pending
            self.pending = None
            base_val, base_sig = self.baseline
            better = (self.objective(value)
                      > self.objective(base_val) + math.hypot(sigma, base_sig))
            if better:
                self.baseline = (value, sigma)
                self.probes = {}
                self.fails = 0
                self.stalled = False
                if kind == "jump":
                    self._next_coord(failed=False)
            else:
                self._shift(coord, -delta)
                changed = True
                if kind == "jump":
                    self._next_coord(failed=True)
                else:
                    self.probes[delta] = value
                    if len(self.probes) < 2:
                        self.dir = -self.dir
                    else:
                        jump = self._fit_jump(sigma)
                        if jump is None:
                            self._next_coord(failed=True)
                        else:
                            self._shift(coord, jump)
                            self.pending = ("jump", coord, jump)
                            return True
        elif hold:
            self.baseline = (value, sigma)
        else:
            if self._should_wait(value, sigma):
                return False
            self.baseline = (value, sigma)
        if hold or self.stalled or self.baseline is None:
            return changed
        coord = _COORDS[self.coord]
        delta = self.dir * self.step
        self._shift(coord, delta)
        self.pending = ("probe", coord, delta)
        return True

    def withdraw(self) -> bool:
        """Undo an unjudged trial move; returns True if one was applied."""
        if self.pending is None:
            return False
        _, coord, delta = self.pending
        self.pending = None
        self.wait = 0
        self._shift(coord, -delta)
        return True

    def restart(self, kick: bool = False) -> bool:
        """Reset the step for a fresh sweep; returns True when the
        controller was also moved.

        A search stalled far from its goal usually sits at a pole of the
        parametrization (gamma near 0 or pi), where the azimuth slice is
        flat and no single-coordinate move improves anything. The kick
        displaces both angles so the fresh sweep starts where every
        slice has usable modulation; the caller must then treat this as
        a move (stack and pooled counts are stale). A search stalled
        close to its goal is just noise-bound, where kicking would throw
        away a nearly converged setting.
        """
        if kick:
            self._shift("delta", self.rng.uniform(-math.pi, math.pi))
            self._shift("gamma", self.dir * self.rng.uniform(0.4, 1.0))
        self.step = self.cfg.initial_step
        self.stalled = False
        self.fails = 0
        self.probes = {}
        self.baseline = None
        self.restarts += 1
        return kick


def _apply(stack: ChannelStack, handle: ControllerHandle) -> ChannelStack:
    return stack.with_(**{handle.stack_field: handle.unitary()})


def _make_row(pairs: int, est: dict, cfg: OptimizerConfig,
              handles: Optional[dict] = None, status: str = "running") -> TraceRow:
    angles = ()
    if handles:
        angles = tuple((h.target, h.params.beta, h.params.gamma, h.params.delta)
                       for h in handles.values())
    return TraceRow(
        pairs_total=pairs, seconds=pairs / cfg.pair_rate,
        v11=est[BP11].value, v12=est[BP12].value,
        v21=est[BP21].value, v22=est[BP22].value,
        qber11=est[BP11].qber, qber22=est[BP22].qber,
        status=status, angles=angles)


def _thresholds_met(est: dict, targets: AlignmentTargets,
                    margin: float = 0.0) -> bool:
    """True when the estimates clear the targets, each by `margin` times
    its own standard error, so a pass reflects the true visibilities."""
    return (_objective(1, est[BP11].value, targets.sign)
            >= targets.t_corr + margin * est[BP11].sigma
            and _objective(3, est[BP22].value, targets.sign)
            >= targets.t_corr + margin * est[BP22].sigma
            and abs(est[BP12].value) <= targets.t_uncorr - margin * est[BP12].sigma)


def optimize_controller(handle: ControllerHandle, step: int, psi: np.ndarray,
                        stack: ChannelStack, targets: AlignmentTargets,
                        cfg: OptimizerConfig, rng: np.random.Generator,
                        max_restarts: int = 1) -> tuple:
    """Drive one controller until its step objective crosses its target.

    Returns (handle, stack, rows, pairs_used, reached). Raises
    BudgetExhausted when the pair budget runs out first; a stalled
    search (step at its floor with a fully rejected sweep, after the
    allowed restarts) returns reached=False with the best settings kept.
    """
    if handle.target != STEP_TARGET[step]:
        raise ValueError(f"step {step} is assigned to {STEP_TARGET[step]}, "
                         f"not {handle.target}")
    search = _Search(handle, cfg, rng, step, targets.sign)
    goal = _goal(step, targets)
    bp = STEP_BP[step]
    n_corr, n_unc = _conv_counts(targets, cfg)
    need = n_unc if step == 2 else n_corr
    accum = {b: CountsQuad() for b in BASIS_PAIRS}
    rows = []
    pairs = 0
    for _ in range(cfg.max_rounds):
        if cfg.oracle == "monte_carlo" and pairs + cfg.batch_size > cfg.max_pairs:
            if search.withdraw():
                stack = _apply(stack, handle)
            raise BudgetExhausted(f"step {step}: spent {pairs} pairs",
                                  stack=stack, rows=rows, pairs=pairs)
        if cfg.oracle == "analytic":
            est, used = _round_estimates(psi, stack, cfg, rng)
        else:
            counts = sample_counts(psi, stack, cfg.batch_size, rng)
            accum = {b: accum[b] + counts[b] for b in BASIS_PAIRS}
            est = _estimates_from_counts(accum)
            used = cfg.batch_size
        pairs += used
        rows.append(_make_row(pairs, est, cfg, {step: handle}))
        e = est[bp]
        obj = _objective(step, e.value, targets.sign)
        on_goal = obj >= goal
        parked = obj >= _hold_goal(step, targets)
        resolved = cfg.oracle == "analytic" or accum[bp].total >= need
        if on_goal and resolved and search.pending is None:
            return handle, stack, rows, pairs, True
        if search.stalled and not parked:
            if search.restarts >= max_restarts:
                return handle, stack, rows, pairs, False
            if search.restart(kick=goal - obj > 0.05):
                stack = _apply(stack, handle)
                accum = {b: CountsQuad() for b in BASIS_PAIRS}
                continue  # this round's estimate predates the kick
        if search.advance(obj, e.sigma, hold=parked):
            stack = _apply(stack, handle)
            accum = {b: CountsQuad() for b in BASIS_PAIRS}
    if search.withdraw():
        stack = _apply(stack, handle)
    return handle, stack, rows, pairs, False


def run_alignment(psi: np.ndarray, stack: ChannelStack,
                  targets: AlignmentTargets, cfg: OptimizerConfig,
                  rng: np.random.Generator) -> AlignmentTrace:
    """Run the full three-step alignment and return its trace.

    Sequential mode runs steps 1 -> 2 -> 3; simultaneous mode interleaves
    one move of PCB1, PCB2, PCA2 per round, sharing each round's batch.
    The untouched V21 is recorded throughout. The trace carries the final
    stack; status is 'converged', 'failed_witness' or 'budget_exhausted'.
    """
    handles = {s: ControllerHandle(STEP_TARGET[s], params_from_unitary(
        getattr(stack, TARGET_FIELD[STEP_TARGET[s]]))) for s in (1, 2, 3)}
    for h in handles.values():
        stack = _apply(stack, h)  # normalize stack entries to the handle angles

    trace = AlignmentTrace(rows=[], status="running", final_stack=stack)
    if cfg.mode == "simultaneous":
        stack = _run_simultaneous(psi, stack, targets, cfg, rng, handles, trace)
    else:
        stack = _run_sequential(psi, stack, targets, cfg, rng, handles, trace)

    trace.final_stack = stack
    if trace.rows:
        last = trace.rows[-1]
        trace.pairs_total = last.pairs_total
        if trace.status != "converged":
            # Distinguish a plain budget problem from the witness failing.
            e11 = abs(last.v11)
            e22 = abs(last.v22)
            if witness_check(e11, e22) == "not_certified":
                trace.status = "failed_witness"
            else:
                trace.status = "budget_exhausted"
        last.status = trace.status
    return trace


def _run_simultaneous(psi, stack, targets, cfg, rng, handles, trace):
    searches = {s: _Search(handles[s], cfg, rng, s, targets.sign)
                for s in (1, 2, 3)}
    n_corr, n_unc = _conv_counts(targets, cfg)
    accum = {bp: CountsQuad() for bp in BASIS_PAIRS}
    pairs = 0
    met_streak = 0
    for _ in range(cfg.max_rounds):
        if cfg.oracle == "monte_carlo" and pairs + cfg.batch_size > cfg.max_pairs:
            break
        if cfg.oracle == "analytic":
            est, used = _round_estimates(psi, stack, cfg, rng)
        else:
            # While every controller holds the stack is static, so the
            # batches pool; convergence is then judged on enough counts
            # to resolve the targets rather than on one lucky batch.
            counts = sample_counts(psi, stack, cfg.batch_size, rng)
            accum = {bp: accum[bp] + counts[bp] for bp in BASIS_PAIRS}
            est = _estimates_from_counts(accum)
            used = cfg.batch_size
        pairs += used
        trace.rows.append(_make_row(pairs, est, cfg, handles))
        resolved = (cfg.oracle == "analytic"
                    or (accum[BP11].total >= n_corr
                        and accum[BP22].total >= n_corr
                        and accum[BP12].total >= n_unc))
        m = 0.0 if cfg.oracle == "analytic" else 1.0
        met_streak = met_streak + 1 if _thresholds_met(est, targets, m) else 0
        if met_streak >= cfg.confirm_rounds and resolved:
            trace.status = "converged"
            break
        moved = set()
        for s in (1, 2, 3):
            e = est[STEP_BP[s]]
            obj = _objective(s, e.value, targets.sign)
            search = searches[s]
            parked = obj >= _hold_goal(s, targets)
            if search.stalled and not parked:
                if search.restart(kick=_goal(s, targets) - obj > 0.05):
                    stack = _apply(stack, handles[s])
                    moved.add(handles[s].target)
                    continue  # this round's estimate predates the kick
            if search.advance(e.value, e.sigma, hold=parked):
                stack = _apply(stack, handles[s])
                moved.add(handles[s].target)
        if moved and cfg.oracle != "analytic":
            # Pooled counts stay valid for any basis pair whose two
            # settings were untouched this round.
            for bp, deps in _BP_DEPS.items():
                if moved & deps:
                    accum[bp] = CountsQuad()
    # Trial moves still awaiting judgement were never accepted; leave
    # the stack at the last accepted settings.
    for s in (1, 2, 3):
        if searches[s].withdraw():
            stack = _apply(stack, handles[s])
    return stack


def _run_sequential(psi, stack, targets, cfg, rng, handles, trace):
    pairs = 0
    for s in (1, 2, 3):
        sub_cfg = replace(cfg, max_pairs=max(cfg.max_pairs - pairs, 1))
        exhausted = False
        try:
            _, stack, rows, used, _ = optimize_controller(
                handles[s], s, psi, stack, targets, sub_cfg, rng)
        except BudgetExhausted as exc:
            stack, rows, used = exc.stack, exc.rows, exc.pairs
            exhausted = True
        for r in rows:
            r.pairs_total += pairs
            r.seconds = r.pairs_total / cfg.pair_rate
        trace.rows.extend(rows)
        pairs += used
        if exhausted:
            return stack
    est, used = _round_estimates(psi, stack, cfg, rng)
    pairs += used
    trace.rows.append(_make_row(pairs, est, cfg, handles))
    if _thresholds_met(est, targets):
        trace.status = "converged"
    return stack


@dataclass
class StabilizeResult:
    trace: AlignmentTrace
    stack: ChannelStack
    report: QberReport
    key: SiftedKey
    pairs_alignment: int
    pairs_monitor: int
    pairs_key: int


def stabilize(psi: np.ndarray, stack: ChannelStack, d: DriftModel, f: float,
              duration: float, cfg: OptimizerConfig, rng: np.random.Generator,
              targets: Optional[AlignmentTargets] = None) -> StabilizeResult:
    """Hold the alignment under drift while forwarding key pairs.

    Each window of cfg.window_s seconds thins a fraction f of the
    generated pairs into the visibility monitor; the rest are sifted
    into raw key. When a monitored visibility drifts 3 sigma past the
    guard band (t_corr - 0.01 / t_uncorr + 0.01) a bounded re-alignment
    runs, with its pair cost booked separately.
    """
    if not 0.0 <= f <= 1.0:
        raise ValueError("f must be in [0, 1]")
    targets = targets or AlignmentTargets()
    sign = targets.sign
    n_windows = max(1, int(round(duration / cfg.window_s)))
    accum = {bp: CountsQuad() for bp in BASIS_PAIRS}
    key = SiftedKey.empty()
    reports = []
    trace = AlignmentTrace(rows=[], status="running")
    pairs_alignment = pairs_monitor = pairs_key = 0

    for _ in range(n_windows):
        stack = apply_drift(stack, cfg.window_s, d, rng)
        m = int(round(cfg.pair_rate * cfg.window_s))
        n_mon = int(rng.binomial(m, f)) if f > 0 else 0
        n_key = m - n_mon
        pairs_monitor += n_mon
        pairs_key += n_key
        window_counts = None
        if n_mon > 0:
            window_counts = sample_counts(psi, stack, n_mon, rng)
            accum = {bp: accum[bp] + window_counts[bp] for bp in BASIS_PAIRS}
        window_bits = 0
        if n_key > 0:
            events = sample_pair_events(psi, stack, n_key, cfg.pair_rate, rng)
            chunk = sift_events(events, sign)
            key = key.concat(chunk)
            window_bits = len(chunk)

        if window_counts is not None:
            q11, q22 = window_counts[BP11], window_counts[BP22]
            err11 = (q11.cc_pm + q11.cc_mp) if sign == 1 else (q11.cc_pp + q11.cc_mm)
            err22 = (q22.cc_pm + q22.cc_mp) if sign == 1 else (q22.cc_pp + q22.cc_mm)
            reports.append(QberReport.from_counts(
                disclosed_count=n_mon, disclosed_11=q11.total,
                disclosed_22=q22.total, errors_11=err11, errors_22=err22,
                key_bits_remaining=window_bits))
        else:
            reports.append(QberReport.from_counts(
                disclosed_count=0, disclosed_11=0, disclosed_22=0,
                errors_11=0, errors_22=0, key_bits_remaining=window_bits))

        est = {bp: (estimate_visibility(accum[bp]) if accum[bp].total > 0
                    else VisibilityEstimate(0.0, 1.0, 0, 0.5))
               for bp in BASIS_PAIRS}
        pairs_total = pairs_alignment + pairs_monitor + pairs_key
        trace.rows.append(_make_row(pairs_total, est, cfg))

        if f > 0 and accum[BP11].total > 0 and _guard_tripped(est, targets):
            sub_cfg = replace(cfg, mode="simultaneous",
                              max_pairs=cfg.realign_max_pairs)
            sub = run_alignment(psi, stack, targets, sub_cfg, rng)
            stack = sub.final_stack
            pairs_alignment += sub.pairs_total
            accum = {bp: CountsQuad() for bp in BASIS_PAIRS}

    trace.status = "converged"
    if trace.rows:
        trace.rows[-1].status = trace.status
        trace.pairs_total = trace.rows[-1].pairs_total
    return StabilizeResult(trace=trace, stack=stack,
                           report=qber_report_merge(*reports), key=key,
                           pairs_alignment=pairs_alignment,
                           pairs_monitor=pairs_monitor, pairs_key=pairs_key)


def _guard_tripped(est: dict, targets: AlignmentTargets) -> bool:
    corr_band = targets.t_corr - 0.01
    uncorr_band = targets.t_uncorr + 0.01
    for bp in (BP11, BP22):
        e = est[bp]
        if targets.sign * e.value < corr_band - 3.0 * e.sigma:
            return True
    e12 = est[BP12]
    return abs(e12.value) > uncorr_band + 3.0 * e12.sigma
