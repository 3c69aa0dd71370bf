"""Shared domain types for dose-finding trials.

Doses are 1-indexed (1..D) in every public signature. Internally tallies live in
0-indexed tuples; only the accessors on :class:`TrialState` translate.

All types are immutable values: updates return fresh objects, so states can be
shared across threads and replayed without defensive copies.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

__all__ = [
    "TrialError",
    "OutcomeCounts",
    "TrialPlan",
    "TrialState",
    "DecisionKind",
    "Decision",
    "Scenario",
    "UtilityScores",
    "record_cohort",
]


class TrialError(ValueError):
    """A trial-state operation violated an invariant (bad tally, dead dose, ...)."""


@dataclass(frozen=True)
class OutcomeCounts:
    """Patient tallies for the four (toxicity x efficacy) outcomes at one dose.

    y1 = (no toxicity, efficacy), y2 = (no toxicity, no efficacy),
    y3 = (toxicity, efficacy),    y4 = (toxicity, no efficacy).
    """

    y1: int = 0
    y2: int = 0
    y3: int = 0
    y4: int = 0

    def __post_init__(self) -> None:
        for name in ("y1", "y2", "y3", "y4"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise TrialError(f"{name} must be a nonnegative integer, got {v!r}")

    @property
    def n(self) -> int:
        return self.y1 + self.y2 + self.y3 + self.y4

    @property
    def yT(self) -> int:
        """Toxicity margin: patients with a toxicity outcome."""
        return self.y3 + self.y4

    @property
    def yE(self) -> int:
        """Efficacy margin: patients with an efficacy outcome."""
        return self.y1 + self.y3

    def add(self, other: "OutcomeCounts") -> "OutcomeCounts":
        return OutcomeCounts(self.y1 + other.y1, self.y2 + other.y2,
                             self.y3 + other.y3, self.y4 + other.y4)


@dataclass(frozen=True)
class TrialPlan:
    """Static trial frame: dose grid size, cohort schedule, starting dose."""

    num_doses: int
    cohort_size: int = 3
    max_cohorts: int = 10
    start_dose: int = 1

    def __post_init__(self) -> None:
        if self.num_doses < 1:
            raise TrialError(f"num_doses must be >= 1, got {self.num_doses}")
        if self.cohort_size < 1:
            raise TrialError(f"cohort_size must be >= 1, got {self.cohort_size}")
        if self.max_cohorts < 1:
            raise TrialError(f"max_cohorts must be >= 1, got {self.max_cohorts}")
        if not 1 <= self.start_dose <= self.num_doses:
            raise TrialError(
                f"start_dose {self.start_dose} outside 1..{self.num_doses}")

    @property
    def max_patients(self) -> int:
        return self.cohort_size * self.max_cohorts


class EliminationReason(str, enum.Enum):
    SAFETY = "safety"
    FUTILITY = "futility"


@dataclass(frozen=True)
class TrialState:
    """Accumulated trial data: per-dose tallies, eliminations, position.

    ``counts[d-1] is None`` marks dose d as never tried, which several decision
    rules branch on; a dose that has been tried always has n >= 1.
    """

    plan: TrialPlan
    counts: tuple  # tuple[OutcomeCounts | None, ...], entry per dose
    eliminated: tuple  # tuple[EliminationReason | None, ...]
    current_dose: int
    cohorts_used: int = 0

    @staticmethod
    def new(plan: TrialPlan) -> "TrialState":
        return TrialState(
            plan=plan,
            counts=(None,) * plan.num_doses,
            eliminated=(None,) * plan.num_doses,
            current_dose=plan.start_dose,
            cohorts_used=0,
        )

    # -- accessors (doses 1-indexed) -------------------------------------

    @property
    def num_doses(self) -> int:
        return self.plan.num_doses

    def counts_at(self, dose: int) -> OutcomeCounts | None:
        self._check_dose(dose)
        return self.counts[dose - 1]

    def n_at(self, dose: int) -> int:
        c = self.counts_at(dose)
        return 0 if c is None else c.n

    def tried(self, dose: int) -> bool:
        return self.counts_at(dose) is not None

    def p_hat(self, dose: int) -> float | None:
        """Empirical toxicity rate, or None for an untried dose."""
        c = self.counts_at(dose)
        return None if c is None else c.yT / c.n

    def q_hat(self, dose: int) -> float | None:
        """Empirical efficacy rate, or None for an untried dose."""
        c = self.counts_at(dose)
        return None if c is None else c.yE / c.n

    def elimination_reason(self, dose: int) -> EliminationReason | None:
        self._check_dose(dose)
        return self.eliminated[dose - 1]

    def is_eliminated(self, dose: int) -> bool:
        return self.elimination_reason(dose) is not None

    def active_doses(self) -> list[int]:
        """Doses still open for assignment (not eliminated)."""
        return [d for d in range(1, self.num_doses + 1) if not self.is_eliminated(d)]

    def tried_active_doses(self) -> list[int]:
        return [d for d in self.active_doses() if self.tried(d)]

    @property
    def total_patients(self) -> int:
        return sum(c.n for c in self.counts if c is not None)

    @property
    def exhausted(self) -> bool:
        return self.cohorts_used >= self.plan.max_cohorts

    # -- updates (return new states) -------------------------------------

    def with_current_dose(self, dose: int) -> "TrialState":
        self._check_dose(dose)
        if self.is_eliminated(dose):
            raise TrialError(f"cannot move to eliminated dose {dose}")
        return replace(self, current_dose=dose)

    def with_elimination(self, dose: int, reason: EliminationReason) -> "TrialState":
        """Mark dose dead. Safety eliminations close every higher dose too."""
        self._check_dose(dose)
        flags = list(self.eliminated)
        top = self.num_doses if reason is EliminationReason.SAFETY else dose
        for d in range(dose, top + 1):
            if flags[d - 1] is None:
                flags[d - 1] = reason
        return replace(self, eliminated=tuple(flags))

    def _check_dose(self, dose: int) -> None:
        if not 1 <= dose <= self.num_doses:
            raise TrialError(f"dose {dose} outside 1..{self.num_doses}")


def record_cohort(state: TrialState, dose: int, outcomes: OutcomeCounts) -> TrialState:
    """Fold one cohort's outcomes into the state at the current dose."""
    state._check_dose(dose)
    if dose != state.current_dose:
        raise TrialError(
            f"cohort dosed at {dose} but trial is positioned at {state.current_dose}")
    if state.is_eliminated(dose):
        raise TrialError(f"dose {dose} is eliminated "
                         f"({state.elimination_reason(dose).value})")
    if state.exhausted:
        raise TrialError(f"trial already used all {state.plan.max_cohorts} cohorts")
    if outcomes.n != state.plan.cohort_size:
        raise TrialError(
            f"cohort has {outcomes.n} patients, plan says {state.plan.cohort_size}")
    counts = list(state.counts)
    prev = counts[dose - 1]
    counts[dose - 1] = outcomes if prev is None else prev.add(outcomes)
    return replace(state, counts=tuple(counts), cohorts_used=state.cohorts_used + 1)


class DecisionKind(str, enum.Enum):
    ESCALATE = "escalate"
    STAY = "stay"
    DE_ESCALATE = "de-escalate"
    JUMP_TO = "jump-to"
    TERMINATE_NO_DOSE = "terminate-no-dose"


@dataclass(frozen=True)
class Decision:
    """Per-cohort action. ``target`` is set only for JUMP_TO.

    ``rationale`` is a human-readable trace of the rule that fired; it is
    excluded from equality so replays compare on the action alone.
    """

    kind: DecisionKind
    target: int | None = None
    rationale: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if self.kind is DecisionKind.JUMP_TO:
            if self.target is None:
                raise TrialError("JumpTo decision needs a target dose")
        elif self.target is not None:
            raise TrialError(f"{self.kind.value} decision must not carry a target")

    @staticmethod
    def escalate(rationale: str = "") -> "Decision":
        return Decision(DecisionKind.ESCALATE, rationale=rationale)

    @staticmethod
    def stay(rationale: str = "") -> "Decision":
        return Decision(DecisionKind.STAY, rationale=rationale)

    @staticmethod
    def de_escalate(rationale: str = "") -> "Decision":
        return Decision(DecisionKind.DE_ESCALATE, rationale=rationale)

    @staticmethod
    def jump_to(target: int, rationale: str = "") -> "Decision":
        return Decision(DecisionKind.JUMP_TO, target=target, rationale=rationale)

    @staticmethod
    def terminate(rationale: str = "") -> "Decision":
        return Decision(DecisionKind.TERMINATE_NO_DOSE, rationale=rationale)


SHAPES = ("I", "C", "U", "IP")


@dataclass(frozen=True)
class Scenario:
    """True dose-outcome curves: toxicity p, efficacy q, and OBD bookkeeping.

    shape I  = efficacy strictly increasing,
          C  = efficacy constant,
          U  = efficacy rises to an interior peak then falls,
          IP = efficacy rises then plateaus.
    d_star is the designated best dose used by generation; d_high the top of the
    efficacy curve (peak or plateau start). true_obd is None when no dose is
    simultaneously safe and active enough.
    """

    p: tuple
    q: tuple
    shape: str
    true_obd: int | None = None
    d_star: int | None = None
    d_high: int | None = None

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise TrialError(f"unknown shape {self.shape!r}, expected one of {SHAPES}")
        if len(self.p) != len(self.q) or not self.p:
            raise TrialError("p and q must be equal-length, nonempty vectors")
        for v in (*self.p, *self.q):
            if not 0.0 <= v <= 1.0:
                raise TrialError(f"probability {v} outside [0,1]")
        for a, b in zip(self.p, self.p[1:]):
            if not a < b:
                raise TrialError(f"toxicity curve must be strictly increasing, got {self.p}")
        self._check_shape()
        for name in ("true_obd", "d_star", "d_high"):
            d = getattr(self, name)
            if d is not None and not 1 <= d <= len(self.p):
                raise TrialError(f"{name}={d} outside dose range 1..{len(self.p)}")

    def _check_shape(self) -> None:
        q = self.q
        if self.shape == "I":
            ok = all(a < b for a, b in zip(q, q[1:]))
        elif self.shape == "C":
            ok = all(v == q[0] for v in q)
        elif self.shape == "U":
            peak = max(range(len(q)), key=q.__getitem__)
            ok = (0 < peak + 1 < len(q) or len(q) == 1) and \
                all(a < b for a, b in zip(q[:peak + 1], q[1:peak + 1])) and \
                all(a > b for a, b in zip(q[peak:], q[peak + 1:]))
        else:  # IP
            # strictly increasing up to an interior plateau start, then constant
            start = len(q) - 1
            while start > 0 and q[start - 1] == q[start]:
                start -= 1
            ok = 0 < start < len(q) - 1 and \
                all(a < b for a, b in zip(q[:start + 1], q[1:start + 1]))
        if not ok:
            raise TrialError(f"efficacy curve {q} does not satisfy shape {self.shape}")

    @property
    def num_doses(self) -> int:
        return len(self.p)

    def overdose_levels(self, p_T: float, margin: float = 0.1) -> list[int]:
        """Doses whose true toxicity exceeds p_T by more than the margin."""
        return [d for d, pv in enumerate(self.p, start=1) if pv > p_T + margin]

    def admissible_doses(self, p_T: float, q_E: float) -> list[int]:
        """Doses that are truly safe (p <= p_T) and truly active (q >= q_E)."""
        return [d for d in range(1, self.num_doses + 1)
                if self.p[d - 1] <= p_T and self.q[d - 1] >= q_E]


@dataclass(frozen=True)
class UtilityScores:
    """Outcome utilities on a 0..100 scale; u1 (best) and u4 (worst) are pinned."""

    u1: float = 100.0
    u2: float = 40.0
    u3: float = 60.0
    u4: float = 0.0

    def __post_init__(self) -> None:
        if self.u1 != 100.0 or self.u4 != 0.0:
            raise TrialError("utility scale is anchored at u1=100, u4=0")
        for name in ("u2", "u3"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise TrialError(f"{name}={v} outside [0,100]")

    def as_tuple(self) -> tuple:
        return (self.u1, self.u2, self.u3, self.u4)

    def utility_successes(self, c: OutcomeCounts) -> float:
        """Equivalent number of best-case outcomes: sum(u_i * y_i) / u1."""
        return (self.u1 * c.y1 + self.u2 * c.y2 + self.u3 * c.y3 + self.u4 * c.y4) / self.u1

    def expected_utility(self, p: float, q: float) -> float:
        """Mean utility when toxicity (prob p) and efficacy (prob q) are independent."""
        return (self.u1 * (1 - p) * q + self.u2 * (1 - p) * (1 - q)
                + self.u3 * p * q + self.u4 * p * (1 - q))
