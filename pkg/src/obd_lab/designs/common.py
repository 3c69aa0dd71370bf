"""Shared machinery for the seven dose-finding designs.

This module holds the configuration model (:class:`DesignConfig` plus one
parameter block per design), dose elimination, decision tables, the
movement-resolution helpers every ``decide_*`` routes through, and the
``suggested_obd`` criterion evaluated on true probabilities.

Resolution contract: a design rule produces either a raw direction
(escalate / stay / de-escalate) or a concrete candidate dose. Both paths are
normalized so the returned :class:`~obd_lab.core.Decision` always targets a
non-eliminated dose, skipping over doses that were dropped for futility, or
terminates when nothing is left to assign.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

from ..core import (
    Decision,
    EliminationReason,
    OutcomeCounts,
    TrialError,
    TrialState,
    UtilityScores,
)
from ..stats import (
    BetaParams,
    Boundaries,
    beta_tail,
    boin_boundaries,
    boinet_boundaries,
    default_interval_edges,
    pava,
)

__all__ = [
    "ACTIONS",
    "ConfigError",
    "DesignId",
    "EliminationParams",
    "DecisionTable",
    "build_decision_table",
    "builtin_table",
    "BoinetParams",
    "Boin12Params",
    "UbiParams",
    "TepiParams",
    "SteinParams",
    "UtpiParams",
    "DesignConfig",
    "make_config",
    "ObdResult",
    "apply_elimination",
    "suggested_obd",
    "tox_posterior",
    "eff_posterior",
    "desirability_posterior",
    "truncated_tox_credit",
    "truncated_eff_credit",
    "responsive_doses",
]

UNIFORM = BetaParams(1.0, 1.0)
TIE_EPS = 1e-12


class ConfigError(TrialError):
    """A design configuration or decision table failed validation."""


class DesignId(str, enum.Enum):
    BOINET = "BOINET"
    BOIN12 = "BOIN12"
    UBI = "UBI"
    TEPI2 = "TEPI2"
    PRINTE = "PRINTE"
    STEIN = "STEIN"
    UTPI = "UTPI"


@dataclass(frozen=True)
class EliminationParams:
    """Safety/futility elimination thresholds shared by every design.

    A dose is dropped (with everything above it) when
    Pr(tox rate > phi_T | data) > eta, and dropped alone when
    Pr(eff rate < phi_E | data) > xi.
    """

    phi_T: float = 0.35
    phi_E: float = 0.25
    eta: float = 0.95
    xi: float = 0.8

    def __post_init__(self) -> None:
        for name in ("phi_T", "phi_E", "eta", "xi"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name}={v} outside (0,1)")


# ---------------------------------------------------------------------------
# Decision tables (TEPI-2 / PRINTE)

ACTIONS = ("E", "S", "D")
PROVENANCES = ("builtin", "generated", "user-supplied")


@dataclass(frozen=True)
class DecisionTable:
    """Grid of escalation actions over (toxicity bin) x (efficacy bin).

    ``tox_edges`` and ``eff_edges`` each partition [0, 1]; ``actions[i][j]``
    is the move for the i-th toxicity bin crossed with the j-th efficacy bin.
    """

    tox_edges: tuple
    eff_edges: tuple
    actions: tuple
    provenance: str = "generated"

    def __post_init__(self) -> None:
        for name in ("tox_edges", "eff_edges"):
            edges = getattr(self, name)
            if len(edges) < 2 or any(b - a <= 0 for a, b in zip(edges, edges[1:])):
                raise ConfigError(f"{name} must be strictly increasing")
            if abs(edges[0]) > 1e-9 or abs(edges[-1] - 1.0) > 1e-9:
                raise ConfigError(f"{name} must partition [0,1], got {edges}")
        if len(self.actions) != self.num_tox_bins:
            raise ConfigError("one action row per toxicity bin required")
        for row in self.actions:
            if len(row) != self.num_eff_bins:
                raise ConfigError("one action per efficacy bin required")
            for cell in row:
                if cell not in ACTIONS:
                    raise ConfigError(f"unknown action {cell!r}, expected one of {ACTIONS}")
        if self.provenance not in PROVENANCES:
            raise ConfigError(f"unknown provenance {self.provenance!r}")

    @property
    def num_tox_bins(self) -> int:
        return len(self.tox_edges) - 1

    @property
    def num_eff_bins(self) -> int:
        return len(self.eff_edges) - 1

    def tox_bin(self, i: int) -> tuple:
        return (self.tox_edges[i], self.tox_edges[i + 1])

    def eff_bin(self, j: int) -> tuple:
        return (self.eff_edges[j], self.eff_edges[j + 1])

    def ensure_de_escalation_rows(self, line: float) -> None:
        """Reject tables with a non-D cell in a row wholly above ``line``."""
        for i in range(self.num_tox_bins):
            if self.tox_edges[i] >= line - 1e-9 and any(c != "D" for c in self.actions[i]):
                raise ConfigError(
                    f"toxicity bin {self.tox_bin(i)} sits above {line:g} "
                    "but is not all-D")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        labels = [f"{a:g}-{b:g}" for a, b in zip(self.eff_edges, self.eff_edges[1:])]
        writer.writerow(["toxicity", *labels])
        for i, row in enumerate(self.actions):
            a, b = self.tox_bin(i)
            writer.writerow([f"{a:g}-{b:g}", *row])
        return buf.getvalue()

    @staticmethod
    def from_csv(text: str) -> "DecisionTable":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if len(rows) < 2:
            raise ConfigError("decision table CSV needs a header and at least one row")
        eff_edges = _edges_from_labels(rows[0][1:], "efficacy")
        tox_edges = _edges_from_labels([r[0] for r in rows[1:]], "toxicity")
        actions = tuple(tuple(cell.strip() for cell in r[1:]) for r in rows[1:])
        return DecisionTable(tox_edges, eff_edges, actions, provenance="user-supplied")


def _edges_from_labels(labels, axis: str) -> tuple:
    spans = []
    for label in labels:
        try:
            lo, hi = (float(part) for part in label.strip().split("-"))
        except ValueError:
            raise ConfigError(f"bad {axis} bin label {label!r}, expected 'lo-hi'") from None
        spans.append((lo, hi))
    for (_, hi), (lo, _) in zip(spans, spans[1:]):
        if abs(hi - lo) > 1e-9:
            raise ConfigError(f"{axis} bins are not contiguous around {hi:g}")
    return tuple([spans[0][0]] + [hi for _, hi in spans])


def _stepped_edges(width: float) -> tuple:
    edges = [0.0]
    x = width
    while x < 1.0 - 1e-9:
        edges.append(round(x, 10))
        x += width
    edges.append(1.0)
    return tuple(edges)


def _centered_edges(center_low: float, width: float = 0.1) -> tuple:
    # every edge is center_low + k*width, clipped into (0, 1)
    k_min = int(-center_low / width) - 2
    k_max = int((1.0 - center_low) / width) + 2
    inner = sorted(round(center_low + k * width, 10) for k in range(k_min, k_max + 1))
    return tuple([0.0] + [x for x in inner if 1e-9 < x < 1.0 - 1e-9] + [1.0])


def build_decision_table(design: "DesignId", p_T: float, q_E: float,
                         epsilon: float = 0.05,
                         provenance: str = "generated") -> DecisionTable:
    """Construct the escalation table for TEPI2 or PRINTE at the given targets.

    TEPI2 splits toxicity into five equal bins below p_T plus the remainder
    (rows: low / low / moderate / moderate / high / unacceptable...) and
    efficacy into bins of width max(q_E, 0.2) (low, moderate, high, superb...).
    PRINTE uses width-0.1 toxicity bins with one bin centered on p_T, all-D
    above p_T + epsilon, and width-0.2 efficacy bins that escalate until the
    bin clears q_E (a bin straddling the target still escalates).
    """
    design = DesignId(design)
    if not 0.0 < p_T < 1.0 or not 0.0 < q_E < 1.0:
        raise ConfigError(f"targets (p_T={p_T}, q_E={q_E}) must lie in (0,1)")
    if design is DesignId.TEPI2:
        tox_edges = _stepped_edges(p_T / 5.0)
        eff_edges = _stepped_edges(max(q_E, 0.2))
        rows = []
        for i in range(len(tox_edges) - 1):
            row = []
            for j in range(len(eff_edges) - 1):
                superb = j >= 3
                if i < 2:
                    row.append("E")
                elif i < 4:
                    row.append("S" if superb else "E")
                elif i == 4:
                    row.append("D" if j == 0 else "S")
                else:
                    row.append("D")
            rows.append(tuple(row))
        table = DecisionTable(tox_edges, eff_edges, tuple(rows), provenance)
        table.ensure_de_escalation_rows(p_T)
        return table
    if design is DesignId.PRINTE:
        tox_edges = _centered_edges(p_T - 0.05)
        eff_edges = _stepped_edges(0.2)
        rows = []
        for i in range(len(tox_edges) - 1):
            if tox_edges[i] >= p_T + epsilon - 1e-9:
                rows.append(("D",) * (len(eff_edges) - 1))
            else:
                rows.append(tuple("E" if eff_edges[j] < q_E - 1e-9 else "S"
                                  for j in range(len(eff_edges) - 1)))
        table = DecisionTable(tox_edges, eff_edges, tuple(rows), provenance)
        table.ensure_de_escalation_rows(p_T + epsilon)
        return table
    raise ConfigError(f"{design.value} does not use a decision table")


def builtin_table(design: "DesignId") -> DecisionTable:
    """The published reference layouts (TEPI2 at p_T=0.4/q_E=0.2, PRINTE at
    p_T=0.4/q_E=0.4/eps=0.05)."""
    design = DesignId(design)
    if design is DesignId.TEPI2:
        return build_decision_table(design, 0.4, 0.2, provenance="builtin")
    if design is DesignId.PRINTE:
        return build_decision_table(design, 0.4, 0.4, 0.05, provenance="builtin")
    raise ConfigError(f"{design.value} does not use a decision table")


# ---------------------------------------------------------------------------
# Per-design parameter blocks


@dataclass(frozen=True)
class BoinetParams:
    """Targets behind the (lambda1, lambda2, eta1) triple."""

    phi_p: float = 0.35
    delta_E: float = 0.6


@dataclass(frozen=True)
class Boin12Params:
    u_b: float = 0.705
    rds_prior: BetaParams = UNIFORM

    def __post_init__(self) -> None:
        if not 0.0 < self.u_b < 1.0:
            raise ConfigError(f"u_b={self.u_b} outside (0,1)")


@dataclass(frozen=True)
class UbiParams:
    """Escalation-utility weights plus the end-of-trial truncation cutoffs."""

    theta: float = 2.0
    theta_eff: float = 0.66
    theta_tox: float = 0.15
    g_tox_lo: float = 0.15
    g_tox_hi: float = 0.4
    g_eff_lo: float = 0.2
    g_eff_hi: float = 0.6

    def __post_init__(self) -> None:
        if not (0.0 <= self.g_tox_lo < self.g_tox_hi <= 1.0
                and 0.0 <= self.g_eff_lo < self.g_eff_hi <= 1.0):
            raise ConfigError("truncation cutoffs must be ordered within [0,1]")


@dataclass(frozen=True)
class TepiParams:
    """Interval-table parameters; the PRINTE fields extend the shared set.

    (p1, p2) bracket the toxicity ramp of the selection utility and (q1, q2)
    the efficacy ramp; mc_size is the posterior sample count per selection.
    epsilon widens the PRINTE de-escalation line, delta lifts the efficacy
    floor of the graduate region, and p_graduate is the acceptance threshold.
    """

    p1: float = 0.2
    p2: float = 0.35
    q1: float = 0.25
    q2: float = 0.6
    mc_size: int = 10_000
    epsilon: float = 0.05
    delta: float = 0.05
    p_graduate: float = 0.1
    table: DecisionTable | None = None

    def __post_init__(self) -> None:
        if not (0.0 < self.p1 < self.p2 <= 1.0 and 0.0 < self.q1 < self.q2 <= 1.0):
            raise ConfigError("need 0 < p1 < p2 <= 1 and 0 < q1 < q2 <= 1")
        if self.mc_size < 1:
            raise ConfigError("mc_size must be positive")


@dataclass(frozen=True)
class SteinParams:
    """psi doubles as the efficacy cutoff and the posterior threshold."""

    psi: float = 0.47919
    q_target: float = 0.6
    w1: float = 0.33
    w2: float = 1.09

    def __post_init__(self) -> None:
        if not 0.0 < self.psi < 1.0:
            raise ConfigError(f"psi={self.psi} outside (0,1)")


@dataclass(frozen=True)
class UtpiParams:
    n_star: int = 6
    num_intervals: int = 10
    k_star: int = 4

    def __post_init__(self) -> None:
        if self.n_star < 1 or self.num_intervals < 2:
            raise ConfigError("n_star >= 1 and num_intervals >= 2 required")
        if not 1 <= self.k_star <= self.num_intervals:
            raise ConfigError(f"k_star={self.k_star} outside 1..{self.num_intervals}")


_PARAM_TYPES = {
    DesignId.BOINET: BoinetParams,
    DesignId.BOIN12: Boin12Params,
    DesignId.UBI: UbiParams,
    DesignId.TEPI2: TepiParams,
    DesignId.PRINTE: TepiParams,
    DesignId.STEIN: SteinParams,
    DesignId.UTPI: UtpiParams,
}


RELOCATIONS = ("down", "up")


@dataclass(frozen=True)
class DesignConfig:
    """One design, fully parameterized: targets, elimination, boundaries,
    utilities, and the design-specific block in ``params``.

    Two fields fix the convention for continuing after the dosed level
    itself is closed by the elimination screen. ``relocation`` says where
    the trial goes: ``"down"`` restarts it at the nearest open lower level
    and never escalates across a closed level, while ``"up"`` leaves the
    design rule to reroute toward the direction it pointed, skipping closed
    levels. ``floor_stop`` says whether the trial ends (with no selection)
    when the closed level has no open level below it; without it the trial
    continues on whatever remains open. The reference implementations of
    these designs differ on exactly these conventions, and their no-OBD
    characteristics differ accordingly.

    ``select_gamma`` is the evidence bar the final selection applies on top
    of the running eliminations: a dose is selectable only if its final data
    leave at least this much posterior mass on a response rate above q_E.
    Zero disables the bar and any explored open dose may be reported.
    """

    design: DesignId
    p_T: float
    q_E: float
    elimination: EliminationParams
    utilities: UtilityScores
    boundaries: Boundaries
    params: object
    relocation: str = "down"
    floor_stop: bool = True
    select_gamma: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.p_T < 1.0 or not 0.0 < self.q_E < 1.0:
            raise ConfigError(f"targets (p_T={self.p_T}, q_E={self.q_E}) outside (0,1)")
        if self.relocation not in RELOCATIONS:
            raise ConfigError(
                f"relocation must be one of {RELOCATIONS}, got {self.relocation!r}")
        if not 0.0 <= self.select_gamma < 1.0:
            raise ConfigError(
                f"select_gamma must be in [0, 1), got {self.select_gamma}")
        expected = _PARAM_TYPES[DesignId(self.design)]
        if not isinstance(self.params, expected):
            raise ConfigError(
                f"{self.design.value} expects {expected.__name__} parameters, "
                f"got {type(self.params).__name__}")
        if self.design is DesignId.BOINET and self.boundaries.eta1 is None:
            raise ConfigError("BOINET needs the (lambda1, lambda2, eta1) triple")
        if isinstance(self.params, TepiParams):
            if self.params.table is None:
                raise ConfigError(f"{self.design.value} needs a decision table")
            line = self.p_T + (self.params.epsilon if self.design is DesignId.PRINTE else 0.0)
            self.params.table.ensure_de_escalation_rows(line)


_PUBLISHED_BOINET = {(0.35, 0.6): (0.17, 0.44, 0.48)}

# Post-closure conventions of each design's reference implementation:
# (relocation, floor_stop). Calibrated against the published early-stopping
# profiles; see the README section on conventions.
_RELOCATION_DEFAULTS = {
    DesignId.BOINET: ("up", False),
    DesignId.BOIN12: ("up", False),
    DesignId.UBI: ("up", False),
    DesignId.TEPI2: ("up", False),
    DesignId.PRINTE: ("up", False),
    DesignId.STEIN: ("up", False),
    DesignId.UTPI: ("up", False),
}

# Final-selection evidence bar of each design's reference implementation,
# calibrated jointly with the closure conventions above.
_SELECT_GAMMA_DEFAULTS = {
    DesignId.BOINET: 0.0,
    DesignId.BOIN12: 0.55,
    DesignId.UBI: 0.6,
    DesignId.TEPI2: 0.6,
    DesignId.PRINTE: 0.6,
    DesignId.STEIN: 0.35,
    DesignId.UTPI: 0.6,
}


def make_config(design, *, p_T: float = 0.35, q_E: float = 0.25,
                elimination: EliminationParams | None = None,
                utilities: UtilityScores | None = None,
                boundaries: Boundaries | None = None,
                relocation: str | None = None,
                floor_stop: bool | None = None,
                select_gamma: float | None = None,
                **overrides) -> DesignConfig:
    """Build a config with computed defaults for everything not overridden.

    Boundary defaults: interval designs get the optimal-interval cutoffs for
    p_T; BOINET gets its published triple when (p_T, delta_E) matches a
    published calibration and otherwise runs the grid search. ``relocation``
    and ``floor_stop`` default to the conventions of each design's reference
    implementation. Remaining keyword overrides are fields of the design's
    parameter block.
    """
    design = DesignId(design)
    if not 0.0 < p_T < 1.0 or not 0.0 < q_E < 1.0:
        raise ConfigError(f"targets (p_T={p_T}, q_E={q_E}) outside (0,1)")
    elimination = elimination if elimination is not None else EliminationParams()
    utilities = utilities if utilities is not None else UtilityScores()
    defaults = _RELOCATION_DEFAULTS[design]
    if relocation is None:
        relocation = defaults[0]
    if floor_stop is None:
        floor_stop = defaults[1]
    if select_gamma is None:
        select_gamma = _SELECT_GAMMA_DEFAULTS[design]

    if design is DesignId.BOINET:
        params = BoinetParams(phi_p=overrides.pop("phi_p", p_T),
                              delta_E=overrides.pop("delta_E", 0.6))
        if boundaries is None:
            pinned = _PUBLISHED_BOINET.get((round(params.phi_p, 6), round(params.delta_E, 6)))
            boundaries = boinet_boundaries(params.phi_p, params.delta_E, override=pinned)
    elif design is DesignId.BOIN12:
        u_b = overrides.pop("u_b", None)
        if u_b is None:
            # benchmark sits halfway between the utility of a borderline dose
            # (toxicity p_T, response q_E) and a perfect one
            u_bar = (utilities.u2 * (1.0 - p_T) + utilities.u3 * q_E) / utilities.u1
            u_b = (1.0 + u_bar) / 2.0
        params = Boin12Params(u_b=u_b, rds_prior=overrides.pop("rds_prior", UNIFORM))
    elif design is DesignId.UBI:
        params = UbiParams(**{k: overrides.pop(k) for k in list(overrides)
                              if k in UbiParams.__dataclass_fields__})
    elif design in (DesignId.TEPI2, DesignId.PRINTE):
        fields = {k: overrides.pop(k) for k in list(overrides)
                  if k in TepiParams.__dataclass_fields__}
        params = TepiParams(**fields)
        if params.table is None:
            table = build_decision_table(design, p_T, q_E, params.epsilon)
            params = TepiParams(**{**fields, "table": table})
    elif design is DesignId.STEIN:
        q_target = overrides.pop("q_target", 0.6)
        psi = overrides.pop("psi", None)
        if psi is None:
            psi = boin_boundaries(q_target).lambda_e
        params = SteinParams(psi=psi, q_target=q_target,
                             w1=overrides.pop("w1", 0.33),
                             w2=overrides.pop("w2", 1.09))
    else:
        k_star = overrides.pop("k_star", None)
        num_intervals = overrides.pop("num_intervals", 10)
        if k_star is None:
            k_star = _interval_index(p_T, num_intervals)
        params = UtpiParams(n_star=overrides.pop("n_star", 6),
                            num_intervals=num_intervals, k_star=k_star)

    if overrides:
        raise ConfigError(f"unknown {design.value} parameters: {sorted(overrides)}")
    if boundaries is None:
        boundaries = boin_boundaries(p_T)
    return DesignConfig(design=design, p_T=p_T, q_E=q_E, elimination=elimination,
                        utilities=utilities, boundaries=boundaries, params=params,
                        relocation=relocation, floor_stop=floor_stop,
                        select_gamma=select_gamma)


def _interval_index(x: float, num: int) -> int:
    """1-based index of the width-1/num bin [k/num, (k+1)/num) containing x."""
    return min(num, int(x * num + 1e-9) + 1)


# ---------------------------------------------------------------------------
# Posteriors and elimination


def tox_posterior(state: TrialState, dose: int) -> BetaParams:
    c = state.counts_at(dose)
    if c is None:
        return UNIFORM
    return BetaParams(1.0 + c.yT, 1.0 + c.n - c.yT)


def eff_posterior(state: TrialState, dose: int) -> BetaParams:
    c = state.counts_at(dose)
    if c is None:
        return UNIFORM
    return BetaParams(1.0 + c.yE, 1.0 + c.n - c.yE)


def desirability_posterior(state: TrialState, dose: int,
                           utilities: UtilityScores) -> BetaParams:
    """Quasi-binomial posterior of the standardized utility rate."""
    c = state.counts_at(dose)
    if c is None:
        return UNIFORM
    x = utilities.utility_successes(c)
    return BetaParams(1.0 + x, 1.0 + c.n - x)


def apply_elimination(state: TrialState, config: DesignConfig) -> TrialState:
    """Run the safety then futility screen at the current dose.

    Safety removals close every higher dose as well; futility removes just the
    dosed level. A dose without data is never screened.
    """
    dose = state.current_dose
    c = state.counts_at(dose)
    if c is None:
        return state
    el = config.elimination
    if beta_tail(UNIFORM, c.yT, c.n, el.phi_T, "above") > el.eta:
        return state.with_elimination(dose, EliminationReason.SAFETY)
    if beta_tail(UNIFORM, c.yE, c.n, el.phi_E, "below") > el.xi:
        return state.with_elimination(dose, EliminationReason.FUTILITY)
    return state


# ---------------------------------------------------------------------------
# Movement resolution


def _nearest(doses, pivot: int, above: bool) -> int | None:
    pool = [x for x in doses if (x > pivot if above else x < pivot)]
    if not pool:
        return None
    return min(pool) if above else max(pool)


def resolve(state: TrialState, raw: str, rationale: str, *,
            leap_up: bool = True) -> Decision:
    """Turn a raw direction into a decision on a live dose.

    Preference order: E tries the nearest open dose above, then the current
    dose, then below; D mirrors that; S starts at the current dose and prefers
    upward rerouting (a dose dropped for futility should not pull the trial
    down a rung). With ``leap_up`` off, escalation never crosses a closed
    dose: an E whose next level is closed holds at the current dose instead.
    Terminates when no dose is open.
    """
    adm = state.active_doses()
    if not adm:
        return Decision.terminate(rationale + "; no dose remains open")
    d = state.current_dose
    up, down = _nearest(adm, d, True), _nearest(adm, d, False)
    if raw == "E" and not leap_up and up is not None and up != d + 1:
        up = None
    here = d if d in adm else None
    order = {"E": (up, here, down), "S": (here, up, down), "D": (down, here, up)}[raw]
    target = next(t for t in order if t is not None)
    naive = min(max({"E": d + 1, "S": d, "D": d - 1}[raw], 1), state.num_doses)
    if target != naive:
        rationale += f"; rerouted to open dose {target}"
    return decision_for_target(state, target, rationale)


def decision_for_target(state: TrialState, target: int, rationale: str) -> Decision:
    d = state.current_dose
    if target == d:
        return Decision.stay(rationale)
    if target == d + 1:
        return Decision.escalate(rationale)
    if target == d - 1:
        return Decision.de_escalate(rationale)
    return Decision.jump_to(target, rationale)


def neighbor_candidates(state: TrialState, include_above: bool = True) -> list:
    """Open doses among {d-1, d, d+1} (optionally without d+1), ascending."""
    d = state.current_dose
    window = (d - 1, d, d + 1) if include_above else (d - 1, d)
    return [x for x in window
            if 1 <= x <= state.num_doses and not state.is_eliminated(x)]


def require_data(state: TrialState) -> OutcomeCounts:
    c = state.counts_at(state.current_dose)
    if c is None:
        raise TrialError(f"current dose {state.current_dose} has no data yet")
    return c


# ---------------------------------------------------------------------------
# Shared estimation helpers


def isotonic_tox(state: TrialState) -> dict:
    """Isotonic toxicity estimates over tried doses, keyed by dose."""
    tried = [d for d in range(1, state.num_doses + 1) if state.tried(d)]
    if not tried:
        return {}
    fit = pava([state.p_hat(d) for d in tried], [state.n_at(d) for d in tried])
    return dict(zip(tried, (float(v) for v in fit)))


def isotonic_closest_dose(doses, ptilde: dict, p_T: float) -> int:
    """The dose whose isotonic toxicity estimate is closest to p_T.

    Ties prefer the highest dose still at or below target, otherwise the
    lowest dose above it.
    """
    best = min(abs(ptilde[d] - p_T) for d in doses)
    tied = [d for d in doses if abs(ptilde[d] - p_T) <= best + TIE_EPS]
    under = [d for d in tied if ptilde[d] <= p_T + TIE_EPS]
    return max(under) if under else min(tied)


def posterior_mean_utility(counts: OutcomeCounts | None,
                           utilities: UtilityScores) -> float:
    """Posterior mean of the standardized utility rate under a uniform prior."""
    if counts is None:
        return 0.5
    x = utilities.utility_successes(counts)
    return (1.0 + x) / (2.0 + counts.n)


def responsive_doses(state: TrialState, config: DesignConfig, doses) -> list:
    """Filter ``doses`` by the final-selection evidence bar.

    Keeps the doses whose accumulated data leave at least ``select_gamma``
    posterior mass (uniform prior) on a response rate above q_E. With the
    bar at zero the list passes through unchanged.
    """
    g = config.select_gamma
    if g <= 0.0:
        return list(doses)
    keep = []
    for d in doses:
        c = state.counts_at(d)
        if c is None:
            continue
        if beta_tail(BetaParams(1.0, 1.0), c.yE, c.n, config.q_E, "above") >= g:
            keep.append(d)
    return keep


def truncated_tox_credit(p: float, p1: float, p2: float) -> float:
    """Selection-utility toxicity factor: 1 below p1, ramp to 0 at p2."""
    if p <= p1:
        return 1.0
    if p >= p2:
        return 0.0
    return 1.0 - (p - p1) / (p2 - p1)


def truncated_eff_credit(q: float, q1: float, q2: float) -> float:
    """Selection-utility efficacy factor: 0 below q1, ramp to 1 at q2."""
    if q <= q1:
        return 0.0
    if q >= q2:
        return 1.0
    return (q - q1) / (q2 - q1)


# ---------------------------------------------------------------------------
# Selection result and the true-probability criterion


@dataclass(frozen=True)
class ObdResult:
    """End-of-trial selection: the chosen dose (or None) plus diagnostics.

    ``diagnostics`` maps a label to a per-dose tuple (None where the quantity
    is undefined, e.g. untried doses).
    """

    dose: int | None
    diagnostics: dict = field(default_factory=dict, compare=False)
    reason: str = ""


def suggested_obd(design, p, q, config: DesignConfig) -> int | None:
    """The design's own best dose judged on true probabilities.

    Only doses with p <= p_T and q >= q_E compete; the design's terminal
    criterion ranks them, ties go to the lowest toxicity. None when no dose
    is admissible.
    """
    design = DesignId(design)
    if design is not config.design:
        raise ConfigError(f"config is for {config.design.value}, not {design.value}")
    if len(p) != len(q):
        raise ConfigError("p and q must have equal length")
    adm = [d for d in range(1, len(p) + 1)
           if p[d - 1] <= config.p_T and q[d - 1] >= config.q_E]
    if not adm:
        return None

    prm = config.params

    def crit(d: int) -> float:
        pd, qd = p[d - 1], q[d - 1]
        if design is DesignId.BOINET:
            return qd
        if design in (DesignId.BOIN12, DesignId.UTPI):
            return config.utilities.expected_utility(pd, qd)
        if design is DesignId.STEIN:
            return qd - prm.w1 * pd - prm.w2 * pd * (pd > config.p_T)
        if design is DesignId.UBI:
            g_e = min(max(qd, prm.g_eff_lo), prm.g_eff_hi)
            g_t = min(max(pd, prm.g_tox_lo), prm.g_tox_hi)
            return g_e - prm.theta * g_t
        return (truncated_tox_credit(pd, prm.p1, prm.p2)
                * truncated_eff_credit(qd, prm.q1, prm.q2))

    best = max(crit(d) for d in adm)
    tied = [d for d in adm if crit(d) >= best - TIE_EPS]
    return min(tied, key=lambda d: (p[d - 1], d))
