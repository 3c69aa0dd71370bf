"""Trial simulation engine: single runs, replication batches, and the seven
operating characteristics.

A batch pits several designs against a shared stream of random truths: in
replication r every design faces the same scenario, but each design's trial
consumes its own outcome stream. All randomness is keyed by
(master_seed, replication, stream), so batch results are bitwise identical
for any parallelism degree, and a design's results do not change when other
designs are added to or dropped from the batch.

Aggregation keeps exact integer tallies (counts, patient sums, sums of
squares), so pooled partial batches reproduce the full-batch metrics to the
last bit regardless of how replications were partitioned.
"""
from __future__ import annotations

import enum
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    Decision,
    DecisionKind,
    Scenario,
    TrialError,
    TrialPlan,
    TrialState,
    record_cohort,
)
from .designs import (
    DesignConfig,
    DesignId,
    ObdResult,
    apply_elimination,
    decide,
    select_obd,
)
from .scenario import (
    ScenarioSpec,
    _default_configs,
    align,
    gen_no_obd,
    sample_outcomes,
)

__all__ = [
    "EngineError",
    "StopReason",
    "CohortRecord",
    "TrialRecord",
    "MetricValue",
    "OCMetrics",
    "BatchResult",
    "run_trial",
    "run_batch",
    "compute_metrics",
    "metrics_to_csv",
    "format_metrics_table",
    "METRICS_CSV_COLUMNS",
]


class EngineError(TrialError):
    """A simulation run or metric aggregation was mis-specified."""


class StopReason(str, enum.Enum):
    COMPLETED = "completed"
    ALL_ELIMINATED = "all-doses-eliminated"
    NO_ASSIGNABLE_DOSE = "no-assignable-dose"


@dataclass(frozen=True)
class CohortRecord:
    """One treated cohort: where it was dosed, what happened, what came next.

    ``decision`` is None only for the final cohort of a trial that ran its
    full plan; there was no next cohort to place.
    """

    index: int
    dose: int
    outcomes: object  # OutcomeCounts
    decision: Decision | None


@dataclass(frozen=True)
class TrialRecord:
    """Full audit of one simulated trial."""

    design: DesignId
    plan: TrialPlan
    cohorts: tuple  # tuple[CohortRecord, ...]
    dose_patients: tuple  # tuple[int, ...], final n_d per dose
    eliminations: tuple  # tuple[EliminationReason | None, ...] per dose
    result: ObdResult
    stop_reason: StopReason

    def __post_init__(self) -> None:
        if len(self.cohorts) > self.plan.max_cohorts:
            raise EngineError(
                f"log has {len(self.cohorts)} cohorts, plan allows "
                f"{self.plan.max_cohorts}")
        if len(self.dose_patients) != self.plan.num_doses:
            raise EngineError(
                f"allocation covers {len(self.dose_patients)} doses, plan has "
                f"{self.plan.num_doses}")
        if len(self.eliminations) != self.plan.num_doses:
            raise EngineError(
                f"elimination flags cover {len(self.eliminations)} doses, "
                f"plan has {self.plan.num_doses}")
        tally = [0] * self.plan.num_doses
        for c in self.cohorts:
            tally[c.dose - 1] += c.outcomes.n
        if tuple(tally) != tuple(self.dose_patients):
            raise EngineError("final allocation inconsistent with cohort log")

    @property
    def selected(self) -> int | None:
        return self.result.dose

    @property
    def total_patients(self) -> int:
        return sum(self.dose_patients)

    def patients_at(self, dose: int) -> int:
        if not 1 <= dose <= self.plan.num_doses:
            raise EngineError(f"dose {dose} outside 1..{self.plan.num_doses}")
        return self.dose_patients[dose - 1]


def _movement_target(state: TrialState, decision: Decision) -> int:
    d = state.current_dose
    if decision.kind is DecisionKind.ESCALATE:
        return d + 1
    if decision.kind is DecisionKind.STAY:
        return d
    if decision.kind is DecisionKind.DE_ESCALATE:
        return d - 1
    return decision.target  # JUMP_TO


def run_trial(scenario: Scenario, config: DesignConfig, plan: TrialPlan,
              rng: np.random.Generator, *, rho: float = 0.0) -> TrialRecord:
    """Simulate one trial of ``config``'s design against a fixed truth.

    Each cohort is sampled at the current dose, folded into the state, and
    screened for elimination; the design then places the next cohort. When
    the plan's cohort budget is spent the design's selector names an OBD;
    if every dose is eliminated first, the trial stops with no selection.

    When the screen closes the dose just treated, the config's closure
    conventions apply before the next decision: with ``floor_stop`` the
    trial ends (again with no selection) if every lower dose is closed too;
    otherwise relocation "down" restarts it at the nearest open lower dose
    (falling back to the nearest open higher one) while "up" leaves the
    rule to reroute.

    ``rng`` drives outcome sampling and any design-internal randomness
    (tie-breaks, posterior sampling at selection), so a (scenario, config,
    plan, seed) quadruple fully determines the record.
    """
    if len(scenario.p) != plan.num_doses:
        raise EngineError(
            f"scenario has {len(scenario.p)} doses, plan says {plan.num_doses}")
    state = TrialState.new(plan)
    log = []
    while True:
        dose = state.current_dose
        outcomes = sample_outcomes(scenario.p[dose - 1], scenario.q[dose - 1],
                                   rho, plan.cohort_size, rng)
        state = record_cohort(state, dose, outcomes)
        state = apply_elimination(state, config)
        k = state.cohorts_used
        if not state.active_doses():
            log.append(CohortRecord(k, dose, outcomes,
                                    Decision.terminate("no dose remains open")))
            result = ObdResult(None, reason="all doses eliminated")
            reason = StopReason.ALL_ELIMINATED
            break
        if state.exhausted:
            log.append(CohortRecord(k, dose, outcomes, None))
            result = select_obd(state, config, rng)
            reason = StopReason.COMPLETED
            break
        moved = None
        if state.is_eliminated(dose):
            lower = [x for x in state.active_doses() if x < dose]
            if not lower and config.floor_stop:
                why = "dosed level closed with no open dose below"
                log.append(CohortRecord(k, dose, outcomes, Decision.terminate(why)))
                result = ObdResult(None, reason=why)
                reason = StopReason.NO_ASSIGNABLE_DOSE
                break
            if config.relocation == "down":
                moved = max(lower) if lower else min(
                    x for x in state.active_doses() if x > dose)
                state = state.with_current_dose(moved)
        if moved is not None and state.counts_at(moved) is None:
            # no data for the rule to act on yet; dose the relocated level
            decision = Decision.stay("treating the relocated dose first")
        else:
            decision = decide(state, config, rng)
        if moved is not None:
            decision = replace(
                decision,
                rationale=f"dose {dose} closed, resumed at {moved}; "
                          + decision.rationale)
        log.append(CohortRecord(k, dose, outcomes, decision))
        if decision.kind is DecisionKind.TERMINATE_NO_DOSE:
            # decide() only terminates with no dose open; kept as a hard stop
            result = ObdResult(None, reason=decision.rationale)
            reason = StopReason.ALL_ELIMINATED
            break
        state = state.with_current_dose(_movement_target(state, decision))
    dose_patients = tuple(0 if c is None else c.n for c in state.counts)
    return TrialRecord(config.design, plan, tuple(log), dose_patients,
                       state.eliminated, result, reason)


# ---------------------------------------------------------------------------
# Operating characteristics


KIND_OBD = "obd"
KIND_NO_OBD = "no-obd"


@dataclass(frozen=True)
class MetricValue:
    """A Monte Carlo estimate with its standard error."""

    value: float
    se: float


@dataclass(frozen=True)
class OCMetrics:
    """The seven operating characteristics of one (design, batch) cell.

    A batch where the truth has an OBD fills p_obd (percent of trials
    selecting it), n_obd (mean patients at it), n_over (mean patients at
    doses with true toxicity above p_T + 0.1) and p_poor (percent of trials
    giving the OBD under 20% of the planned sample). A batch whose truth
    admits no dose fills p_no (percent selecting nothing), n_no_over and
    n_no (mean treated). Percentages are on a 0..100 scale.
    """

    kind: str
    replications: int
    p_obd: MetricValue | None = None
    n_obd: MetricValue | None = None
    n_over: MetricValue | None = None
    p_poor: MetricValue | None = None
    p_no: MetricValue | None = None
    n_no_over: MetricValue | None = None
    n_no: MetricValue | None = None

    def __post_init__(self) -> None:
        if self.kind not in (KIND_OBD, KIND_NO_OBD):
            raise EngineError(f"unknown batch kind {self.kind!r}")
        if self.replications < 1:
            raise EngineError("metrics need at least one replication")
        for name in ("p_obd", "p_poor", "p_no"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v.value <= 100.0:
                raise EngineError(f"{name} outside 0..100: {v.value}")
        for name in ("n_obd", "n_over", "n_no_over", "n_no"):
            v = getattr(self, name)
            if v is not None and v.value < 0.0:
                raise EngineError(f"{name} negative: {v.value}")


def _pct(count: int, r: int) -> MetricValue:
    p = count / r
    return MetricValue(100.0 * p, 100.0 * math.sqrt(p * (1.0 - p) / r))

def _avg(total: int, total_sq: int, r: int) -> MetricValue:
    mean = total / r
    if r < 2:
        return MetricValue(mean, 0.0)
    num = r * total_sq - total * total  # exact in int arithmetic
    return MetricValue(mean, math.sqrt(num / (r - 1)) / r)


class _Tally:
    """Exact integer accumulators for one design; merging is associative."""

    __slots__ = ("kind", "r", "sel", "poor", "none_sel",
                 "s_obd", "ss_obd", "s_over", "ss_over", "s_tot", "ss_tot")

    def __init__(self, kind: str):
        self.kind = kind
        self.r = self.sel = self.poor = self.none_sel = 0
        self.s_obd = self.ss_obd = 0
        self.s_over = self.ss_over = 0
        self.s_tot = self.ss_tot = 0

    def add(self, record: TrialRecord, scenario: Scenario, p_T: float,
            margin: float = 0.1) -> None:
        kind = KIND_OBD if scenario.true_obd is not None else KIND_NO_OBD
        if kind != self.kind:
            raise EngineError(
                "cannot mix OBD-exists and no-OBD replications in one aggregate")
        if len(scenario.p) != record.plan.num_doses:
            raise EngineError(
                f"scenario has {len(scenario.p)} doses, record has "
                f"{record.plan.num_doses}")
        n_over = sum(record.patients_at(d)
                     for d in scenario.overdose_levels(p_T, margin))
        self.r += 1
        self.s_over += n_over
        self.ss_over += n_over * n_over
        if kind == KIND_OBD:
            n_obd = record.patients_at(scenario.true_obd)
            self.sel += record.selected == scenario.true_obd
            self.poor += n_obd < 0.2 * record.plan.max_patients
            self.s_obd += n_obd
            self.ss_obd += n_obd * n_obd
        else:
            self.none_sel += record.selected is None
            t = record.total_patients
            self.s_tot += t
            self.ss_tot += t * t

    def merge(self, other: "_Tally") -> None:
        if other.kind != self.kind:
            raise EngineError(
                "cannot mix OBD-exists and no-OBD replications in one aggregate")
        for name in self.__slots__[1:]:
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def metrics(self) -> OCMetrics:
        if self.r < 1:
            raise EngineError("metrics need at least one replication")
        if self.kind == KIND_OBD:
            return OCMetrics(
                kind=self.kind, replications=self.r,
                p_obd=_pct(self.sel, self.r),
                n_obd=_avg(self.s_obd, self.ss_obd, self.r),
                n_over=_avg(self.s_over, self.ss_over, self.r),
                p_poor=_pct(self.poor, self.r),
            )
        return OCMetrics(
            kind=self.kind, replications=self.r,
            p_no=_pct(self.none_sel, self.r),
            n_no_over=_avg(self.s_over, self.ss_over, self.r),
            n_no=_avg(self.s_tot, self.ss_tot, self.r),
        )


def compute_metrics(records, scenarios, p_T: float = 0.35, *,
                    overdose_margin: float = 0.1) -> OCMetrics:
    """Aggregate paired (record, scenario) replications into one OCMetrics.

    The batch kind is read off the scenarios: truths with an OBD yield the
    four OBD-exists metrics, truths without one the three no-OBD metrics.
    Mixing the two kinds in one call is rejected.
    """
    records, scenarios = list(records), list(scenarios)
    if not records:
        raise EngineError("no replications to aggregate")
    if len(records) != len(scenarios):
        raise EngineError(
            f"{len(records)} records paired with {len(scenarios)} scenarios")
    kind = KIND_OBD if scenarios[0].true_obd is not None else KIND_NO_OBD
    tally = _Tally(kind)
    for rec, scn in zip(records, scenarios):
        tally.add(rec, scn, p_T, overdose_margin)
    return tally.metrics()


# ---------------------------------------------------------------------------
# Replication batches


@dataclass(frozen=True)
class BatchResult:
    """Per-design operating characteristics for one batch of replications."""

    shape: str
    kind: str
    replications: int
    plan: TrialPlan
    metrics: dict  # DesignId -> OCMetrics, in configs order
    records: dict | None = None  # DesignId -> tuple[TrialRecord, ...]
    scenarios: tuple | None = None  # tuple[Scenario, ...]


# Stable per-design stream keys: independent of batch composition, so a
# design's trials reproduce whether it runs alone or alongside others.
_DESIGN_STREAM = {design: i for i, design in enumerate(DesignId)}


def _stream(master_seed: int, replication: int, key: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((master_seed, replication, key)))


def _draw_scenario(source, replication: int, master_seed: int,
                   align_configs) -> Scenario:
    if isinstance(source, Scenario):
        return source
    rng = _stream(master_seed, replication, 0)
    if isinstance(source, ScenarioSpec):
        if source.obd_exists:
            return align(source, align_configs, rng)[0]
        return gen_no_obd(source, rng)
    return source(rng)


def _run_slice(source, configs, plan, lo, hi, master_seed, rho, p_T,
               overdose_margin, align_configs, keep_records):
    tallies = {}
    records = {cfg.design: [] for cfg in configs} if keep_records else None
    scenarios = [] if keep_records else None
    shapes = set()
    for r in range(lo, hi):
        scn = _draw_scenario(source, r, master_seed, align_configs)
        if len(scn.p) != plan.num_doses:
            raise EngineError(
                f"scenario has {len(scn.p)} doses, plan says {plan.num_doses}")
        shapes.add(scn.shape)
        kind = KIND_OBD if scn.true_obd is not None else KIND_NO_OBD
        for cfg in configs:
            rng = _stream(master_seed, r, 1 + _DESIGN_STREAM[cfg.design])
            rec = run_trial(scn, cfg, plan, rng, rho=rho)
            tallies.setdefault(cfg.design, _Tally(kind)).add(
                rec, scn, p_T, overdose_margin)
            if keep_records:
                records[cfg.design].append(rec)
        if keep_records:
            scenarios.append(scn)
    return tallies, records, scenarios, shapes


def run_batch(source, configs, replications: int, master_seed: int, *,
              plan: TrialPlan | None = None, rho: float = 0.0,
              threads: int = 1, keep_records: bool = False,
              p_T: float | None = None, overdose_margin: float = 0.1,
              align_configs=None) -> BatchResult:
    """Run ``replications`` trials of every design against shared truths.

    ``source`` names the truth per replication: a ScenarioSpec draws a fresh
    scenario each time (aligned across all designs when the spec has an OBD,
    inadmissible everywhere when it does not), a Scenario is reused as a
    fixed truth, and a callable ``f(rng) -> Scenario`` supplies anything
    else. With a callable source ``plan`` is required; otherwise it defaults
    to the source's dose count with the standard cohort schedule.

    ``threads`` is a parallelism hint only: results are bitwise identical
    for every value, because each replication derives all randomness from
    (master_seed, replication) and aggregation is exact integer arithmetic.

    ``p_T`` sets the overdose line for the metrics; it defaults to the
    configs' shared target and must be passed explicitly if they disagree.
    Raw per-trial records are discarded unless ``keep_records`` is set, to
    bound memory on large batches.
    """
    configs = list(configs)
    if not configs:
        raise EngineError("run_batch needs at least one design config")
    seen = set()
    for cfg in configs:
        if cfg.design in seen:
            raise EngineError(f"duplicate design in batch: {cfg.design.value}")
        seen.add(cfg.design)
    if replications < 1:
        raise EngineError(f"replications must be >= 1, got {replications}")
    if threads < 1:
        raise EngineError(f"threads must be >= 1, got {threads}")
    if plan is None:
        if isinstance(source, ScenarioSpec):
            plan = TrialPlan(num_doses=source.D)
        elif isinstance(source, Scenario):
            plan = TrialPlan(num_doses=len(source.p))
        else:
            raise EngineError("a callable scenario source needs an explicit plan")
    if p_T is None:
        targets = {cfg.p_T for cfg in configs}
        if len(targets) > 1:
            raise EngineError(
                "configs disagree on p_T; pass the overdose line explicitly")
        (p_T,) = targets
    if align_configs is None and isinstance(source, ScenarioSpec) and source.obd_exists:
        align_configs = _default_configs(source.p_T, source.q_E)

    threads = min(threads, replications)
    bounds = [(i * replications // threads, (i + 1) * replications // threads)
              for i in range(threads)]
    args = (source, configs, plan)
    kwargs = (master_seed, rho, p_T, overdose_margin, align_configs, keep_records)
    if threads == 1:
        parts = [_run_slice(*args, 0, replications, *kwargs)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_slice, *args, lo, hi, *kwargs)
                       for lo, hi in bounds]
            parts = [f.result() for f in futures]

    tallies, records, scenarios, shapes = parts[0]
    for part in parts[1:]:
        for design, tally in part[0].items():
            tallies[design].merge(tally)
        if keep_records:
            for design in records:
                records[design].extend(part[1][design])
            scenarios.extend(part[2])
        shapes |= part[3]
    if len(shapes) != 1:
        raise EngineError(f"scenario stream mixes shapes: {sorted(shapes)}")
    kind = next(iter(tallies.values())).kind
    metrics = {cfg.design: tallies[cfg.design].metrics() for cfg in configs}
    return BatchResult(
        shape=shapes.pop(), kind=kind, replications=replications, plan=plan,
        metrics=metrics,
        records={d: tuple(rs) for d, rs in records.items()} if keep_records else None,
        scenarios=tuple(scenarios) if keep_records else None,
    )


# ---------------------------------------------------------------------------
# Emission: CSV rows and console tables


METRICS_CSV_COLUMNS = (
    "design", "shape", "kind", "replications",
    "p_obd", "p_obd_se", "n_obd", "n_obd_se", "n_over", "n_over_se",
    "p_poor", "p_poor_se", "p_no", "p_no_se", "n_no_over", "n_no_over_se",
    "n_no", "n_no_se",
)

_METRIC_FIELDS = ("p_obd", "n_obd", "n_over", "p_poor", "p_no", "n_no_over", "n_no")


def metrics_to_csv(results) -> str:
    """CSV with one row per design per batch; off-kind metric cells are empty."""
    lines = [",".join(METRICS_CSV_COLUMNS)]
    for res in results:
        for design, oc in res.metrics.items():
            row = [design.value, res.shape, res.kind, str(oc.replications)]
            for name in _METRIC_FIELDS:
                v = getattr(oc, name)
                row += ["", ""] if v is None else [repr(v.value), repr(v.se)]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _fmt_cell(metric: MetricValue | None) -> str:
    return "-" if metric is None else f"{metric.value:.2f}"


def format_metrics_table(results) -> str:
    """Console tables, one block per shape: designs as rows, the four
    OBD-exists columns then the three no-OBD columns."""
    blocks: dict[str, dict[str, BatchResult]] = {}
    for res in results:
        blocks.setdefault(res.shape, {})[res.kind] = res
    out = io.StringIO()
    headers = ("p_OBD", "n_OBD", "n_over", "p_poor", "p_no", "n_no_over", "n_no")
    for shape, by_kind in blocks.items():
        reps = [f"{kind} R={res.replications}" for kind, res in by_kind.items()]
        out.write(f"shape {shape}  ({', '.join(reps)})\n")
        out.write("design".ljust(8) + "".join(h.rjust(11) for h in headers) + "\n")
        designs: list[DesignId] = []
        for res in by_kind.values():
            designs += [d for d in res.metrics if d not in designs]
        for design in designs:
            cells = []
            for kind, names in ((KIND_OBD, _METRIC_FIELDS[:4]),
                                (KIND_NO_OBD, _METRIC_FIELDS[4:])):
                res = by_kind.get(kind)
                oc = res.metrics.get(design) if res is not None else None
                cells += [_fmt_cell(None if oc is None else getattr(oc, name))
                          for name in names]
            out.write(design.value.ljust(8) + "".join(c.rjust(11) for c in cells) + "\n")
        out.write("\n")
    return out.getvalue()
