"""Random dose-response scenario generation and outcome sampling.

Builds true (toxicity, efficacy) curves for the four efficacy shapes over a
strictly increasing toxicity curve. With-OBD scenarios follow the per-shape
ordered-uniform recipes; no-OBD scenarios use a split-index construction that
leaves every dose either too toxic or too inactive; align() rejection-samples
until every requested design's own criterion names the designated dose. Also
samples correlated four-outcome cohort data and the retrospective-data
posterior scenarios used for the worked case study.
"""
import csv
import io
import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import OutcomeCounts, SHAPES, Scenario, TrialError
from .designs import DesignId, make_config, suggested_obd
from .designs.common import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CAP = 10_000

# fixed observed rates behind the case-study generator: per-dose sample
# sizes and the reported toxicity/response rates, plus Beta(1,1) priors
CASE_STUDY_N = (3, 6, 9, 3)
CASE_STUDY_P_HAT = (0.0, 0.17, 0.33, 0.67)
CASE_STUDY_Q_HAT = (0.33, 0.75, 0.95, 1.00)


class ScenarioError(TrialError):
    """A rejection-sampling cap was exhausted."""


@dataclass(frozen=True)
class ScenarioSpec:
    """What to generate: shape, dimension, targets, bounds, correlation."""

    shape: str
    D: int
    p_T: float = 0.35
    q_E: float = 0.25
    p_max: float = 0.7
    q_max: float = 0.9
    obd_exists: bool = True
    rho: float = 0.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}, expected one of {SHAPES}")
        if self.D < 1:
            raise ConfigError(f"D={self.D} must be at least 1")
        if self.shape == "U" and self.D < 2:
            raise ConfigError("shape U needs D >= 2 (the peak sits below the top dose)")
        if self.shape == "IP" and self.D < 3:
            raise ConfigError("shape IP needs D >= 3 (the plateau start is interior)")
        if not 0.0 < self.p_T < self.p_max <= 1.0:
            raise ConfigError(f"need 0 < p_T < p_max <= 1, got ({self.p_T}, {self.p_max})")
        if not 0.0 < self.q_E < self.q_max <= 1.0:
            raise ConfigError(f"need 0 < q_E < q_max <= 1, got ({self.q_E}, {self.q_max})")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"correlation {self.rho} outside [0, 1)")


def _rng_for(spec: ScenarioSpec, rng) -> np.random.Generator:
    return np.random.default_rng(spec.seed) if rng is None else rng


def _ascending(rng, lo: float, hi: float, k: int) -> np.ndarray:
    """k ordered Unif(lo, hi) draws, smallest first (order statistics)."""
    return np.sort(rng.uniform(lo, hi, size=k))


def _descending(rng, lo: float, hi: float, k: int) -> np.ndarray:
    return np.sort(rng.uniform(lo, hi, size=k))[::-1]


def qualifying_d_star(shape: str, D: int) -> list:
    """Dose levels that can serve as the designated best dose."""
    if shape == "C":
        return [1]
    if shape == "I":
        return list(range(1, D + 1))
    return list(range(1, D))  # U and IP: the best dose sits below the top


def qualifying_d_high(shape: str, D: int, d_star: int) -> list:
    """Efficacy-curve tops compatible with a given designated dose."""
    if shape == "C":
        return [1]
    if shape == "I":
        return [D]
    if shape == "U":
        return list(range(d_star, D))
    return list(range(max(d_star, 2), D))  # IP plateau start is interior


def _draw_with_obd(spec: ScenarioSpec, rng, d_star: int | None = None) -> Scenario:
    D = spec.D
    if d_star is None:
        d_star = int(rng.choice(qualifying_d_star(spec.shape, D)))
    d_high = int(rng.choice(qualifying_d_high(spec.shape, D, d_star)))
    p_star = rng.uniform(0.0, spec.p_T)
    q_star = rng.uniform(spec.q_E, spec.q_max)
    q_high = q_star if d_high == d_star else rng.uniform(q_star, spec.q_max)

    p = np.empty(D)
    p[:d_star - 1] = _ascending(rng, 0.0, p_star, d_star - 1)
    p[d_star - 1] = p_star
    if spec.shape == "C":
        above_lo = p_star
    elif spec.shape == "I":
        above_lo = spec.p_T
    else:
        above_lo = p_star if d_star == d_high else spec.p_T
    p[d_star:] = _ascending(rng, above_lo, spec.p_max, D - d_star)

    q = np.empty(D)
    q[:d_star - 1] = _ascending(rng, 0.0, q_star, d_star - 1)
    q[d_star - 1] = q_star
    if spec.shape == "C":
        q[:] = q_star
    elif spec.shape == "I":
        if d_star < D:
            q[D - 1] = q_high
            q[d_star:D - 1] = _ascending(rng, q_star, q_high, D - 1 - d_star)
    elif spec.shape == "U":
        if d_star == d_high:
            q[d_star:] = _descending(rng, 0.0, q_star, D - d_star)
        else:
            q[d_star:d_high - 1] = _ascending(rng, q_star, q_high, d_high - 1 - d_star)
            q[d_high - 1] = q_high
            q[d_high:] = _descending(rng, 0.0, q_high, D - d_high)
    else:  # IP
        if d_star == d_high:
            q[d_star:] = q_star
        else:
            q[d_star:d_high - 1] = _ascending(rng, q_star, q_high, d_high - 1 - d_star)
            q[d_high - 1:] = q_high

    return Scenario(p=tuple(float(v) for v in p), q=tuple(float(v) for v in q),
                    shape=spec.shape, true_obd=d_star, d_star=d_star, d_high=d_high)


def gen_with_obd(spec: ScenarioSpec, rng=None, cap: int = DEFAULT_CAP,
                 d_star: int | None = None) -> Scenario:
    """One scenario whose designated dose is safe (p <= p_T) and active (q >= q_E).

    ``d_star`` pins the designated dose; by default it is drawn uniformly
    over the levels the shape allows.
    """
    if not spec.obd_exists:
        raise ConfigError("spec requests no-OBD scenarios; use gen_no_obd")
    if d_star is not None and d_star not in qualifying_d_star(spec.shape, spec.D):
        raise ConfigError(
            f"dose {d_star} cannot be the designated dose of a shape-{spec.shape} curve")
    rng = _rng_for(spec, rng)
    for _ in range(cap):
        try:
            return _draw_with_obd(spec, rng, d_star)
        except TrialError:  # zero-probability ordering tie; redraw
            continue
    raise ScenarioError(f"gen_with_obd exhausted {cap} attempts for {spec}")


# Inactive doses respond at no less than this fraction of q_E: futile but
# not inert, so the futility screen must accumulate real evidence to close
# them rather than winning on a handful of automatic non-responses.
_INACTIVE_Q_LO = 0.35

# When an inactive unimodal or plateau curve peaks inside the tolerable
# range, the peak sits in this fraction-of-q_E band just under the activity
# bar: a near-miss dose, not an obviously dead one.
_INACTIVE_PEAK_LO = 0.8


def _draw_no_obd(spec: ScenarioSpec, rng) -> Scenario:
    D = spec.D
    lo_q = _INACTIVE_Q_LO * spec.q_E
    # split index s: doses 1..s stay inactive (q < q_E), doses s+1..D stay
    # over-toxic (p > p_T); shape C admits only the all-or-nothing splits
    if spec.shape == "C":
        s = int(rng.choice([0, D]))
    else:
        s = int(rng.integers(0, D + 1))
    p = np.concatenate([_ascending(rng, 0.0, spec.p_T, s),
                        _ascending(rng, spec.p_T, spec.p_max, D - s)])

    d_high = None
    if spec.shape == "C":
        top = rng.uniform(lo_q if s == D else 0.0,
                          spec.q_E if s == D else spec.q_max)
        q = np.full(D, top)
        d_high = 1
    elif spec.shape == "I":
        low = _ascending(rng, lo_q, spec.q_E, s)
        anchor = float(low[-1]) if s else 0.0
        q = np.concatenate([low, _ascending(rng, anchor, spec.q_max, D - s)])
        d_high = D
    else:
        peak = int(rng.integers(1 if spec.shape == "U" else 2, D))
        if s >= peak:  # the whole curve sits under q_E
            top = rng.uniform(_INACTIVE_PEAK_LO * spec.q_E, spec.q_E)
            low, anchor = np.empty(0), 0.0
            rise = _ascending(rng, lo_q, top, peak - 1)
        else:
            low = _ascending(rng, lo_q, spec.q_E, s)
            anchor = float(low[-1]) if s else 0.0
            top = rng.uniform(anchor, spec.q_max)
            rise = _ascending(rng, anchor, top, peak - 1 - s)
        if spec.shape == "U":
            tail = _descending(rng, 0.0, top, D - peak)
        else:
            tail = np.full(D - peak, top)
        q = np.concatenate([low, rise, [top], tail])
        d_high = peak
    return Scenario(p=tuple(float(v) for v in p), q=tuple(float(v) for v in q),
                    shape=spec.shape, true_obd=None, d_star=None, d_high=d_high)


@lru_cache(maxsize=32)
def _default_configs(p_T: float, q_E: float) -> tuple:
    return tuple(make_config(d, p_T=p_T, q_E=q_E) for d in DesignId)


def gen_no_obd(spec: ScenarioSpec, rng=None, cap: int = DEFAULT_CAP) -> Scenario:
    """One scenario with no dose both safe and active; every design selects None."""
    if spec.obd_exists:
        raise ConfigError("spec requests with-OBD scenarios; use gen_with_obd")
    rng = _rng_for(spec, rng)
    for _ in range(cap):
        try:
            sc = _draw_no_obd(spec, rng)
        except TrialError:
            continue
        if sc.admissible_doses(spec.p_T, spec.q_E):
            continue
        configs = _default_configs(spec.p_T, spec.q_E)
        if any(suggested_obd(c.design, sc.p, sc.q, c) is not None for c in configs):
            continue
        return sc
    raise ScenarioError(f"gen_no_obd exhausted {cap} attempts for {spec}")


def align(spec: ScenarioSpec, configs, rng=None, cap: int = DEFAULT_CAP):
    """Draw with-OBD scenarios until every config's criterion picks d_star.

    Returns (scenario, attempts). configs is a sequence of DesignConfig; an
    empty sequence accepts the first draw. The designated dose is drawn
    uniformly over the qualifying levels BEFORE the agreement screen and held
    fixed through the redraws, so the screen cannot tilt the ensemble toward
    the levels that agree easily: every qualifying level ends up designated
    equally often.
    """
    rng = _rng_for(spec, rng)
    d_star = int(rng.choice(qualifying_d_star(spec.shape, spec.D)))
    last = None
    for attempt in range(1, cap + 1):
        sc = gen_with_obd(spec, rng, d_star=d_star)
        for config in configs:
            if suggested_obd(config.design, sc.p, sc.q, config) != sc.d_star:
                last = config.design
                break
        else:
            return sc, attempt
    raise ScenarioError(
        f"alignment exhausted {cap} attempts; last rejection by {last.value}")


def sample_outcomes(p: float, q: float, rho: float, n: int, rng) -> OutcomeCounts:
    """n patients at true rates (p, q) with outcome correlation rho.

    The joint toxic-and-effective cell is p*q + rho*sqrt(p(1-p)q(1-q)),
    clamped into the Frechet band [max(0, p+q-1), min(p, q)]; the other three
    cells follow from the margins.
    """
    if not 0.0 <= p <= 1.0 or not 0.0 <= q <= 1.0:
        raise ConfigError(f"rates ({p}, {q}) outside [0,1]")
    if not -1.0 <= rho <= 1.0:
        raise ConfigError(f"correlation {rho} outside [-1, 1]")
    if n < 0:
        raise ConfigError(f"negative cohort size {n}")
    lo, hi = max(0.0, p + q - 1.0), min(p, q)
    pi3 = p * q + rho * math.sqrt(p * (1.0 - p) * q * (1.0 - q))
    clamped = min(max(pi3, lo), hi)
    if clamped != pi3:
        logger.debug("joint cell %.6f clamped to Frechet band [%.6f, %.6f]",
                     pi3, lo, hi)
    cells = np.array([q - clamped, 1.0 - p - q + clamped, clamped, p - clamped])
    cells = np.clip(cells, 0.0, None)
    y = rng.multinomial(n, cells / cells.sum())
    return OutcomeCounts(int(y[0]), int(y[1]), int(y[2]), int(y[3]))


def gen_case_study(shape: str, true_obd: int, rng,
                   cap: int = DEFAULT_CAP) -> Scenario:
    """Posterior draw around the fixed observed rates, aligned to true_obd.

    Toxicity and response rates per dose are drawn from Beta(1 + n*rate,
    1 + n*(1-rate)) posteriors of the observed data, with no p_max/q_max
    truncation. Draws are rejected until toxicity increases strictly, efficacy
    matches the requested shape (IP forces q_4 = q_3), and true_obd is the
    suggested dose for all seven designs at p_T=0.35, q_E=0.25.
    """
    if shape not in ("I", "IP"):
        raise ConfigError(f"case-study shape must be I or IP, got {shape!r}")
    if true_obd not in (2, 3):
        raise ConfigError(f"case-study OBD must be dose 2 or 3, got {true_obd}")
    a_t = np.array([1.0 + n * r for n, r in zip(CASE_STUDY_N, CASE_STUDY_P_HAT)])
    b_t = np.array([1.0 + n * (1.0 - r) for n, r in zip(CASE_STUDY_N, CASE_STUDY_P_HAT)])
    a_e = np.array([1.0 + n * r for n, r in zip(CASE_STUDY_N, CASE_STUDY_Q_HAT)])
    b_e = np.array([1.0 + n * (1.0 - r) for n, r in zip(CASE_STUDY_N, CASE_STUDY_Q_HAT)])
    configs = _default_configs(0.35, 0.25)
    for _ in range(cap):
        p = rng.beta(a_t, b_t)
        q = rng.beta(a_e, b_e)
        if shape == "IP":
            q[3] = q[2]
        if not all(a < b for a, b in zip(p, p[1:])):
            continue
        rising = q if shape == "I" else q[:3]
        if not all(a < b for a, b in zip(rising, rising[1:])):
            continue
        if p[true_obd - 1] > 0.35 or q[true_obd - 1] < 0.25:
            continue
        pt, qt = tuple(float(v) for v in p), tuple(float(v) for v in q)
        if any(suggested_obd(c.design, pt, qt, c) != true_obd for c in configs):
            continue
        return Scenario(p=pt, q=qt, shape=shape, true_obd=true_obd,
                        d_star=true_obd, d_high=4 if shape == "I" else 3)
    raise ScenarioError(f"case-study generation exhausted {cap} attempts "
                        f"(shape {shape}, OBD {true_obd})")


# ---------------------------------------------------------------------------
# CSV import/export


def scenarios_to_csv(scenarios) -> str:
    """One row per scenario: shape, d_star, d_high, p_1..p_D, q_1..q_D."""
    scenarios = list(scenarios)
    if not scenarios:
        raise ConfigError("no scenarios to serialize")
    D = scenarios[0].num_doses
    if any(sc.num_doses != D for sc in scenarios):
        raise ConfigError("scenarios differ in dose count")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["shape", "d_star", "d_high"]
                    + [f"p_{d}" for d in range(1, D + 1)]
                    + [f"q_{d}" for d in range(1, D + 1)])
    for sc in scenarios:
        writer.writerow([sc.shape,
                         "" if sc.d_star is None else sc.d_star,
                         "" if sc.d_high is None else sc.d_high,
                         *(repr(v) for v in sc.p), *(repr(v) for v in sc.q)])
    return buf.getvalue()


def scenarios_from_csv(text: str) -> list:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if len(rows) < 2:
        raise ConfigError("scenario CSV needs a header and at least one row")
    header = rows[0]
    if len(header) < 5 or header[:3] != ["shape", "d_star", "d_high"] \
            or (len(header) - 3) % 2:
        raise ConfigError(f"unrecognized scenario CSV header {header}")
    D = (len(header) - 3) // 2
    expected = [f"p_{d}" for d in range(1, D + 1)] + [f"q_{d}" for d in range(1, D + 1)]
    if header[3:] != expected:
        raise ConfigError(f"unrecognized scenario CSV header {header}")
    out = []
    for row in rows[1:]:
        if len(row) != len(header):
            raise ConfigError(f"scenario row has {len(row)} fields, expected {len(header)}")
        shape = row[0]
        d_star = int(row[1]) if row[1] else None
        d_high = int(row[2]) if row[2] else None
        p = tuple(float(v) for v in row[3:3 + D])
        q = tuple(float(v) for v in row[3 + D:])
        out.append(Scenario(p=p, q=q, shape=shape, true_obd=d_star,
                            d_star=d_star, d_high=d_high))
    return out
