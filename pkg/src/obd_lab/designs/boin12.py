"""Utility-ranked interval design.

Toxicity gates the candidate window (drop the upward option once the rate
crosses lambda_e with six patients, de-escalate outright past lambda_d) and a
rank-based desirability score, the posterior probability that the standardized
utility rate beats the benchmark u_b, orders the remaining neighbors. A safe
dose with nine patients forces one exploratory escalation to an untried level.
"""
from __future__ import annotations

from ..core import Decision, OutcomeCounts, TrialState
from ..stats import rds_rank
from .common import (
    DesignConfig,
    ObdResult,
    decision_for_target,
    isotonic_closest_dose,
    isotonic_tox,
    neighbor_candidates,
    posterior_mean_utility,
    require_data,
    resolve,
    responsive_doses,
)

__all__ = ["decide_boin12", "select_obd_boin12"]


def decide_boin12(state: TrialState, config: DesignConfig) -> Decision:
    c = require_data(state)
    b = config.boundaries
    d = state.current_dose
    p_hat = c.yT / c.n

    nxt = d + 1
    if (p_hat < b.lambda_d and c.n >= 9 and nxt <= state.num_doses
            and not state.tried(nxt) and not state.is_eliminated(nxt)):
        return Decision.escalate(
            f"dose {d} is safe with {c.n} patients; exploring untried dose {nxt}")
    if p_hat >= b.lambda_d:
        return resolve(state, "D", f"toxicity rate {p_hat:.3f} >= {b.lambda_d:g}")

    drop_above = b.lambda_e < p_hat and c.n >= 6
    cand = neighbor_candidates(state, include_above=not drop_above)
    if not cand:
        return resolve(state, "S", "no open dose in the neighbor window")
    prm = config.params
    ranked = rds_rank([(state.counts_at(x) or OutcomeCounts(), config.utilities)
                       for x in cand], prm.rds_prior, prm.u_b)
    target = cand[ranked[0][0]]
    return decision_for_target(
        state, target,
        f"dose {target} tops the desirability ranking "
        f"({', '.join(f'{cand[i]}:{s:.3f}' for i, s in ranked)})")


def select_obd_boin12(state: TrialState, config: DesignConfig) -> ObdResult:
    open_tried = state.tried_active_doses()
    if not open_tried:
        return ObdResult(None, reason="no open dose has data")
    open_tried = responsive_doses(state, config, open_tried)
    if not open_tried:
        return ObdResult(None, reason="no open dose cleared the response evidence bar")
    ptilde = isotonic_tox(state)
    mtd = isotonic_closest_dose(open_tried, ptilde, config.p_T)
    cands = [d for d in open_tried if d <= mtd]
    util = {d: posterior_mean_utility(state.counts_at(d), config.utilities)
            for d in cands}
    diag = {
        "isotonic_tox": tuple(ptilde.get(d) for d in range(1, state.num_doses + 1)),
        "posterior_utility": tuple(util.get(d) for d in range(1, state.num_doses + 1)),
    }
    best = max(util.values())
    dose = min(d for d in cands if util[d] >= best - 1e-12)
    return ObdResult(dose, diag,
                     f"dose {dose} has the best posterior mean utility "
                     f"({best:.3f}) among doses at or below the toxicity pick (dose {mtd})")
