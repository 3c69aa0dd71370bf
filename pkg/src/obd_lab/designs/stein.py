"""Two-stage interval design with model-averaged efficacy.

Toxicity is screened first: a rate at or past psi_U forces de-escalation (the
source write-up prints this branch with the direction reversed; escalating at
high toxicity contradicts the boundary's own derivation, so the safe direction
is used here). At low toxicity a response rate at or past the cutoff psi
holds the dose. Otherwise the neighbor window, trimmed to {d-1, d} once
toxicity reaches psi_L, is ranked by Pr(q > psi); unresolved ties hold the
dose. Selection
scores doses by model-averaged response minus weighted isotonic toxicity.
"""
from __future__ import annotations

from ..core import Decision, TrialState
from ..stats import beta_tail, unimodal_average
from .common import (
    UNIFORM,
    DesignConfig,
    ObdResult,
    decision_for_target,
    isotonic_tox,
    neighbor_candidates,
    require_data,
    resolve,
    responsive_doses,
)

__all__ = ["decide_stein", "select_obd_stein"]

TIE_EPS = 1e-12


def decide_stein(state: TrialState, config: DesignConfig) -> Decision:
    c = require_data(state)
    b = config.boundaries
    prm = config.params
    p_hat, q_hat = c.yT / c.n, c.yE / c.n

    if p_hat >= b.lambda_d:
        return resolve(state, "D", f"toxicity rate {p_hat:.3f} >= {b.lambda_d:g}")
    if p_hat < b.lambda_e and q_hat >= prm.psi:
        return resolve(state, "S",
                       f"response rate {q_hat:.3f} >= {prm.psi:g} at low toxicity")
    cand = neighbor_candidates(state, include_above=p_hat <= b.lambda_e)
    if not cand:
        return resolve(state, "S", "no open dose in the neighbor window")
    scores = {}
    for x in cand:
        cc = state.counts_at(x)
        if cc is None:
            scores[x] = 1.0 - prm.psi
        else:
            scores[x] = beta_tail(UNIFORM, cc.yE, cc.n, prm.psi, "above")
    best = max(scores.values())
    tied = [x for x in cand if scores[x] >= best - TIE_EPS]
    if len(tied) > 1:
        return resolve(state, "S",
                       f"doses {tied} tie on Pr(response rate > {prm.psi:g}) = {best:.3f}")
    return decision_for_target(
        state, tied[0],
        f"dose {tied[0]} maximizes Pr(response rate > {prm.psi:g}) = {best:.3f}")


def select_obd_stein(state: TrialState, config: DesignConfig) -> ObdResult:
    open_tried = state.tried_active_doses()
    if not open_tried:
        return ObdResult(None, reason="no open dose has data")
    open_tried = responsive_doses(state, config, open_tried)
    if not open_tried:
        return ObdResult(None, reason="no open dose cleared the response evidence bar")
    prm = config.params
    ptilde = isotonic_tox(state)
    qtilde = unimodal_average(
        [(state.counts_at(d).yE, state.n_at(d)) if state.tried(d) else (0, 0)
         for d in range(1, state.num_doses + 1)])
    util = {}
    for d in open_tried:
        p = ptilde[d]
        util[d] = float(qtilde[d - 1]) - prm.w1 * p - prm.w2 * p * (p > config.p_T)
    diag = {
        "isotonic_tox": tuple(ptilde.get(d) for d in range(1, state.num_doses + 1)),
        "averaged_eff": tuple(float(v) for v in qtilde),
        "utility": tuple(util.get(d) for d in range(1, state.num_doses + 1)),
    }
    best = max(util.values())
    dose = min(d for d in open_tried if util[d] >= best - TIE_EPS)
    return ObdResult(dose, diag,
                     f"dose {dose} maximizes averaged response minus weighted "
                     f"toxicity ({best:.3f})")
