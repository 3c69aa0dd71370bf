"""Utility-balancing interval design.

Each cohort scores the current dose with U = f_E - theta * f_T, where f_E
keeps the observed response rate unless it clears theta_eff (good response
buys escalation headroom) and f_T grades the toxicity rate through the
interval cutoffs. U >= 0 escalates, U < -1/3 de-escalates, the band between
stays. Selection reuses the truncated utility on isotonic toxicity.
"""
from __future__ import annotations

from ..core import Decision, TrialState
from .common import (
    DesignConfig,
    ObdResult,
    isotonic_tox,
    require_data,
    resolve,
    responsive_doses,
)

__all__ = ["decide_ubi", "select_obd_ubi"]


def _escalation_utility(p_hat: float, q_hat: float, config: DesignConfig) -> float:
    prm = config.params
    b = config.boundaries
    f_e = 0.0 if q_hat > prm.theta_eff else q_hat
    if p_hat <= prm.theta_tox:
        f_t = 0.0
    elif p_hat >= b.lambda_d:
        f_t = 1.0
    elif q_hat > prm.theta_eff:
        f_t = p_hat / 3.0
    elif p_hat <= b.lambda_e:
        f_t = 0.0
    else:
        f_t = p_hat
    return f_e - prm.theta * f_t


def decide_ubi(state: TrialState, config: DesignConfig) -> Decision:
    c = require_data(state)
    p_hat, q_hat = c.yT / c.n, c.yE / c.n
    u = _escalation_utility(p_hat, q_hat, config)
    note = f"balance score {u:.3f} at rates ({p_hat:.3f}, {q_hat:.3f})"
    if u >= 0.0:
        return resolve(state, "E", note + " favors escalation",
                       leap_up=config.relocation == "up")
    if u < -1.0 / 3.0:
        return resolve(state, "D", note + " favors de-escalation")
    return resolve(state, "S", note + " is in the holding band")


def select_obd_ubi(state: TrialState, config: DesignConfig) -> ObdResult:
    open_tried = state.tried_active_doses()
    if not open_tried:
        return ObdResult(None, reason="no open dose has data")
    open_tried = responsive_doses(state, config, open_tried)
    if not open_tried:
        return ObdResult(None, reason="no open dose cleared the response evidence bar")
    prm = config.params
    ptilde = isotonic_tox(state)
    util = {}
    for d in open_tried:
        g_e = min(max(state.q_hat(d), prm.g_eff_lo), prm.g_eff_hi)
        g_t = min(max(ptilde[d], prm.g_tox_lo), prm.g_tox_hi)
        util[d] = g_e - prm.theta * g_t
    diag = {
        "isotonic_tox": tuple(ptilde.get(d) for d in range(1, state.num_doses + 1)),
        "utility": tuple(util.get(d) for d in range(1, state.num_doses + 1)),
    }
    best = max(util.values())
    dose = min(d for d in open_tried if util[d] >= best - 1e-12)
    return ObdResult(dose, diag, f"dose {dose} maximizes the truncated utility ({best:.3f})")
