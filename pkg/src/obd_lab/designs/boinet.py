"""Interval design driven by both endpoint rates with a four-way boundary.

Escalation compares the observed toxicity rate against (lambda1, lambda2) and
the response rate against eta1; the ambiguous middle cell explores upward
first and otherwise moves to the neighbor with the best observed response.
Selection fits a monotone toxicity curve and a flexible two-power response
curve, then picks the best fitted responder under the toxicity ceiling.
"""
from __future__ import annotations

import numpy as np

from ..core import Decision, TrialState
from ..stats import fp2_fit, pava
from .common import (
    DesignConfig,
    ObdResult,
    decision_for_target,
    isotonic_closest_dose,
    require_data,
    resolve,
    responsive_doses,
)

__all__ = ["decide_boinet", "select_obd_boinet"]


def decide_boinet(state: TrialState, config: DesignConfig,
                  rng: np.random.Generator | None = None) -> Decision:
    """Cohort decision; ``rng`` breaks exact response-rate ties uniformly."""
    c = require_data(state)
    b = config.boundaries
    d = state.current_dose
    p_hat, q_hat = c.yT / c.n, c.yE / c.n

    if p_hat >= b.lambda2:
        return resolve(state, "D", f"toxicity rate {p_hat:.3f} >= {b.lambda2:g}")
    if q_hat > b.eta1:
        return resolve(
            state, "S",
            f"toxicity {p_hat:.3f} under control, response rate {q_hat:.3f} > {b.eta1:g}")
    if p_hat <= b.lambda1:
        return resolve(
            state, "E",
            f"toxicity rate {p_hat:.3f} <= {b.lambda1:g} with response {q_hat:.3f} <= {b.eta1:g}")

    # middle cell: lambda1 < p_hat < lambda2 and modest response
    nxt = d + 1
    if nxt <= state.num_doses and not state.tried(nxt) and not state.is_eliminated(nxt):
        return Decision.escalate(
            f"middle cell ({p_hat:.3f}, {q_hat:.3f}); dose {nxt} is still unexplored")
    cand = [x for x in (d - 1, d, nxt)
            if 1 <= x <= state.num_doses and not state.is_eliminated(x) and state.tried(x)]
    if not cand:
        return resolve(state, "S", "middle cell with no tried open neighbor")
    rates = {x: state.q_hat(x) for x in cand}
    best = max(rates.values())
    tied = [x for x in cand if rates[x] == best]
    if len(tied) > 1:
        if rng is None:
            rng = np.random.default_rng(0)
        target = int(rng.choice(tied))
        note = f"response tie at {best:.3f} among doses {tied}, drew dose {target}"
    else:
        target = tied[0]
        note = f"dose {target} has the best observed response {best:.3f} nearby"
    return decision_for_target(state, target, "middle cell; " + note)


def select_obd_boinet(state: TrialState, config: DesignConfig) -> ObdResult:
    tried = [d for d in range(1, state.num_doses + 1) if state.tried(d)]
    if not tried:
        return ObdResult(None, reason="no dose has data")
    open_tried = [d for d in tried if not state.is_eliminated(d)]
    if not open_tried:
        return ObdResult(None, reason="every explored dose was closed")
    open_tried = responsive_doses(state, config, open_tried)
    if not open_tried:
        return ObdResult(None, reason="no open dose cleared the response evidence bar")
    p_fit = pava([state.p_hat(d) for d in tried], [state.n_at(d) for d in tried])
    ptilde = dict(zip(tried, (float(v) for v in p_fit)))
    diag = {"isotonic_tox": tuple(ptilde.get(d) for d in range(1, state.num_doses + 1))}

    # ceiling at the open dose whose fitted toxicity sits closest to target,
    # so a completed trial always reports a dose
    mtd = isotonic_closest_dose(open_tried, ptilde, config.p_T)
    tolerable = [d for d in open_tried if d <= mtd]

    model = fp2_fit([(state.counts_at(d).yE, state.n_at(d)) if state.tried(d) else (0, 0)
                     for d in range(1, state.num_doses + 1)])
    fitted = dict(zip(tried, (float(v) for v in model.predict(tried))))
    diag["fitted_eff"] = tuple(fitted.get(d) for d in range(1, state.num_doses + 1))
    best = max(fitted[d] for d in tolerable)
    dose = min(d for d in tolerable if fitted[d] >= best - 1e-12)
    return ObdResult(dose, diag,
                     f"dose {dose} maximizes fitted response ({best:.3f}) at or "
                     f"below the toxicity ceiling (dose {mtd})")
