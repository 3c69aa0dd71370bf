"""Chessboard design over toxicity and desirability intervals.

Both the toxicity rate and the standardized utility rate get a quasi-binomial
posterior; each is summarized by the width-0.1 interval holding the most
posterior mass. Toxicity past the target interval k* de-escalates, otherwise
the neighbor window (trimmed once the current dose sits in k* with enough
patients) is ranked by desirability interval, higher is better; a dose with
no data yet scores one interval above the prior mean. Interval ties compare
the posterior mass above the winning interval's upper edge; any remainder
prefers the current dose, then the lowest.
"""
from __future__ import annotations

from ..core import Decision, TrialState
from ..stats import BetaParams, default_interval_edges, strongest_interval
from .common import (
    UNIFORM,
    DesignConfig,
    ObdResult,
    decision_for_target,
    desirability_posterior,
    isotonic_closest_dose,
    isotonic_tox,
    neighbor_candidates,
    posterior_mean_utility,
    require_data,
    resolve,
    responsive_doses,
    tox_posterior,
)

__all__ = ["decide_utpi", "select_obd_utpi"]

TIE_EPS = 1e-12

# untried doses score one interval above the uniform prior mean: high enough
# to beat a dose whose demonstrated utility rate is merely adequate (a safe
# dose with no responses runs near 0.4), low enough to lose to one that is
# clearly working (0.7 and up)
UNTRIED_BIN = 7


def decide_utpi(state: TrialState, config: DesignConfig) -> Decision:
    c = require_data(state)
    prm = config.params
    d = state.current_dose
    edges = default_interval_edges(prm.num_intervals)

    k_t = strongest_interval(tox_posterior(state, d), edges, tie="low")
    if k_t > prm.k_star:
        return resolve(state, "D",
                       f"toxicity interval {k_t} is past the target interval {prm.k_star}")
    trim = k_t == prm.k_star and c.n >= prm.n_star
    cand = neighbor_candidates(state, include_above=not trim)
    if not cand:
        return resolve(state, "S", "no open dose in the neighbor window")

    posts = {x: desirability_posterior(state, x, config.utilities) for x in cand}
    k_u = {x: (strongest_interval(posts[x], edges, tie="low")
               if state.counts_at(x) is not None else UNTRIED_BIN)
           for x in cand}
    top_k = max(k_u.values())
    tied = [x for x in cand if k_u[x] == top_k]
    if len(tied) > 1:
        # posterior mass above each dose's own winning interval
        mass = {x: 1.0 - posts[x].cdf(edges[k_u[x]]) for x in tied}
        top_m = max(mass.values())
        tied = [x for x in tied if mass[x] >= top_m - TIE_EPS]
    target = d if d in tied else min(tied)
    why = (f"desirability interval {top_k}"
           + ("" if len(tied) == 1 else f", tie among doses {tied}"))
    return decision_for_target(state, target, f"dose {target} leads by {why}")


def select_obd_utpi(state: TrialState, config: DesignConfig) -> ObdResult:
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
    dose = min(d for d in cands if util[d] >= best - TIE_EPS)
    return ObdResult(dose, diag,
                     f"dose {dose} has the best posterior mean desirability "
                     f"({best:.3f}) at or below the toxicity pick (dose {mtd})")
