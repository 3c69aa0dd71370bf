"""Interval-table designs: cohort moves by joint posterior mass, selection by
posterior expected utility.

Both designs score every (toxicity bin x efficacy bin) cell by the joint
posterior mass per unit area and act per the cell that wins; they differ only
in table layout and in the end-of-trial gate. Selection draws from the
per-dose posteriors, applies an isotonic adjustment to each toxicity draw
across doses, and averages a truncated utility; the stricter variant also
requires enough posterior mass in the acceptable region before reporting.
"""
from __future__ import annotations

import numpy as np

from ..core import Decision, TrialState
from .common import (
    DecisionTable,
    DesignConfig,
    DesignId,
    ObdResult,
    eff_posterior,
    require_data,
    resolve,
    responsive_doses,
    tox_posterior,
    truncated_eff_credit,
    truncated_tox_credit,
)

__all__ = ["decide_tepi2", "decide_printe", "select_obd_tepi2", "select_obd_printe"]

_SAFETY_RANK = {"D": 0, "S": 1, "E": 2}


def _table_action(state: TrialState, config: DesignConfig,
                  table: DecisionTable | None) -> tuple:
    c = require_data(state)
    if table is None:
        table = config.params.table
    else:
        line = config.p_T + (config.params.epsilon
                             if config.design is DesignId.PRINTE else 0.0)
        table.ensure_de_escalation_rows(line)
    tox = tox_posterior(state, state.current_dose)
    eff = eff_posterior(state, state.current_dose)
    tox_mass = [tox.cdf(b) - tox.cdf(a)
                for a, b in zip(table.tox_edges, table.tox_edges[1:])]
    eff_mass = [eff.cdf(b) - eff.cdf(a)
                for a, b in zip(table.eff_edges, table.eff_edges[1:])]
    best, winner = -1.0, None
    for i, tm in enumerate(tox_mass):
        t_area = table.tox_edges[i + 1] - table.tox_edges[i]
        for j, em in enumerate(eff_mass):
            density = tm * em / (t_area * (table.eff_edges[j + 1] - table.eff_edges[j]))
            action = table.actions[i][j]
            if density > best + 1e-12:
                best, winner = density, (i, j, action)
            elif density > best - 1e-12 and winner is not None:
                # exact tie: take the safer action
                if _SAFETY_RANK[action] < _SAFETY_RANK[winner[2]]:
                    winner = (i, j, action)
    i, j, action = winner
    note = (f"joint posterior mass peaks in toxicity {table.tox_bin(i)} x "
            f"response {table.eff_bin(j)}")
    return action, note


def decide_tepi2(state: TrialState, config: DesignConfig,
                 table: DecisionTable | None = None) -> Decision:
    action, note = _table_action(state, config, table)
    return resolve(state, action, note, leap_up=config.relocation == "up")


def decide_printe(state: TrialState, config: DesignConfig,
                  table: DecisionTable | None = None) -> Decision:
    action, note = _table_action(state, config, table)
    return resolve(state, action, note, leap_up=config.relocation == "up")


def _rowwise_isotonic(y: np.ndarray) -> np.ndarray:
    """Unit-weight increasing fit of each row via the max-min mean formula."""
    T, m = y.shape
    cs = np.zeros((T, m + 1))
    np.cumsum(y, axis=1, out=cs[:, 1:])
    out = np.empty_like(y)
    for i in range(m):
        best = None
        for j in range(i + 1):
            mn = None
            for k in range(i, m):
                seg = (cs[:, k + 1] - cs[:, j]) / (k - j + 1)
                mn = seg if mn is None else np.minimum(mn, seg)
            best = mn if best is None else np.maximum(best, mn)
        out[:, i] = best
    return out


def _posterior_utilities(state: TrialState, config: DesignConfig,
                         rng: np.random.Generator):
    """Monte Carlo utility draws, one column per tried dose."""
    prm = config.params
    tried = [d for d in range(1, state.num_doses + 1) if state.tried(d)]
    T = prm.mc_size
    a_t = np.array([1.0 + state.counts_at(d).yT for d in tried])
    b_t = np.array([1.0 + state.n_at(d) - state.counts_at(d).yT for d in tried])
    a_e = np.array([1.0 + state.counts_at(d).yE for d in tried])
    b_e = np.array([1.0 + state.n_at(d) - state.counts_at(d).yE for d in tried])
    tox = rng.beta(a_t, b_t, size=(T, len(tried)))
    eff = rng.beta(a_e, b_e, size=(T, len(tried)))
    tox = _rowwise_isotonic(tox)
    f1 = np.clip(1.0 - (tox - prm.p1) / (prm.p2 - prm.p1), 0.0, 1.0)
    f2 = np.clip((eff - prm.q1) / (prm.q2 - prm.q1), 0.0, 1.0)
    return tried, f1 * f2


def _select_candidate(state: TrialState, config: DesignConfig,
                      rng: np.random.Generator | None):
    if rng is None:
        rng = np.random.default_rng(0)
    open_tried = state.tried_active_doses()
    open_tried = responsive_doses(state, config, open_tried)
    if not open_tried:
        return None, None, None
    tried, draws = _posterior_utilities(state, config, rng)
    means = dict(zip(tried, draws.mean(axis=0)))
    best = max(means[d] for d in open_tried)
    dose = min(d for d in open_tried if means[d] >= best - 1e-12)
    diag = {"posterior_utility":
            tuple(float(means[d]) if d in means else None
                  for d in range(1, state.num_doses + 1))}
    return dose, draws[:, tried.index(dose)], diag


def select_obd_tepi2(state: TrialState, config: DesignConfig,
                     rng: np.random.Generator | None = None) -> ObdResult:
    dose, _, diag = _select_candidate(state, config, rng)
    if dose is None:
        return ObdResult(None, reason="no selectable dose remains open")
    return ObdResult(dose, diag,
                     f"dose {dose} maximizes posterior expected utility "
                     f"({diag['posterior_utility'][dose - 1]:.3f})")


def select_obd_printe(state: TrialState, config: DesignConfig,
                      rng: np.random.Generator | None = None) -> ObdResult:
    dose, dose_draws, diag = _select_candidate(state, config, rng)
    if dose is None:
        return ObdResult(None, reason="no selectable dose remains open")
    prm = config.params
    # threshold = the largest utility attainable outside the acceptable region
    u_star = max(truncated_tox_credit(config.p_T, prm.p1, prm.p2),
                 truncated_eff_credit(config.q_E + prm.delta, prm.q1, prm.q2))
    p_in = float(np.mean(dose_draws >= u_star))
    diag = dict(diag)
    diag["graduation_mass"] = tuple(p_in if d == dose else None
                                    for d in range(1, state.num_doses + 1))
    if p_in < prm.p_graduate:
        return ObdResult(None, diag,
                         f"candidate dose {dose} failed graduation: "
                         f"utility mass {p_in:.3f} < {prm.p_graduate:g}")
    return ObdResult(dose, diag,
                     f"dose {dose} graduates with utility mass {p_in:.3f}")
