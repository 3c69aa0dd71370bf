"""The seven designs behind one interface.

``decide`` and ``select_obd`` dispatch on ``config.design``; everything else
is re-exported from the per-design modules and ``common``.
"""
from __future__ import annotations

import numpy as np

from ..core import Decision, TrialState
from .common import (
    ACTIONS,
    Boin12Params,
    BoinetParams,
    ConfigError,
    DecisionTable,
    DesignConfig,
    DesignId,
    EliminationParams,
    ObdResult,
    SteinParams,
    TepiParams,
    UbiParams,
    UtpiParams,
    apply_elimination,
    build_decision_table,
    builtin_table,
    make_config,
    suggested_obd,
)
from .boinet import decide_boinet, select_obd_boinet
from .boin12 import decide_boin12, select_obd_boin12
from .stein import decide_stein, select_obd_stein
from .tepi import decide_printe, decide_tepi2, select_obd_printe, select_obd_tepi2
from .ubi import decide_ubi, select_obd_ubi
from .utpi import decide_utpi, select_obd_utpi

__all__ = [
    "ACTIONS",
    "Boin12Params",
    "BoinetParams",
    "ConfigError",
    "DecisionTable",
    "DesignConfig",
    "DesignId",
    "EliminationParams",
    "ObdResult",
    "SteinParams",
    "TepiParams",
    "UbiParams",
    "UtpiParams",
    "apply_elimination",
    "build_decision_table",
    "builtin_table",
    "decide",
    "decide_boin12",
    "decide_boinet",
    "decide_printe",
    "decide_stein",
    "decide_tepi2",
    "decide_ubi",
    "decide_utpi",
    "make_config",
    "select_obd",
    "select_obd_boin12",
    "select_obd_boinet",
    "select_obd_printe",
    "select_obd_stein",
    "select_obd_tepi2",
    "select_obd_ubi",
    "select_obd_utpi",
    "suggested_obd",
]


def decide(state: TrialState, config: DesignConfig,
           rng: np.random.Generator | None = None) -> Decision:
    """Next-cohort decision for whichever design the config names.

    ``rng`` only matters for designs with a randomized tie-break (BOINET).
    """
    design = DesignId(config.design)
    if design is DesignId.BOINET:
        return decide_boinet(state, config, rng)
    fn = {
        DesignId.BOIN12: decide_boin12,
        DesignId.UBI: decide_ubi,
        DesignId.TEPI2: decide_tepi2,
        DesignId.PRINTE: decide_printe,
        DesignId.STEIN: decide_stein,
        DesignId.UTPI: decide_utpi,
    }[design]
    return fn(state, config)


def select_obd(state: TrialState, config: DesignConfig,
               rng: np.random.Generator | None = None) -> ObdResult:
    """End-of-trial selection; ``rng`` feeds the Monte Carlo selectors."""
    design = DesignId(config.design)
    if design is DesignId.TEPI2:
        return select_obd_tepi2(state, config, rng)
    if design is DesignId.PRINTE:
        return select_obd_printe(state, config, rng)
    fn = {
        DesignId.BOINET: select_obd_boinet,
        DesignId.BOIN12: select_obd_boin12,
        DesignId.UBI: select_obd_ubi,
        DesignId.STEIN: select_obd_stein,
        DesignId.UTPI: select_obd_utpi,
    }[design]
    return fn(state, config)
