"""
Deviation strategies for the equilibrium-verification estimators.

A deviation replaces a player's holding row by beta, a [0, 1]-valued
function of the target's state. The base holding row pi is passed in so
that deviations defined relative to it (anti bang-bang, null) can be built.
"""

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from errors import ConfigError

NEVER_HOLD = "never_hold"
ALWAYS_HOLD = "always_hold"
ANTI_BANG_BANG = "anti_bang_bang"
CUSTOM = "custom"
NULL = "null"

DEVIATION_KINDS = (NEVER_HOLD, ALWAYS_HOLD, ANTI_BANG_BANG, CUSTOM, NULL)


@dataclass(frozen=True)
class DeviationStrategy:
    kind: str
    name: str = ""
    table_x: Optional[Tuple[float, ...]] = None
    table_beta: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.kind not in DEVIATION_KINDS:
            raise ConfigError(f"unknown deviation kind: {self.kind!r}")
        if not self.name:
            object.__setattr__(self, "name", self.kind)
        if self.kind == CUSTOM:
            if not self.table_x or self.table_beta is None or len(self.table_x) != len(self.table_beta):
                raise ConfigError(f"custom deviation {self.name!r} needs equal-length table_x and table_beta")
            if any(not 0.0 <= v <= 1.0 for v in self.table_beta):
                raise ConfigError(f"custom deviation {self.name!r} has beta values outside [0, 1]")
            if any(hi <= lo for lo, hi in zip(self.table_x, self.table_x[1:])):
                raise ConfigError(f"custom deviation {self.name!r} needs an increasing state table")
            object.__setattr__(self, "table_x", tuple(float(v) for v in self.table_x))
            object.__setattr__(self, "table_beta", tuple(float(v) for v in self.table_beta))

    @classmethod
    def never_hold(cls) -> "DeviationStrategy":
        return cls(NEVER_HOLD)

    @classmethod
    def always_hold(cls) -> "DeviationStrategy":
        return cls(ALWAYS_HOLD)

    @classmethod
    def anti_bang_bang(cls) -> "DeviationStrategy":
        return cls(ANTI_BANG_BANG)

    @classmethod
    def null(cls) -> "DeviationStrategy":
        return cls(NULL)

    @classmethod
    def custom(cls, name: str, table_x, table_beta) -> "DeviationStrategy":
        return cls(CUSTOM, name, tuple(table_x), tuple(table_beta))

    def beta(self, pi_row: np.ndarray, states: np.ndarray) -> np.ndarray:
        """Deviated holding fractions over targets, given the base row pi_row"""
        pi_row = np.asarray(pi_row, dtype=float)
        if self.kind == NEVER_HOLD:
            return np.zeros_like(pi_row)
        if self.kind == ALWAYS_HOLD:
            return np.ones_like(pi_row)
        if self.kind == ANTI_BANG_BANG:
            return 1.0 - pi_row
        if self.kind == NULL:
            return pi_row.copy()
        values = np.interp(np.asarray(states, dtype=float), self.table_x, self.table_beta)
        return np.clip(values, 0.0, 1.0)


def default_deviation_family() -> List[DeviationStrategy]:
    return [
        DeviationStrategy.never_hold(),
        DeviationStrategy.always_hold(),
        DeviationStrategy.anti_bang_bang(),
    ]


def deviation_from_dict(block: Dict[str, Any]) -> DeviationStrategy:
    kind = block.get("kind")
    if kind == CUSTOM:
        return DeviationStrategy.custom(
            block.get("name", CUSTOM), block.get("table_x", ()), block.get("table_beta", ())
        )
    return DeviationStrategy(kind, block.get("name", ""))


def deviation_to_dict(deviation: DeviationStrategy) -> Dict[str, Any]:
    block: Dict[str, Any] = {"kind": deviation.kind, "name": deviation.name}
    if deviation.kind == CUSTOM:
        block["table_x"] = list(deviation.table_x)
        block["table_beta"] = list(deviation.table_beta)
    return block
