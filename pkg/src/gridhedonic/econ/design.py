"""Regression specifications and design-matrix construction from panel rows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError, DegenerateDesignError
from ..ledger import EventSample
from ..validation import check_nonempty

TREATMENT_DISCRETE = "discrete_near"
TREATMENT_CONTINUOUS = "continuous_log_distance"

#: hedonic controls available on every panel row
STANDARD_CONTROLS = ("log_lot_size", "premium", "log_btc")
TOKEN_CONTROLS = ("paid_sand", "paid_weth")

FE_DIMENSIONS = ("day", "week", "mint_wave")
SE_TYPES = ("classical", "hc1")

_NUMERIC_FIELDS = (
    "log_price", "distance", "log_distance", "near", "post", "multi",
    "log_lot_size", "premium", "paid_sand", "paid_weth", "log_btc",
)


@dataclass(frozen=True)
class ModelSpec:
    """What to regress on what, and which dimensions to absorb.

    ``treatment`` may be None for auxiliary hedonic regressions that carry
    no announcement variables (price index, pre-trend residuals).
    """

    dependent: str = "log_price"
    treatment: str | None = TREATMENT_DISCRETE
    include_multi_interactions: bool = False
    controls: tuple[str, ...] = STANDARD_CONTROLS + TOKEN_CONTROLS
    fe_dimensions: tuple[str, ...] = ("week",)
    se_type: str = "classical"

    def __post_init__(self) -> None:
        if self.treatment not in (None, TREATMENT_DISCRETE, TREATMENT_CONTINUOUS):
            raise ConfigurationError(f"unknown treatment {self.treatment!r}")
        if self.include_multi_interactions and self.treatment is None:
            raise ConfigurationError("multi interactions require a treatment variable")
        if self.se_type not in SE_TYPES:
            raise ConfigurationError(f"unknown se_type {self.se_type!r}")
        object.__setattr__(self, "controls", tuple(self.controls))
        object.__setattr__(self, "fe_dimensions", tuple(self.fe_dimensions))
        for dim in self.fe_dimensions:
            if dim not in FE_DIMENSIONS:
                raise ConfigurationError(f"unknown fixed-effect dimension {dim!r}")
        if "day" in self.fe_dimensions and "week" in self.fe_dimensions:
            raise ConfigurationError("day and week fixed effects are nested; pick one")
        if "day" in self.fe_dimensions and "log_btc" in self.controls:
            raise ConfigurationError(
                "log_btc varies only by day and cannot be a control under "
                "daily fixed effects"
            )
        for name in self.controls:
            if name not in _NUMERIC_FIELDS:
                raise ConfigurationError(f"unknown control column {name!r}")

    @property
    def treatment_column(self) -> str | None:
        if self.treatment == TREATMENT_DISCRETE:
            return "near"
        if self.treatment == TREATMENT_CONTINUOUS:
            return "log_distance"
        return None


@dataclass
class Design:
    """Materialized response, regressors and fixed-effect labels."""

    y: np.ndarray
    X: np.ndarray
    columns: list[str]
    fe_labels: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return len(self.y)


def _column(samples: Sequence[EventSample], name: str) -> np.ndarray:
    try:
        return np.array([float(getattr(s, name)) for s in samples], dtype=np.float64)
    except AttributeError:
        raise ConfigurationError(f"samples have no column {name!r}") from None


def _fe_label_array(samples: Sequence[EventSample], dim: str) -> np.ndarray:
    if dim == "day":
        return np.array([s.day.toordinal() for s in samples], dtype=np.int64)
    if dim == "week":
        return np.array([s.week for s in samples], dtype=np.int64)
    if dim == "mint_wave":
        return np.array([s.mint_wave_id for s in samples], dtype=np.int64)
    raise ConfigurationError(f"unknown fixed-effect dimension {dim!r}")


def build_design(samples: Sequence[EventSample], spec: ModelSpec) -> Design:
    """Build the regressor matrix for *spec* over *samples*.

    Column order puts the announcement variables first (Post, the treatment,
    their interaction, then the Multi block when requested), followed by the
    controls in their declared order, and a constant only when no fixed
    effects absorb it. Later columns are the first to go if collinearity
    forces drops downstream.
    """
    samples = check_nonempty(samples, "samples")
    y = _column(samples, spec.dependent)

    names: list[str] = []
    cols: list[np.ndarray] = []

    if spec.treatment is not None:
        post = _column(samples, "post")
        treat = _column(samples, spec.treatment_column)
        if np.ptp(treat) == 0:
            raise DegenerateDesignError(
                f"treatment column {spec.treatment_column!r} is constant"
            )
        names += ["post", spec.treatment_column, f"post_x_{spec.treatment_column}"]
        cols += [post, treat, post * treat]
        if spec.include_multi_interactions:
            multi = _column(samples, "multi")
            if np.ptp(multi) == 0:
                raise DegenerateDesignError("multi indicator is constant")
            names += ["multi", "post_x_multi", f"post_x_{spec.treatment_column}_x_multi"]
            cols += [multi, post * multi, post * treat * multi]

    for name in spec.controls:
        names.append(name)
        cols.append(_column(samples, name))

    if not spec.fe_dimensions:
        names.append("const")
        cols.append(np.ones(len(samples)))

    X = np.column_stack(cols) if cols else np.empty((len(samples), 0))
    fe_labels = {dim: _fe_label_array(samples, dim) for dim in spec.fe_dimensions}
    return Design(y=y, X=X, columns=names, fe_labels=fe_labels)
