"""Price index, pre-trend diagnostics and sample partitioning."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from typing import Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from ..errors import ConfigurationError, InvalidInputError
from ..grid import AnnouncementGroup
from ..ledger import EventSample, week_start
from ..validation import check_nonempty
from .design import ModelSpec, STANDARD_CONTROLS, TOKEN_CONTROLS, build_design
from .estimators import AbsorbingOLS

_INDEX_PERIODS = ("week", "day")


def _default_controls(period_dim: str) -> tuple[str, ...]:
    controls = STANDARD_CONTROLS + TOKEN_CONTROLS
    if period_dim == "day":
        controls = tuple(c for c in controls if c != "log_btc")
    return controls


@dataclass
class IndexSeries:
    """Ordered (period, value) price index, normalized to 1 in the base period.

    Period keys are the integer week index (Monday-aligned) or the day
    ordinal; ``label()`` renders them as ISO dates. Periods inside the span
    with no transactions are listed in ``gaps`` and carry no value.
    """

    period_kind: str
    periods: list[int]
    values: list[float]
    gaps: list[int]

    def label(self, period: int) -> str:
        if self.period_kind == "week":
            return week_start(period).isoformat()
        return date.fromordinal(period).isoformat()

    def items(self) -> list[tuple[int, float]]:
        return list(zip(self.periods, self.values))

    def as_rows(self) -> list[tuple[str, float]]:
        return [(self.label(p), v) for p, v in self.items()]


class HedonicIndexEstimator(BaseEstimator):
    """Price index from period fixed effects of the hedonic regression.

    Fits log price on the hedonic controls plus period fixed effects,
    without any announcement variables, then exponentiates the period
    effects relative to the first period present.
    """

    def __init__(
        self,
        period: str = "week",
        controls: tuple[str, ...] | None = None,
        se_type: str = "classical",
    ):
        self.period = period
        self.controls = controls
        self.se_type = se_type

    def fit(self, samples: Sequence[EventSample], y=None) -> "HedonicIndexEstimator":
        if self.period not in _INDEX_PERIODS:
            raise ConfigurationError(f"index period must be one of {_INDEX_PERIODS}")
        samples = check_nonempty(samples, "samples")
        controls = (
            tuple(self.controls) if self.controls is not None
            else _default_controls(self.period)
        )
        spec = ModelSpec(
            treatment=None,
            controls=controls,
            fe_dimensions=(self.period,),
            se_type=self.se_type,
        )
        design = build_design(samples, spec)
        if len(np.unique(design.fe_labels[self.period])) < 2:
            raise InvalidInputError("need at least 2 periods with data for an index")
        engine = AbsorbingOLS(se_type=self.se_type)
        engine.fit(design.X, design.y, fe_labels=design.fe_labels, columns=design.columns)
        self.result_ = engine.result_

        effects = self.result_.fe_estimates[self.period]
        periods = sorted(effects)
        base = effects[periods[0]]
        values = [float(np.exp(effects[p] - base)) for p in periods]
        gaps = [p for p in range(periods[0], periods[-1] + 1) if p not in effects]
        self.index_ = IndexSeries(
            period_kind=self.period, periods=periods, values=values, gaps=gaps
        )
        return self


def hedonic_index(
    samples: Sequence[EventSample],
    period: str = "week",
    controls: tuple[str, ...] | None = None,
    se_type: str = "classical",
) -> IndexSeries:
    """Convenience wrapper around :class:`HedonicIndexEstimator`."""
    return HedonicIndexEstimator(period=period, controls=controls, se_type=se_type).fit(
        samples
    ).index_


def residual_trend_series(
    samples: Sequence[EventSample],
    groups: Sequence[AnnouncementGroup],
    window_days: int = 7,
    controls: tuple[str, ...] | None = None,
) -> pd.DataFrame:
    """Average auxiliary-regression residuals by event day for near vs far.

    The auxiliary regression is the hedonic model with weekly fixed effects
    and no announcement variables; residual means are reported for every
    event-day offset in [-window_days, window_days] per arm, with NaN where
    an arm has no transactions that day.
    """
    samples = check_nonempty(samples, "samples")
    announce = {g.group_id: g.announce_date for g in groups}
    missing = {s.group_id for s in samples} - set(announce)
    if missing:
        raise ConfigurationError(f"samples reference unknown groups: {sorted(missing)}")

    spec = ModelSpec(
        treatment=None,
        controls=tuple(controls) if controls is not None else _default_controls("week"),
        fe_dimensions=("week",),
    )
    design = build_design(samples, spec)
    engine = AbsorbingOLS()
    engine.fit(design.X, design.y, fe_labels=design.fe_labels, columns=design.columns)
    resid = engine.result_.residuals

    sums: dict[tuple[int, str], float] = {}
    counts: dict[tuple[int, str], int] = {}
    for s, r in zip(samples, resid):
        offset = (s.day - announce[s.group_id]).days
        arm = "near" if s.near else "far"
        key = (offset, arm)
        sums[key] = sums.get(key, 0.0) + float(r)
        counts[key] = counts.get(key, 0) + 1

    rows = []
    for offset in range(-window_days, window_days + 1):
        for arm in ("near", "far"):
            n = counts.get((offset, arm), 0)
            mean = sums[(offset, arm)] / n if n else float("nan")
            rows.append({"event_day": offset, "group": arm, "mean_residual": mean, "n": n})
    return pd.DataFrame(rows, columns=["event_day", "group", "mean_residual", "n"])


def partition_meta(
    samples: Sequence[EventSample],
    groups: Sequence[AnnouncementGroup],
    cut_date: date = date(2021, 10, 28),
) -> tuple[list[EventSample], list[EventSample]]:
    """Split the panel by whether the sample's announcement predates *cut_date*.

    Groups announced strictly before the cut go to the first (pre) partition;
    groups announced on or after it go to the second (post).
    """
    announce = {g.group_id: g.announce_date for g in groups}
    missing = {s.group_id for s in samples} - set(announce)
    if missing:
        raise ConfigurationError(f"samples reference unknown groups: {sorted(missing)}")
    pre = [s for s in samples if announce[s.group_id] < cut_date]
    post = [s for s in samples if announce[s.group_id] >= cut_date]
    return pre, post
