"""Synthetic land-market generator with planted, recoverable coefficients.

The generator lays out sale waves on the grid, schedules announcements far
enough apart that event windows cannot overlap, draws transactions on land
released by earlier waves, and prices them from an explicit linear model in
log dollars: announcement effects (Post, treatment, their interactions with
the multi-wave indicator), hedonic controls, day and mint-wave effects, and
Gaussian noise. Because the planted coefficients are carried in the config,
every estimator in the package can be checked by recovery.

Distances are always induced by actual geometry, never drawn directly, so
the grid module is exercised on every run.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pandas as pd

from . import grid
from .econ.design import TREATMENT_CONTINUOUS, TREATMENT_DISCRETE
from .econ.estimators import DiDEstimator, TripleDiffEstimator
from .errors import CapacityError, ConfigurationError, InvalidInputError
from .grid import AnnouncementGroup, Coord, Region, Wave
from .ledger import RateTable, Transaction, build_event_samples, week_index
from .validation import check_probabilities

GENESIS_GROUP_ID = 0

_DEFAULT_BETAS = {
    "post": 0.111,
    "near": 0.054,
    "post_near": 0.084,
    "multi": 0.10,
    "post_multi": -0.10,
    "post_near_multi": -0.173,
}
_DEFAULT_GAMMA = {
    "log_lot_size": 1.071,
    "premium": 0.420,
    "log_btc": 0.8,
    "paid_sand": 0.121,
    "paid_weth": -0.380,
}
_BASE_RATES = {"ETH": 2500.0, "SAND": 3.0, "WETH": 2500.0, "BTC": 40000.0}


@dataclass
class DGPConfig:
    """Everything the generator needs, including the planted truth.

    ``true_betas`` follow the triple-differences layout: the ``near`` keys
    multiply the treatment variable, which is the Near dummy under discrete
    treatment and log distance under continuous treatment.
    """

    seed: int = 0
    map_size: int = 408
    n_groups: int = 6
    waves_per_group: dict[int, float] = field(
        default_factory=lambda: {1: 0.7, 4: 0.2, 5: 0.1}
    )
    transactions_per_group: int = 400
    treatment: str = TREATMENT_DISCRETE
    true_betas: dict[str, float] = field(default_factory=lambda: dict(_DEFAULT_BETAS))
    gamma: dict[str, float] = field(default_factory=lambda: dict(_DEFAULT_GAMMA))
    fe_scales: dict[str, float] = field(default_factory=lambda: {"day": 0.1, "mint_wave": 0.3})
    noise_sigma: float = 0.25
    token_mix: dict[str, float] = field(
        default_factory=lambda: {"ETH": 0.80, "SAND": 0.06, "WETH": 0.14}
    )
    premium_rate: float = 0.062
    lot_size_law: dict[int, float] = field(
        default_factory=lambda: {1: 0.90, 3: 0.08, 6: 0.02}
    )
    intercept: float = 5.0
    weekly_drift: float = 0.0
    wave_region_side: int = 16
    genesis_regions: int = 2
    genesis_side: int = 40
    start_date: date = date(2021, 2, 1)
    announcement_spacing_days: int = 20
    window_days: int = 7

    def __post_init__(self) -> None:
        if isinstance(self.start_date, str):
            self.start_date = date.fromisoformat(self.start_date)
        self.waves_per_group = {int(k): float(v) for k, v in self.waves_per_group.items()}
        self.lot_size_law = {int(k): float(v) for k, v in self.lot_size_law.items()}
        if self.n_groups < 1:
            raise ConfigurationError("n_groups must be at least 1")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be non-negative")
        if self.announcement_spacing_days <= 2 * self.window_days:
            raise ConfigurationError(
                "announcement spacing must exceed twice the window to keep "
                "event windows disjoint"
            )
        try:
            check_probabilities(self.waves_per_group, "waves_per_group")
            check_probabilities(self.token_mix, "token_mix")
            check_probabilities(self.lot_size_law, "lot_size_law")
        except InvalidInputError as exc:
            raise ConfigurationError(str(exc)) from None
        unknown = set(self.token_mix) - {"ETH", "SAND", "WETH"}
        if unknown:
            raise ConfigurationError(f"token_mix has unsupported tokens {sorted(unknown)}")
        bad_sides = [s for s in self.lot_size_law if s < 1 or s > self.wave_region_side]
        if bad_sides:
            raise ConfigurationError(
                f"estate sides {bad_sides} do not fit a wave region of side "
                f"{self.wave_region_side}"
            )
        for key in _DEFAULT_BETAS:
            self.true_betas.setdefault(key, 0.0)
        for key in _DEFAULT_GAMMA:
            self.gamma.setdefault(key, 0.0)

    @classmethod
    def from_json(cls, path) -> "DGPConfig":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(payload) - known
        if unknown:
            raise ConfigurationError(f"unknown DGP config keys: {sorted(unknown)}")
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigurationError(f"bad DGP config: {exc}") from exc

    def to_json(self) -> str:
        payload = asdict(self)
        payload["start_date"] = self.start_date.isoformat()
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


@dataclass
class SyntheticMarket:
    """A generated market plus the config that produced it."""

    waves: list[Wave]
    groups: list[AnnouncementGroup]
    transactions: list[Transaction]
    rates: RateTable
    truth: DGPConfig
    wave_rects: dict[int, tuple[int, int, int, int]]

    @property
    def analysis_groups(self) -> list[AnnouncementGroup]:
        return [g for g in self.groups if g.group_id != GENESIS_GROUP_ID]

    def waves_json(self) -> str:
        records = []
        for wave in self.waves:
            records.append(
                {
                    "wave_id": wave.wave_id,
                    "group_id": wave.group_id,
                    "name": wave.name,
                    "announce_date": wave.announce_date.isoformat(),
                    "sale_date": wave.sale_date.isoformat(),
                    "region": {"rects": [list(self.wave_rects[wave.wave_id])]},
                    "land_offered": wave.land_offered,
                }
            )
        payload = {"map_size": self.truth.map_size, "waves": records}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def transactions_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(
            ["tx_id", "timestamp_iso8601", "nft_ids", "lot_size", "premium",
             "token", "price_token", "seller", "buyer"]
        )
        size = self.truth.map_size
        for tx in sorted(self.transactions, key=lambda t: (t.timestamp, t.tx_id)):
            nft_ids = ";".join(str(p.x + p.y * size) for p in tx.parcels)
            writer.writerow(
                [tx.tx_id, tx.timestamp.isoformat(), nft_ids, tx.lot_size,
                 int(tx.premium), tx.token, repr(tx.price_token), tx.seller, tx.buyer]
            )
        return buf.getvalue()


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _place_square(occupied: np.ndarray, side: int, rng: np.random.Generator,
                  max_tries: int = 2000) -> tuple[int, int]:
    size = occupied.shape[0]
    if side > size:
        raise CapacityError(f"region side {side} exceeds map size {size}")
    for _ in range(max_tries):
        x0 = int(rng.integers(0, size - side + 1))
        y0 = int(rng.integers(0, size - side + 1))
        if not occupied[y0:y0 + side, x0:x0 + side].any():
            occupied[y0:y0 + side, x0:x0 + side] = True
            return x0, y0
    raise CapacityError(
        f"could not place a {side}x{side} region after {max_tries} attempts; "
        f"grid too crowded"
    )


def _geometric_walk(rng: np.random.Generator, base: float, n_days: int,
                    daily_vol: float = 0.01) -> np.ndarray:
    steps = rng.normal(0.0, daily_vol, size=n_days)
    steps[0] = 0.0
    return base * np.exp(np.cumsum(steps))


def generate_market(config: DGPConfig) -> SyntheticMarket:
    """Generate waves, rates and priced transactions for *config*.

    Raises :class:`CapacityError` when the requested regions cannot fit on
    the grid.
    """
    rng = np.random.default_rng(config.seed)

    wave_choices = sorted(config.waves_per_group)
    wave_probs = [config.waves_per_group[k] for k in wave_choices]
    group_wave_counts = [
        int(rng.choice(wave_choices, p=wave_probs)) for _ in range(config.n_groups)
    ]

    required_area = (
        config.genesis_regions * config.genesis_side ** 2
        + sum(group_wave_counts) * config.wave_region_side ** 2
    )
    if required_area > config.map_size ** 2:
        raise CapacityError(
            f"requested regions cover {required_area} parcels but the map has "
            f"only {config.map_size ** 2}"
        )

    occupied = np.zeros((config.map_size, config.map_size), dtype=bool)
    waves: list[Wave] = []
    wave_rects: dict[int, tuple[int, int, int, int]] = {}
    wave_id = 0

    def add_wave(group_id: int, name: str, announce: date, sale: date, side: int) -> Wave:
        nonlocal wave_id
        wave_id += 1
        x0, y0 = _place_square(occupied, side, rng)
        rect = (x0, y0, x0 + side - 1, y0 + side - 1)
        wave = Wave(
            wave_id=wave_id,
            group_id=group_id,
            name=name,
            announce_date=announce,
            sale_date=sale,
            region=Region.from_rects([rect]),
            land_offered=side * side,
        )
        waves.append(wave)
        wave_rects[wave_id] = rect
        return wave

    genesis_announce = config.start_date - timedelta(days=60)
    for i in range(config.genesis_regions):
        add_wave(
            GENESIS_GROUP_ID, f"Genesis {i + 1}", genesis_announce,
            genesis_announce + timedelta(days=5), config.genesis_side,
        )

    announce_dates = [
        config.start_date + timedelta(days=g * config.announcement_spacing_days)
        for g in range(config.n_groups)
    ]
    for g, (announce, n_waves) in enumerate(zip(announce_dates, group_wave_counts), start=1):
        for i in range(n_waves):
            add_wave(
                g, f"Group {g} Wave {i + 1}", announce,
                announce + timedelta(days=5 + i), config.wave_region_side,
            )

    groups = grid.group_waves(waves)
    group_by_id = {g.group_id: g for g in groups}

    # planted daily rates covering the transaction span
    first_day = announce_dates[0] - timedelta(days=config.window_days + 1)
    last_day = announce_dates[-1] + timedelta(days=config.window_days + 1)
    n_days = (last_day - first_day).days + 1
    days = [first_day + timedelta(days=i) for i in range(n_days)]
    rate_rows: dict[tuple[str, date], float] = {}
    for token in sorted(_BASE_RATES):
        series = _geometric_walk(rng, _BASE_RATES[token], n_days)
        for day, value in zip(days, series):
            rate_rows[(token, day)] = float(value)
    rates = RateTable(rate_rows)

    day_fe = {
        day: float(rng.normal(0.0, config.fe_scales.get("day", 0.0))) for day in days
    }
    wave_fe = {
        w.wave_id: float(rng.normal(0.0, config.fe_scales.get("mint_wave", 0.0)))
        for w in waves
    }

    betas = config.true_betas
    gamma = config.gamma
    continuous = config.treatment == TREATMENT_CONTINUOUS
    if config.treatment not in (TREATMENT_DISCRETE, TREATMENT_CONTINUOUS):
        raise ConfigurationError(f"unknown treatment form {config.treatment!r}")

    lot_sides = sorted(config.lot_size_law)
    lot_probs = [config.lot_size_law[s] for s in lot_sides]
    token_names = sorted(config.token_mix)
    token_probs = [config.token_mix[t] for t in token_names]
    base_week = week_index(config.start_date)

    transactions: list[Transaction] = []
    for g, announce in enumerate(announce_dates, start=1):
        group = group_by_id[g]
        window_start = announce - timedelta(days=config.window_days)
        eligible = [
            w for w in waves
            if w.sale_date < window_start and w.group_id != g
        ]
        if not eligible:
            raise CapacityError(f"no released land precedes group {g}'s window")
        weights = np.array([w.land_offered for w in eligible], dtype=np.float64)
        weights /= weights.sum()

        announce_midnight = datetime(
            announce.year, announce.month, announce.day, tzinfo=timezone.utc
        )

        drawn = []
        for i in range(config.transactions_per_group):
            side = int(rng.choice(lot_sides, p=lot_probs))
            host = eligible[int(rng.choice(len(eligible), p=weights))]
            hx0, hy0, hx1, hy1 = wave_rects[host.wave_id]
            x0 = int(rng.integers(hx0, hx1 - side + 2))
            y0 = int(rng.integers(hy0, hy1 - side + 2))
            parcels = tuple(
                Coord(x, y)
                for x in range(x0, x0 + side)
                for y in range(y0, y0 + side)
            )
            offset = int(rng.integers(-config.window_days * 86400,
                                      (config.window_days + 1) * 86400))
            timestamp = announce_midnight + timedelta(seconds=offset)
            premium = bool(rng.random() < config.premium_rate)
            token = str(rng.choice(token_names, p=token_probs))
            noise = float(rng.normal(0.0, config.noise_sigma)) if config.noise_sigma else 0.0
            seller = "0x" + rng.bytes(20).hex()
            buyer = "0x" + rng.bytes(20).hex()
            _, dist = grid.nearest_parcel_index(parcels, group)
            drawn.append(
                (f"t{g:02d}{i:05d}", timestamp, parcels, premium, token, noise,
                 seller, buyer, host.wave_id, dist)
            )

        near_flags = grid.assign_near([(row[0], row[9]) for row in drawn])

        for tx_id, timestamp, parcels, premium, token, noise, seller, buyer, host_wave, dist in drawn:
            post = 1.0 if timestamp >= announce_midnight else 0.0
            treat = float(np.log(dist)) if continuous else float(near_flags[tx_id])
            multi = 1.0 if group.multi else 0.0
            day = timestamp.date()
            week_offset = week_index(day) - base_week
            log_price = (
                config.intercept
                + betas["post"] * post
                + betas["near"] * treat
                + betas["post_near"] * post * treat
                + betas["multi"] * multi
                + betas["post_multi"] * post * multi
                + betas["post_near_multi"] * post * treat * multi
                + gamma["log_lot_size"] * np.log(len(parcels))
                + gamma["premium"] * premium
                + gamma["log_btc"] * np.log(rates.btc_price(day))
                + gamma["paid_sand"] * (token == "SAND")
                + gamma["paid_weth"] * (token == "WETH")
                + day_fe[day]
                + wave_fe[host_wave]
                + config.weekly_drift * week_offset
                + noise
            )
            price_usd = float(np.exp(log_price))
            price_token = price_usd / rates.rate(token, day)
            transactions.append(
                Transaction(
                    tx_id=tx_id,
                    timestamp=timestamp,
                    parcels=parcels,
                    premium=premium,
                    token=token,
                    price_token=price_token,
                    seller=seller,
                    buyer=buyer,
                    parcel_mint_waves=(host_wave,) * len(parcels),
                )
            )

    return SyntheticMarket(
        waves=waves,
        groups=groups,
        transactions=transactions,
        rates=rates,
        truth=config,
        wave_rects=wave_rects,
    )


# ---------------------------------------------------------------------------
# recovery study
# ---------------------------------------------------------------------------


@dataclass
class RecoveryRow:
    parameter: str
    truth: float
    mean_estimate: float
    empirical_sd: float
    ci95_coverage: float
    n_ok: int


@dataclass
class RecoveryReport:
    rows: list[RecoveryRow]
    failures: list[tuple[int, str]]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows])


_Z95 = 1.959963984540054


def _market_has_multi_variation(market: SyntheticMarket) -> bool:
    return len({g.multi for g in market.analysis_groups}) == 2


def estimate_market(market: SyntheticMarket, triple: bool | None = None):
    """Run the full-specification fit on a generated market.

    ``triple=None`` picks the correctly specified model: the triple
    regression whenever the market mixes multi- and single-wave
    announcements (the planted interaction with Multi would otherwise
    contaminate the plain DiD coefficient), the plain DiD otherwise.
    """
    panel = build_event_samples(
        market.transactions, market.groups, market.rates,
        window_days=market.truth.window_days,
    )
    if triple is None:
        triple = _market_has_multi_variation(market)
    cls = TripleDiffEstimator if triple else DiDEstimator
    kwargs = {} if triple else {"include_multi_interactions": False}
    est = cls(
        treatment=market.truth.treatment,
        controls=("log_lot_size", "premium", "paid_sand", "paid_weth"),
        fe_dimensions=("day", "mint_wave"),
        **kwargs,
    )
    return est.fit(panel.samples)


def recovery_report(config: DGPConfig, n_replications: int) -> RecoveryReport:
    """Repeated generate -> pipeline -> estimate; aggregates bias and coverage.

    Replication seeds are spawned deterministically from the config seed.
    When a market mixes multi- and single-wave announcements, both targeted
    interactions are read off one triple regression. Failed replications are
    recorded, never silently dropped.
    """
    if n_replications < 1:
        raise InvalidInputError("n_replications must be at least 1")
    children = np.random.SeedSequence(config.seed).spawn(n_replications)

    treat_col = "log_distance" if config.treatment == TREATMENT_CONTINUOUS else "near"
    did_term = f"post_x_{treat_col}"
    triple_term = f"{did_term}_x_multi"

    estimates: dict[str, list[tuple[float, float]]] = {
        "post_near": [], "post_near_multi": [],
    }
    failures: list[tuple[int, str]] = []

    for rep, child in enumerate(children):
        rep_config = replace(config, seed=int(child.generate_state(1)[0]))
        try:
            market = generate_market(rep_config)
            fitted = estimate_market(market)
            coefs = fitted.result_.coefficients
            estimates["post_near"].append(
                (coefs[did_term].estimate, coefs[did_term].std_error)
            )
            if triple_term in coefs:
                estimates["post_near_multi"].append(
                    (coefs[triple_term].estimate, coefs[triple_term].std_error)
                )
        except Exception as exc:  # noqa: BLE001 - failures are data here
            failures.append((rep, f"{type(exc).__name__}: {exc}"))

    rows = []
    for name, got in estimates.items():
        if not got and name == "post_near_multi":
            continue
        truth = config.true_betas[name]
        if not got:
            rows.append(RecoveryRow(name, truth, float("nan"), float("nan"), float("nan"), 0))
            continue
        ests = np.array([e for e, _ in got])
        ses = np.array([s for _, s in got])
        cover = np.mean(np.abs(ests - truth) <= _Z95 * ses)
        sd = float(np.std(ests, ddof=1)) if len(ests) > 1 else 0.0
        rows.append(RecoveryRow(name, truth, float(ests.mean()), sd, float(cover), len(got)))
    return RecoveryReport(rows=rows, failures=failures)
