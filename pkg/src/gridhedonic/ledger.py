"""Transaction ingestion, cleaning, currency conversion and panel construction.

The cleaning rules follow the market-data conventions of the source dumps:
only paid secondary-market sales settled in ETH, SAND or WETH survive
ingestion, dollar prices are winsorized at the 0.1% / 99.9% quantiles of the
pooled retained sample, and every retained transaction is matched to exactly
one announcement window of +/- ``window_days`` calendar days (UTC).

Every record dropped along the way is returned as a :class:`Rejection` so a
run can be audited against the raw dump.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, fields, replace
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from . import grid
from .errors import ConfigurationError, ConversionError, InvalidInputError
from .grid import AnnouncementGroup, Coord, Wave
from .ioutil import atomic_write_text
from .validation import as_float_vector, check_nonempty

log = logging.getLogger(__name__)

SETTLEMENT_TOKENS = ("ETH", "SAND", "WETH")

#: Monday anchoring the integer week index used for weekly fixed effects
WEEK_EPOCH = date(1970, 1, 5)

TRANSACTION_CSV_HEADER = [
    "tx_id", "timestamp_iso8601", "nft_ids", "lot_size", "premium",
    "token", "price_token", "seller", "buyer",
]

ZERO_ADDRESS = "0x" + "0" * 40


def week_index(day: date) -> int:
    """Monday-aligned week number of *day*, counted from a fixed epoch."""
    return (day.toordinal() - WEEK_EPOCH.toordinal()) // 7


def week_start(week: int) -> date:
    """Inverse of :func:`week_index`: the Monday of the given week."""
    return date.fromordinal(WEEK_EPOCH.toordinal() + 7 * int(week))


# ---------------------------------------------------------------------------
# domain records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transaction:
    """One secondary-market sale of a parcel bundle."""

    tx_id: str
    timestamp: datetime
    parcels: tuple[Coord, ...]
    premium: bool
    token: str
    price_token: float
    seller: str = ""
    buyer: str = ""
    price_usd: float | None = None
    parcel_mint_waves: tuple[int, ...] = ()

    @property
    def lot_size(self) -> int:
        return len(self.parcels)

    @property
    def mint_wave_id(self) -> int:
        """Mint wave of the first parcel; bundles are re-resolved at panel time."""
        return self.parcel_mint_waves[0]

    @property
    def day(self) -> date:
        return self.timestamp.date()


@dataclass(frozen=True)
class Rejection:
    """A record dropped by a cleaning stage, with the reason."""

    tx_id: str
    stage: str
    reason: str


@dataclass(frozen=True)
class EventSample:
    """One regression row of the event-window panel."""

    tx_id: str
    group_id: int
    log_price: float
    distance: float
    log_distance: float
    near: bool
    post: bool
    multi: bool
    log_lot_size: float
    premium: bool
    paid_sand: bool
    paid_weth: bool
    log_btc: float
    mint_wave_id: int
    day: date
    week: int


EVENT_SAMPLE_FIELDS = [f.name for f in fields(EventSample)]


@dataclass
class PanelBuildResult:
    """Panel rows plus the audit trail of rejected records."""

    samples: list[EventSample]
    rejections: list[Rejection]


# ---------------------------------------------------------------------------
# map metadata
# ---------------------------------------------------------------------------


@dataclass
class MapMetadata:
    """Resolves NFT ids to coordinates and mint waves.

    The canonical file form is JSON::

        {"map_size": 408,
         "creator_address": "0x...",
         "nfts": {"<nft_id>": [x, y, mint_wave_id], ...}}

    When only a wave file is available the mapping can be derived instead,
    using the grid id convention ``nft_id = x + y * map_size``.
    """

    map_size: int
    creator_address: str
    nfts: dict[int, tuple[Coord, int]]

    def resolve(self, nft_id: int) -> tuple[Coord, int]:
        try:
            return self.nfts[nft_id]
        except KeyError:
            raise LookupError(f"unknown NFT id {nft_id}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "MapMetadata":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        try:
            nfts = {
                int(nft_id): (Coord(int(entry[0]), int(entry[1])), int(entry[2]))
                for nft_id, entry in payload["nfts"].items()
            }
            return cls(
                map_size=int(payload.get("map_size", grid.MAP_SIZE)),
                creator_address=str(payload.get("creator_address", ZERO_ADDRESS)),
                nfts=nfts,
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed map metadata {path}: {exc}") from exc

    @classmethod
    def from_waves(
        cls,
        waves: Sequence[Wave],
        map_size: int = grid.MAP_SIZE,
        creator_address: str = ZERO_ADDRESS,
    ) -> "MapMetadata":
        nfts: dict[int, tuple[Coord, int]] = {}
        for wave in waves:
            for parcel in wave.region.parcels:
                nfts[parcel.x + parcel.y * map_size] = (parcel, wave.wave_id)
        return cls(map_size=map_size, creator_address=creator_address, nfts=nfts)


# ---------------------------------------------------------------------------
# exchange rates
# ---------------------------------------------------------------------------


@dataclass
class RateTable:
    """Daily USD rates per settlement token plus the daily BTC price series."""

    rates: dict[tuple[str, date], float]

    def rate(self, token: str, day: date) -> float:
        try:
            return self.rates[(token, day)]
        except KeyError:
            raise ConversionError(token, day) from None

    def btc_price(self, day: date) -> float:
        return self.rate("BTC", day)

    @classmethod
    def from_csv(cls, path: str | Path) -> "RateTable":
        rates: dict[tuple[str, date], float] = {}
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                try:
                    day = date.fromisoformat(row["date"])
                    token = row["token"].strip().upper()
                    value = float(row["usd_rate"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise ConfigurationError(f"malformed rate row {row!r}: {exc}") from exc
                if value <= 0:
                    raise ConfigurationError(f"non-positive rate in row {row!r}")
                rates[(token, day)] = value
        if not rates:
            raise ConfigurationError(f"no rates found in {path}")
        return cls(rates)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["date", "token", "usd_rate"])
        for (token, day), value in sorted(self.rates.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            writer.writerow([day.isoformat(), token, repr(value)])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# ingestion and conversion
# ---------------------------------------------------------------------------


def _parse_timestamp(raw: str) -> datetime:
    ts = datetime.fromisoformat(raw)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _parse_bool(raw: str) -> bool:
    val = raw.strip().lower()
    if val in ("1", "true", "t", "yes"):
        return True
    if val in ("0", "false", "f", "no", ""):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def ingest_transactions(
    transaction_file: str | Path,
    map_metadata: MapMetadata,
) -> tuple[list[Transaction], list[Rejection]]:
    """Read a transaction dump CSV, keeping paid secondary sales only.

    Drops, with a logged rejection each: malformed rows, transfers without a
    positive payment, tokens outside ETH/SAND/WETH, primary sales (seller is
    the creator address) and rows whose NFT ids do not resolve.
    """
    kept: list[Transaction] = []
    rejections: list[Rejection] = []

    def reject(tx_id: str, reason: str) -> None:
        rejections.append(Rejection(tx_id, "ingest", reason))
        log.info("ingest: rejected %s (%s)", tx_id, reason)

    with open(transaction_file, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRANSACTION_CSV_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise ConfigurationError(
                f"transaction dump missing columns: {sorted(missing)}"
            )
        for row in reader:
            tx_id = (row.get("tx_id") or "").strip() or "<missing-id>"
            try:
                timestamp = _parse_timestamp(row["timestamp_iso8601"].strip())
                nft_ids = [int(v) for v in row["nft_ids"].split(";") if v.strip()]
                lot_size = int(row["lot_size"])
                premium = _parse_bool(row["premium"])
                token = row["token"].strip().upper()
                price_token = float(row["price_token"])
                seller = row["seller"].strip()
                buyer = row["buyer"].strip()
            except (KeyError, TypeError, ValueError) as exc:
                reject(tx_id, f"malformed_row: {exc}")
                continue
            if not nft_ids or lot_size != len(nft_ids):
                reject(tx_id, "malformed_row: lot_size disagrees with nft_ids")
                continue
            if price_token <= 0:
                reject(tx_id, "zero_payment")
                continue
            if token not in SETTLEMENT_TOKENS:
                reject(tx_id, f"unsupported_token: {token}")
                continue
            if seller and seller.lower() == map_metadata.creator_address.lower():
                reject(tx_id, "primary_sale")
                continue
            try:
                resolved = [map_metadata.resolve(nft_id) for nft_id in nft_ids]
            except LookupError as exc:
                reject(tx_id, f"unknown_nft: {exc}")
                continue
            kept.append(
                Transaction(
                    tx_id=tx_id,
                    timestamp=timestamp,
                    parcels=tuple(coord for coord, _ in resolved),
                    premium=premium,
                    token=token,
                    price_token=price_token,
                    seller=seller,
                    buyer=buyer,
                    parcel_mint_waves=tuple(wave for _, wave in resolved),
                )
            )
    return kept, rejections


def convert_to_usd(tx: Transaction, rates: RateTable) -> Transaction:
    """Price the sale in USD at the daily rate of its settlement token."""
    rate = rates.rate(tx.token, tx.day)
    return replace(tx, price_usd=tx.price_token * rate)


def convert_transactions(
    transactions: Iterable[Transaction], rates: RateTable
) -> tuple[list[Transaction], list[Rejection]]:
    """Batch conversion; missing rates become per-record rejections."""
    kept: list[Transaction] = []
    rejections: list[Rejection] = []
    for tx in transactions:
        try:
            kept.append(convert_to_usd(tx, rates))
        except ConversionError as exc:
            rejections.append(Rejection(tx.tx_id, "convert", f"missing_rate: {exc}"))
            log.info("convert: rejected %s (%s)", tx.tx_id, exc)
    return kept, rejections


def winsorize(values, lower_q: float = 0.001, upper_q: float = 0.999) -> np.ndarray:
    """Clip values beyond the interpolated lower/upper quantiles to those quantiles.

    Quantiles use linear interpolation between order statistics; output order
    matches input order.
    """
    arr = as_float_vector(values, "values")
    if not 0 <= lower_q <= upper_q <= 1:
        raise InvalidInputError(f"bad quantile bounds ({lower_q}, {upper_q})")
    lo, hi = np.quantile(arr, [lower_q, upper_q], method="linear")
    return np.clip(arr, lo, hi)


# ---------------------------------------------------------------------------
# event-window panel
# ---------------------------------------------------------------------------


def validate_windows(groups: Sequence[AnnouncementGroup], window_days: int) -> None:
    """Reject announcement calendars whose +/- window ranges overlap."""
    ordered = sorted(groups, key=lambda g: (g.announce_date, g.group_id))
    for prev, cur in zip(ordered, ordered[1:]):
        gap = (cur.announce_date - prev.announce_date).days
        if gap <= 2 * window_days:
            raise ConfigurationError(
                f"event windows overlap: groups {prev.group_id} ({prev.announce_date}) "
                f"and {cur.group_id} ({cur.announce_date}) are {gap} days apart "
                f"with a +/-{window_days} day window"
            )


def build_event_samples(
    transactions: Iterable[Transaction],
    groups: Sequence[AnnouncementGroup],
    rates: RateTable,
    window_days: int = 7,
    groups_filter: Iterable[int] | None = None,
    contiguity_threshold: int = grid.CONTIGUITY_THRESHOLD,
) -> PanelBuildResult:
    """Match transactions to announcement windows and build regression rows.

    A transaction whose UTC calendar date lies within ``window_days`` of an
    announcement date (both endpoints inclusive) joins that group's panel;
    it is post iff it is timestamped at or after announcement day 00:00 UTC.
    Scattered bundles are excluded, USD prices are winsorized over the pooled
    retained sample before taking logs, and Near is the within-group median
    split on distance.
    """
    check_nonempty(groups, "groups")
    validate_windows(groups, window_days)
    keep_groups = set(groups_filter) if groups_filter is not None else None

    rejections: list[Rejection] = []

    def reject(tx_id: str, reason: str) -> None:
        rejections.append(Rejection(tx_id, "panel", reason))
        log.info("panel: rejected %s (%s)", tx_id, reason)

    ordered_groups = sorted(groups, key=lambda g: g.announce_date)
    announce_dates = [g.announce_date for g in ordered_groups]

    # candidate rows prior to pooled winsorization
    pend: list[tuple[Transaction, AnnouncementGroup, float, int, bool, float]] = []

    for tx in sorted(transactions, key=lambda t: (t.timestamp, t.tx_id)):
        tx_day = tx.day
        matches = [
            g for g, ann in zip(ordered_groups, announce_dates)
            if abs((tx_day - ann).days) <= window_days
        ]
        if len(matches) > 1:
            raise ConfigurationError(
                f"transaction {tx.tx_id} falls in {len(matches)} event windows"
            )
        if not matches:
            reject(tx.tx_id, "outside_event_windows")
            continue
        group = matches[0]
        if keep_groups is not None and group.group_id not in keep_groups:
            reject(tx.tx_id, f"group_filtered: {group.group_id}")
            continue
        if not grid.contiguity_check(tx.parcels, contiguity_threshold):
            reject(tx.tx_id, "scattered_bundle")
            continue
        if tx.price_usd is None:
            try:
                tx = convert_to_usd(tx, rates)
            except ConversionError as exc:
                reject(tx.tx_id, f"missing_rate: {exc}")
                continue
        try:
            btc = rates.btc_price(tx_day)
        except ConversionError as exc:
            reject(tx.tx_id, f"missing_rate: {exc}")
            continue
        nearest_idx, distance = grid.nearest_parcel_index(tx.parcels, group)
        if distance <= 0:
            reject(tx.tx_id, "zero_distance_to_region")
            continue
        post = tx.timestamp >= datetime(
            group.announce_date.year, group.announce_date.month,
            group.announce_date.day, tzinfo=timezone.utc,
        )
        mint_wave = tx.parcel_mint_waves[nearest_idx]
        pend.append((tx, group, distance, mint_wave, post, btc))

    if not pend:
        return PanelBuildResult([], rejections)

    prices = winsorize(np.array([row[0].price_usd for row in pend]))

    near_by_tx: dict[str, bool] = {}
    by_group: dict[int, list[tuple[str, float]]] = {}
    for tx, group, distance, _, _, _ in pend:
        by_group.setdefault(group.group_id, []).append((tx.tx_id, distance))
    for gid in sorted(by_group):
        near_by_tx.update(grid.assign_near(by_group[gid]))

    samples = [
        EventSample(
            tx_id=tx.tx_id,
            group_id=group.group_id,
            log_price=float(np.log(price)),
            distance=distance,
            log_distance=float(np.log(distance)),
            near=near_by_tx[tx.tx_id],
            post=post,
            multi=group.multi,
            log_lot_size=float(np.log(tx.lot_size)),
            premium=tx.premium,
            paid_sand=tx.token == "SAND",
            paid_weth=tx.token == "WETH",
            log_btc=float(np.log(btc)),
            mint_wave_id=mint_wave,
            day=tx.day,
            week=week_index(tx.day),
        )
        for (tx, group, distance, mint_wave, post, btc), price in zip(pend, prices)
    ]
    samples.sort(key=lambda s: (s.group_id, s.day, s.tx_id))
    return PanelBuildResult(samples, rejections)


def summary_stats(samples: Sequence[EventSample]) -> pd.DataFrame:
    """Per-group descriptive table (plus an 'All' row) of the retained panel."""
    check_nonempty(samples, "samples")
    frame = pd.DataFrame(
        {
            "group": [s.group_id for s in samples],
            "price": [float(np.exp(s.log_price)) for s in samples],
            "distance": [s.distance for s in samples],
            "lot_size": [float(np.exp(s.log_lot_size)) for s in samples],
            "premium": [float(s.premium) for s in samples],
            "sand": [float(s.paid_sand) for s in samples],
            "weth": [float(s.paid_weth) for s in samples],
        }
    )

    def describe(block: pd.DataFrame) -> dict:
        return {
            "obs": len(block),
            "price_mean": block["price"].mean(),
            "price_std": block["price"].std(ddof=1),
            "distance_mean": block["distance"].mean(),
            "distance_median": block["distance"].median(),
            "lot_size_mean": block["lot_size"].mean(),
            "premium_share": block["premium"].mean(),
            "sand_share": block["sand"].mean(),
            "weth_share": block["weth"].mean(),
        }

    rows = {gid: describe(block) for gid, block in frame.groupby("group", sort=True)}
    rows["All"] = describe(frame)
    table = pd.DataFrame.from_dict(rows, orient="index")
    table.index.name = "group"
    return table


# ---------------------------------------------------------------------------
# panel export
# ---------------------------------------------------------------------------


def panel_to_csv(samples: Sequence[EventSample]) -> str:
    """Render the panel as CSV, one sample per row, columns = field names."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(EVENT_SAMPLE_FIELDS)
    for s in samples:
        writer.writerow(
            [
                s.tx_id, s.group_id, repr(s.log_price), repr(s.distance),
                repr(s.log_distance), int(s.near), int(s.post), int(s.multi),
                repr(s.log_lot_size), int(s.premium), int(s.paid_sand),
                int(s.paid_weth), repr(s.log_btc), s.mint_wave_id,
                s.day.isoformat(), s.week,
            ]
        )
    return buf.getvalue()


def write_panel_csv(samples: Sequence[EventSample], path: str | Path) -> None:
    atomic_write_text(path, panel_to_csv(samples))


def read_panel_csv(path: str | Path) -> list[EventSample]:
    """Load a panel previously written by :func:`write_panel_csv`."""
    samples = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            samples.append(
                EventSample(
                    tx_id=row["tx_id"],
                    group_id=int(row["group_id"]),
                    log_price=float(row["log_price"]),
                    distance=float(row["distance"]),
                    log_distance=float(row["log_distance"]),
                    near=bool(int(row["near"])),
                    post=bool(int(row["post"])),
                    multi=bool(int(row["multi"])),
                    log_lot_size=float(row["log_lot_size"]),
                    premium=bool(int(row["premium"])),
                    paid_sand=bool(int(row["paid_sand"])),
                    paid_weth=bool(int(row["paid_weth"])),
                    log_btc=float(row["log_btc"]),
                    mint_wave_id=int(row["mint_wave_id"]),
                    day=date.fromisoformat(row["day"]),
                    week=int(row["week"]),
                )
            )
    return samples
