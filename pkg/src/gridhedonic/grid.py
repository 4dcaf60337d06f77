"""Grid geometry and spatial treatment assignment.

Coordinate conventions:

- The world is a square grid of ``map_size`` x ``map_size`` parcels
  (default 408), addressed by integer coordinates ``0 <= x, y < map_size``.
- Distances are Euclidean between parcel coordinates (centers, not edges).
- The distance from a transacted bundle to an announced region is the
  minimum over all (bundle parcel, region parcel) pairs; for announcements
  covering several regions it is the minimum across the regions.

All operations here are pure functions on immutable inputs and are safe to
call from concurrent workers.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .validation import check_nonempty

log = logging.getLogger(__name__)

#: default edge length of the world grid
MAP_SIZE = 408

#: largest estate edge; bundles with a pairwise Chebyshev spread beyond this
#: are treated as scattered and excluded from panels
CONTIGUITY_THRESHOLD = 24


@dataclass(frozen=True, order=True)
class Coord:
    """Integer parcel coordinate on the grid."""

    x: int
    y: int

    def in_map(self, map_size: int = MAP_SIZE) -> bool:
        return 0 <= self.x < map_size and 0 <= self.y < map_size


@dataclass(frozen=True)
class Region:
    """A non-empty set of parcels, e.g. the footprint of one sale wave."""

    parcels: frozenset[Coord]

    def __post_init__(self) -> None:
        if not self.parcels:
            raise InvalidInputError("Region must contain at least one parcel")

    def __len__(self) -> int:
        return len(self.parcels)

    @cached_property
    def coords_array(self) -> np.ndarray:
        """(n, 2) float array of parcel coordinates, sorted for determinism."""
        pts = sorted((p.x, p.y) for p in self.parcels)
        return np.array(pts, dtype=np.float64)

    def validate_within(self, map_size: int = MAP_SIZE) -> None:
        for p in self.parcels:
            if not p.in_map(map_size):
                raise ConfigurationError(f"parcel {p} outside the {map_size}x{map_size} map")

    @classmethod
    def from_rects(cls, rects: Iterable[Sequence[int]]) -> "Region":
        """Expand inclusive axis-aligned rectangles ``[x0, y0, x1, y1]``."""
        parcels = set()
        for rect in rects:
            x0, y0, x1, y1 = (int(v) for v in rect)
            if x1 < x0 or y1 < y0:
                raise ConfigurationError(f"malformed rectangle {rect!r}")
            parcels.update(Coord(x, y) for x in range(x0, x1 + 1) for y in range(y0, y1 + 1))
        return cls(frozenset(parcels))

    @classmethod
    def from_coords(cls, coords: Iterable[Sequence[int]]) -> "Region":
        return cls(frozenset(Coord(int(x), int(y)) for x, y in coords))


@dataclass(frozen=True)
class Wave:
    """One minting wave: a region of new parcels announced and later sold."""

    wave_id: int
    group_id: int
    name: str
    announce_date: date
    sale_date: date
    region: Region
    land_offered: int = 0

    def __post_init__(self) -> None:
        if self.sale_date < self.announce_date:
            raise ConfigurationError(
                f"wave {self.wave_id}: sale date {self.sale_date} precedes "
                f"announcement {self.announce_date}"
            )


@dataclass(frozen=True)
class AnnouncementGroup:
    """All waves sharing one announcement date; ``multi`` marks joint releases."""

    group_id: int
    announce_date: date
    waves: tuple[Wave, ...]

    @property
    def multi(self) -> bool:
        return len(self.waves) > 1

    @cached_property
    def coords_array(self) -> np.ndarray:
        """(n, 2) array of every parcel across the group's wave regions."""
        return np.concatenate([w.region.coords_array for w in self.waves])


# ---------------------------------------------------------------------------
# distance operations
# ---------------------------------------------------------------------------


def euclidean_distance(a: Coord, b: Coord) -> float:
    """Straight-line distance between two parcel coordinates."""
    return math.hypot(a.x - b.x, a.y - b.y)


def _parcels_array(parcels: Sequence[Coord]) -> np.ndarray:
    return np.array([(p.x, p.y) for p in parcels], dtype=np.float64)


def parcel_distances(parcels_xy: np.ndarray, region_xy: np.ndarray) -> np.ndarray:
    """Per-parcel minimum Euclidean distance from ``parcels_xy`` to ``region_xy``.

    Both arguments are (n, 2) float arrays; returns shape (len(parcels_xy),).
    """
    diff = parcels_xy[:, None, :] - region_xy[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2)).min(axis=1)


def distance_to_region(parcels: Sequence[Coord], region: Region) -> float:
    """Minimum distance over all (bundle parcel, region parcel) pairs."""
    parcels = check_nonempty(parcels, "parcels")
    return float(parcel_distances(_parcels_array(parcels), region.coords_array).min())


def distance_to_announcement(parcels: Sequence[Coord], group: AnnouncementGroup) -> float:
    """Nearest distance between the bundle and any of the group's regions."""
    parcels = check_nonempty(parcels, "parcels")
    if not group.waves:
        raise InvalidInputError(f"announcement group {group.group_id} has no waves")
    return float(parcel_distances(_parcels_array(parcels), group.coords_array).min())


def nearest_parcel_index(parcels: Sequence[Coord], group: AnnouncementGroup) -> tuple[int, float]:
    """Index of the bundle parcel closest to the announcement, with its distance.

    Ties resolve to the lowest index, which is deterministic because the
    caller controls parcel order.
    """
    parcels = check_nonempty(parcels, "parcels")
    dists = parcel_distances(_parcels_array(parcels), group.coords_array)
    idx = int(np.argmin(dists))
    return idx, float(dists[idx])


def assign_near(samples_with_distances: Iterable[tuple[object, float]]) -> dict:
    """Median-split one announcement group into near (treated) and far parcels.

    The median is the 50th percentile with linear interpolation between order
    statistics; a sample is near iff its distance is strictly below the
    median, so exact ties at the median land in the control group.
    """
    pairs = list(samples_with_distances)
    if len(pairs) < 2:
        from .errors import DegenerateGroupError

        raise DegenerateGroupError(
            f"need at least 2 samples for a median split, got {len(pairs)}"
        )
    distances = np.array([d for _, d in pairs], dtype=np.float64)
    median = float(np.median(distances))
    return {sid: float(d) < median for (sid, _), d in zip(pairs, distances)}


def contiguity_check(parcels: Sequence[Coord], threshold: int = CONTIGUITY_THRESHOLD) -> bool:
    """True iff the bundle's maximum pairwise Chebyshev distance is <= threshold.

    For a point set the max pairwise Chebyshev distance equals the larger of
    the x- and y-coordinate ranges, so this is O(n).
    """
    parcels = check_nonempty(parcels, "parcels")
    xs = [p.x for p in parcels]
    ys = [p.y for p in parcels]
    return max(max(xs) - min(xs), max(ys) - min(ys)) <= threshold


# ---------------------------------------------------------------------------
# wave file loading
# ---------------------------------------------------------------------------


def _parse_region(spec: Mapping) -> Region:
    if "rects" in spec:
        return Region.from_rects(spec["rects"])
    if "coords" in spec:
        return Region.from_coords(spec["coords"])
    raise ConfigurationError(f"region must define 'rects' or 'coords', got {sorted(spec)}")


def _parse_wave(row: Mapping) -> Wave:
    try:
        region = _parse_region(row["region"])
        wave = Wave(
            wave_id=int(row["wave_id"]),
            group_id=int(row["group_id"]),
            name=str(row.get("name", f"wave {row['wave_id']}")),
            announce_date=date.fromisoformat(row["announce_date"]),
            sale_date=date.fromisoformat(row["sale_date"]),
            region=region,
            land_offered=int(row.get("land_offered", 0)) or len(region),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigurationError(f"malformed wave record {row!r}: {exc}") from exc
    if wave.land_offered != len(region):
        log.warning(
            "wave %d: land_offered=%d but region enumerates %d parcels",
            wave.wave_id, wave.land_offered, len(region),
        )
    return wave


def load_waves(path: str | Path) -> tuple[list[Wave], int]:
    """Read a wave/region JSON file; returns the waves and the map size.

    Accepts either a bare list of wave records or an object with ``waves``
    and optional ``map_size`` keys.
    """
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if isinstance(payload, list):
        rows, map_size = payload, MAP_SIZE
    else:
        rows = payload.get("waves", [])
        map_size = int(payload.get("map_size", MAP_SIZE))
    waves = [_parse_wave(row) for row in rows]
    if not waves:
        raise ConfigurationError(f"no waves found in {path}")
    for wave in waves:
        wave.region.validate_within(map_size)
    return waves, map_size


def group_waves(waves: Sequence[Wave]) -> list[AnnouncementGroup]:
    """Collect waves into announcement groups, validating shared dates."""
    by_group: dict[int, list[Wave]] = {}
    for wave in waves:
        by_group.setdefault(wave.group_id, []).append(wave)
    groups = []
    for gid in sorted(by_group):
        members = sorted(by_group[gid], key=lambda w: w.wave_id)
        dates = {w.announce_date for w in members}
        if len(dates) > 1:
            raise ConfigurationError(
                f"group {gid} mixes announcement dates {sorted(map(str, dates))}"
            )
        groups.append(AnnouncementGroup(gid, members[0].announce_date, tuple(members)))
    return groups
