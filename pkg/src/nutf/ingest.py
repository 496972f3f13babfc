"""Raw location updates -> per-(user, slot) candidate category sets.

Pipeline: estimate dwell times from consecutive timestamps and drop short
visits, quantize local time into slots, keep the longest-dwell update per
(user, slot), intersect each update's uncertainty circle with the venue
catalog, and map venue categories through a caller-supplied taxonomy.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import CandidateSets, ProblemDims

EARTH_RADIUS_M = 6_371_000.0

# Non-uniform dayparts: 1am-7am is one bin (little night activity), then
# two-hour bins; hours [23, 24) and the following [0, 1) share the last bin.
_DAYPART_EDGES = (1, 7, 9, 11, 13, 15, 17, 19, 21, 23)

UPDATES_HEADER = ["user_id", "timestamp_utc", "lat", "lon", "error_radius_m",
                  "utc_offset_minutes"]
VENUES_HEADER = ["venue_id", "category", "lat", "lon", "radius_m"]
CATMAP_HEADER = ["raw_category", "canonical_category"]


class InputDataError(ValueError):
    """Malformed input file; the message names the file and line."""


@dataclass(frozen=True)
class LocationUpdate:
    user_id: str
    timestamp_utc: float
    lat: float
    lon: float
    error_radius_m: float
    utc_offset_minutes: int

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of bounds")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} out of bounds")
        if not (math.isfinite(self.error_radius_m) and self.error_radius_m >= 0):
            raise ValueError(f"error radius {self.error_radius_m} must be finite and >= 0")


@dataclass(frozen=True)
class Venue:
    venue_id: str
    category: str
    lat: float
    lon: float
    radius_m: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of bounds")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} out of bounds")
        if not self.radius_m > 0:
            raise ValueError(f"venue radius {self.radius_m} must be > 0")


@dataclass(frozen=True)
class SlotScheme:
    """Maps local timestamps to slot indices counted from epoch_day.

    ``daypart`` uses the 10 non-uniform bins above; ``hourly`` uses 24.
    Slot index = days_since_epoch_day * bins_per_day + bin_of_day.
    """

    mode: str = "daypart"
    epoch_day: dt.date = dt.date(1970, 1, 1)

    def __post_init__(self) -> None:
        if self.mode not in ("daypart", "hourly"):
            raise ValueError(f"unknown slot mode {self.mode!r}")

    @property
    def bins_per_day(self) -> int:
        return 10 if self.mode == "daypart" else 24


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters (mean Earth radius 6371 km)."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dlam / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def dwell_filter(
    updates: Sequence[LocationUpdate],
    min_dwell_s: float,
) -> list[tuple[LocationUpdate, float]]:
    """Annotate each update with its dwell time and drop short visits.

    Dwell is the gap to the same user's next update; each user's last
    update has no successor, so its dwell is unknowable and it is dropped.
    Input may interleave users, but every user's subsequence must be
    time-ordered (rejected otherwise). Order of survivors is preserved.
    """
    last_seen: dict[str, float] = {}
    per_user: dict[str, list[tuple[int, LocationUpdate]]] = {}
    for pos, upd in enumerate(updates):
        prev = last_seen.get(upd.user_id)
        if prev is not None and upd.timestamp_utc < prev:
            raise ValueError(f"updates for user {upd.user_id!r} are not time-ordered")
        last_seen[upd.user_id] = upd.timestamp_utc
        per_user.setdefault(upd.user_id, []).append((pos, upd))
    kept: list[tuple[int, LocationUpdate, float]] = []
    for seq in per_user.values():
        for (pos, upd), (_, nxt) in zip(seq, seq[1:]):
            dwell = nxt.timestamp_utc - upd.timestamp_utc
            if dwell >= min_dwell_s:
                kept.append((pos, upd, dwell))
    kept.sort(key=lambda t: t[0])
    return [(upd, dwell) for _, upd, dwell in kept]


class VenueIndex:
    """Fixed geographic grid over the venue catalog (~0.01 degree cells).

    Queries scan the neighbor cells out to the requested radius plus the
    largest venue radius, then confirm each hit with the exact haversine
    test, so results match a brute-force scan.
    """

    CELL_DEG = 0.01
    _M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0

    def __init__(self, venues: Sequence[Venue]):
        self.venues = list(venues)
        self.max_radius_m = max((v.radius_m for v in self.venues), default=0.0)
        self._cells: dict[tuple[int, int], list[int]] = {}
        self._lon_cells = int(round(360.0 / self.CELL_DEG))
        for idx, v in enumerate(self.venues):
            self._cells.setdefault(self._cell_of(v.lat, v.lon), []).append(idx)

    def _cell_of(self, lat: float, lon: float) -> tuple[int, int]:
        return (
            int(math.floor(lat / self.CELL_DEG)),
            int(math.floor(lon / self.CELL_DEG)) % self._lon_cells,
        )

    def query(self, lat: float, lon: float, radius_m: float) -> list[int]:
        """Indices of venues whose circle intersects the query circle."""
        if not self.venues:
            return []
        reach = radius_m + self.max_radius_m
        dlat_cells = int(math.ceil(reach / self._M_PER_DEG / self.CELL_DEG)) + 1
        cos_lat = math.cos(math.radians(min(89.99, abs(lat))))
        dlon_deg = reach / (self._M_PER_DEG * max(cos_lat, 1e-9))
        dlon_cells = int(math.ceil(dlon_deg / self.CELL_DEG)) + 1
        dlon_cells = min(dlon_cells, self._lon_cells // 2 + 1)
        lat0, lon0 = self._cell_of(lat, lon)
        hits = []
        for dl in range(-dlat_cells, dlat_cells + 1):
            for dn in range(-dlon_cells, dlon_cells + 1):
                cell = (lat0 + dl, (lon0 + dn) % self._lon_cells)
                for idx in self._cells.get(cell, ()):
                    v = self.venues[idx]
                    if haversine_m(lat, lon, v.lat, v.lon) <= radius_m + v.radius_m:
                        hits.append(idx)
        return sorted(set(hits))


def candidate_venues(update: LocationUpdate, index: VenueIndex) -> list[Venue]:
    """Venues intersecting the update's uncertainty circle.

    A venue is a candidate when haversine(update, venue) <= error_radius +
    venue_radius; the boundary is inclusive. An empty result is valid.
    """
    return [index.venues[i] for i in index.query(update.lat, update.lon, update.error_radius_m)]


def slot_of(timestamp_utc: float, utc_offset_minutes: int, scheme: SlotScheme) -> int:
    """Slot index of the update's local time under the scheme.

    Local time is UTC plus the per-record offset. Timestamps before the
    scheme's epoch day (after the midnight-straddle adjustment) are
    outside the window and rejected.
    """
    local = timestamp_utc + utc_offset_minutes * 60.0
    day = math.floor(local / 86400.0)
    sec_of_day = local - day * 86400.0
    hour = sec_of_day / 3600.0
    if scheme.mode == "hourly":
        binned = int(hour)
    else:
        if hour < 1.0:
            # [0, 1) belongs to the previous day's last bin
            day -= 1
            binned = 9
        elif hour >= 23.0:
            binned = 9
        else:
            binned = bisect_right(_DAYPART_EDGES, hour) - 1
    epoch_days = (scheme.epoch_day - dt.date(1970, 1, 1)).days
    slot = (day - epoch_days) * scheme.bins_per_day + binned
    if slot < 0:
        raise ValueError(
            f"timestamp {timestamp_utc} falls before the window start {scheme.epoch_day}"
        )
    return slot


@dataclass
class IngestResult:
    omega: CandidateSets
    dims: ProblemDims | None  # None when no update produced a candidate set
    user_ids: list[str]
    category_names: list[str]


def build_candidate_sets(
    updates: Iterable[LocationUpdate],
    venues: Sequence[Venue],
    scheme: SlotScheme,
    category_map: Mapping[str, str],
    min_dwell_s: float,
    other_category: str | None = None,
) -> IngestResult:
    """Run the full ingestion pipeline.

    Updates are sorted per user by timestamp, dwell-filtered, assigned to
    slots, deduplicated per (user, slot) by keeping the longest dwell
    (ties keep the earliest), and intersected with the venue catalog.
    Venue categories map through ``category_map``; unknown raw categories
    raise unless ``other_category`` provides a fallback canonical name.

    The category axis covers every canonical name in the map (sorted),
    not just the observed ones, so the index stays stable across data
    sets sharing a taxonomy. Users whose updates all fall away are absent
    from the user index.
    """
    canonical = sorted(set(category_map.values()) | ({other_category} if other_category else set()))
    cat_index = {name: i for i, name in enumerate(canonical)}

    ordered = sorted(updates, key=lambda u: (u.user_id, u.timestamp_utc))
    with_dwell = dwell_filter(ordered, min_dwell_s)

    # longest dwell wins each (user, slot); ties keep the earlier update
    best: dict[tuple[str, int], tuple[LocationUpdate, float]] = {}
    for upd, dwell in with_dwell:
        slot = slot_of(upd.timestamp_utc, upd.utc_offset_minutes, scheme)
        key = (upd.user_id, slot)
        cur = best.get(key)
        if cur is None or dwell > cur[1]:
            best[key] = (upd, dwell)

    index = VenueIndex(venues)
    blocks: dict[tuple[str, int], set[int]] = {}
    for (uid, slot), (upd, _) in best.items():
        cats: set[int] = set()
        for v in candidate_venues(upd, index):
            name = category_map.get(v.category)
            if name is None:
                if other_category is None:
                    raise ValueError(
                        f"venue {v.venue_id!r} has unmapped category {v.category!r}"
                    )
                name = other_category
            cats.add(cat_index[name])
        if cats:
            blocks[(uid, slot)] = cats

    if not blocks:
        return IngestResult(
            omega=CandidateSets.from_blocks([]),
            dims=None,
            user_ids=[],
            category_names=canonical,
        )

    user_ids = sorted({uid for uid, _ in blocks})
    user_index = {uid: i for i, uid in enumerate(user_ids)}
    n_slots = max(slot for _, slot in blocks) + 1
    omega = CandidateSets.from_blocks(
        (user_index[uid], slot, sorted(cats)) for (uid, slot), cats in blocks.items()
    )
    dims = ProblemDims(len(user_ids), n_slots, len(canonical))
    return IngestResult(omega=omega, dims=dims, user_ids=user_ids, category_names=canonical)


# -- CSV readers ---------------------------------------------------------


def _open_rows(path, expected_header: list[str], label: str):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputDataError(f"{label}: file is empty") from None
        if [h.strip() for h in header] != expected_header:
            raise InputDataError(
                f"{label} line 1: expected header {','.join(expected_header)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(expected_header):
                raise InputDataError(
                    f"{label} line {lineno}: expected {len(expected_header)} fields, "
                    f"got {len(row)}"
                )
            yield lineno, row


def read_updates_csv(path) -> list[LocationUpdate]:
    out = []
    for lineno, row in _open_rows(path, UPDATES_HEADER, str(path)):
        try:
            out.append(
                LocationUpdate(
                    user_id=row[0],
                    timestamp_utc=float(row[1]),
                    lat=float(row[2]),
                    lon=float(row[3]),
                    error_radius_m=float(row[4]),
                    utc_offset_minutes=int(row[5]),
                )
            )
        except ValueError as exc:
            raise InputDataError(f"{path} line {lineno}: {exc}") from None
    return out


def read_venues_csv(path) -> list[Venue]:
    out = []
    for lineno, row in _open_rows(path, VENUES_HEADER, str(path)):
        try:
            out.append(
                Venue(
                    venue_id=row[0],
                    category=row[1],
                    lat=float(row[2]),
                    lon=float(row[3]),
                    radius_m=float(row[4]),
                )
            )
        except ValueError as exc:
            raise InputDataError(f"{path} line {lineno}: {exc}") from None
    return out


def read_category_map_csv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, row in _open_rows(path, CATMAP_HEADER, str(path)):
        raw, canon = row[0], row[1]
        if raw in out and out[raw] != canon:
            raise InputDataError(
                f"{path} line {lineno}: raw category {raw!r} mapped twice"
            )
        out[raw] = canon
    return out
