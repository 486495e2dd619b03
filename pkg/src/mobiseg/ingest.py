"""Ping ingestion and home/work anchor inference.

Home pings fall in a night window (default 22:00-07:00, wrapping midnight),
work pings in an office window (default 09:00-17:00); both half-open and
weekdays only.  The weekday test uses the ping's own calendar date.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from datetime import datetime, time

WEEKDAYS = range(5)  # Monday..Friday


class DataError(ValueError):
    """Malformed input data (bad header, unparseable row...)."""


@dataclass(frozen=True)
class PingRecord:
    user_id: str
    tower_id: str
    timestamp: datetime


@dataclass(frozen=True)
class TimeWindow:
    """Half-open daily window [start, end); wraps midnight when start >= end."""

    start: time
    end: time

    def contains(self, t: time) -> bool:
        if self.start < self.end:
            return self.start <= t < self.end
        return t >= self.start or t < self.end

    @classmethod
    def parse(cls, text: str) -> "TimeWindow":
        try:
            lo, hi = text.split("-")
            return cls(time.fromisoformat(lo.strip()), time.fromisoformat(hi.strip()))
        except ValueError as exc:
            raise ValueError(f"bad time window {text!r}, expected 'HH:MM-HH:MM'") from exc

    def __str__(self) -> str:
        return f"{self.start:%H:%M}-{self.end:%H:%M}"


HOME_WINDOW = TimeWindow(time(22, 0), time(7, 0))
WORK_WINDOW = TimeWindow(time(9, 0), time(17, 0))


@dataclass(frozen=True)
class UserAnchor:
    user_id: str
    home_tower: str
    work_tower: str
    n_pings: int = 0
    n_home: int = 0
    n_work: int = 0
    community: int | None = None
    weekdays_observed: frozenset[int] = frozenset()


@dataclass
class RejectionLog:
    """Per-user rejection tally; one reason per user, checked in order."""

    accepted: int = 0
    dropped_tower: int = 0
    no_pings_in_windows: int = 0
    too_few_home: int = 0
    too_few_work: int = 0
    low_anchor_share: int = 0
    dropped_pings: int = 0  # pings at filtered towers (not a user count)

    REASONS = (
        "dropped_tower",
        "no_pings_in_windows",
        "too_few_home",
        "too_few_work",
        "low_anchor_share",
    )

    @property
    def total_users(self) -> int:
        return self.accepted + sum(getattr(self, r) for r in self.REASONS)

    def as_dict(self) -> dict[str, int]:
        keys = ("accepted", *self.REASONS, "dropped_pings")
        return {k: getattr(self, k) for k in keys}


def parse_pings(path) -> tuple[list[PingRecord], int]:
    """Read a ping CSV with header ``user_id,tower_id,timestamp`` (ISO-8601).

    Malformed lines (wrong field count, empty ids, bad timestamp) are skipped
    and counted; a missing or wrong header is fatal.  Returns
    (records, malformed_count) with input order preserved.
    """
    out: list[PingRecord] = []
    malformed = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_id", "tower_id", "timestamp"]:
            raise DataError(f"{path}: expected header user_id,tower_id,timestamp, got {header}")
        for row in reader:
            if not row:
                continue
            if len(row) != 3 or not row[0] or not row[1]:
                malformed += 1
                continue
            try:
                ts = datetime.fromisoformat(row[2])
            except ValueError:
                malformed += 1
                continue
            out.append(PingRecord(user_id=row[0], tower_id=row[1], timestamp=ts))
    return out, malformed


def _argmax_tower(counts: dict[str, int]) -> str:
    # highest count, ties broken by lowest tower_id
    return min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]


def infer_home_work(
    pings: list[PingRecord],
    kept_towers: set[str] | None = None,
    *,
    home_window: TimeWindow = HOME_WINDOW,
    work_window: TimeWindow = WORK_WINDOW,
    min_anchor_pings: int = 5,
    anchor_share: float = 0.5,
    share_rule: str = "combined",
    weekday: int | None = None,
) -> tuple[list[UserAnchor], RejectionLog]:
    """Infer one (home, work) tower pair per user.

    A user's home (work) tower is the one with the most pings inside the home
    (work) window on weekdays, ties to the lowest tower_id; home == work is a
    legitimate outcome.  Users are accepted when both anchors collect at
    least ``min_anchor_pings`` pings and their anchor towers carry more than
    ``anchor_share`` of all their pings.

    Parameters
    ----------
    pings : list of PingRecord
    kept_towers : set of str, optional
        If given, pings at other towers are dropped (and counted) first.
    share_rule : {"combined", "per_anchor"}
        "combined": pings at the home or work tower, over all hours, must
        jointly exceed ``anchor_share`` of the user's pings.  "per_anchor":
        stricter - one anchor tower alone must carry that share.
    weekday : int, optional
        Restrict to pings on that weekday (0=Monday) before inference.

    Returns
    -------
    (anchors, log)
        Anchors sorted by user_id; log tallies one rejection reason per user.
    """
    if share_rule not in ("combined", "per_anchor"):
        raise ValueError(f"unknown share_rule {share_rule!r}")
    log = RejectionLog()
    by_user: dict[str, list[PingRecord]] = {}
    for p in pings:
        by_user.setdefault(p.user_id, []).append(p)

    anchors: list[UserAnchor] = []
    for user_id in sorted(by_user):
        records = by_user[user_id]
        if kept_towers is not None:
            n_before = len(records)
            records = [p for p in records if p.tower_id in kept_towers]
            log.dropped_pings += n_before - len(records)
            if not records:
                log.dropped_tower += 1
                continue
        if weekday is not None:
            records = [p for p in records if p.timestamp.weekday() == weekday]
            if not records:
                continue  # not observed that day: out of scope, not a rejection

        home_counts: dict[str, int] = {}
        work_counts: dict[str, int] = {}
        total_counts: dict[str, int] = {}
        days: set[int] = set()
        for p in records:
            wd = p.timestamp.weekday()
            days.add(wd)
            total_counts[p.tower_id] = total_counts.get(p.tower_id, 0) + 1
            if wd not in WEEKDAYS:
                continue
            t = p.timestamp.time()
            if home_window.contains(t):
                home_counts[p.tower_id] = home_counts.get(p.tower_id, 0) + 1
            if work_window.contains(t):
                work_counts[p.tower_id] = work_counts.get(p.tower_id, 0) + 1

        if not home_counts and not work_counts:
            log.no_pings_in_windows += 1
            continue
        if not home_counts or max(home_counts.values()) < min_anchor_pings:
            log.too_few_home += 1
            continue
        if not work_counts or max(work_counts.values()) < min_anchor_pings:
            log.too_few_work += 1
            continue
        home = _argmax_tower(home_counts)
        work = _argmax_tower(work_counts)

        if share_rule == "combined":
            anchor_pings = sum(total_counts[t] for t in {home, work})
        else:
            anchor_pings = max(total_counts[home], total_counts[work])
        ok = anchor_pings / len(records) > anchor_share
        if not ok:
            log.low_anchor_share += 1
            continue

        log.accepted += 1
        anchors.append(
            UserAnchor(
                user_id=user_id,
                home_tower=home,
                work_tower=work,
                n_pings=len(records),
                n_home=home_counts[home],
                n_work=work_counts[work],
                weekdays_observed=frozenset(days),
            )
        )
    return anchors, log


def label_anchors(
    anchors: list[UserAnchor], assignment: dict[str, int]
) -> tuple[list[UserAnchor], int]:
    """Attach the home tower's community to each anchor.

    Users whose home or work tower is absent from ``assignment`` (pruned
    communities) are excluded.  Returns (labelled anchors, n_excluded).
    """
    out: list[UserAnchor] = []
    excluded = 0
    for a in anchors:
        if a.home_tower in assignment and a.work_tower in assignment:
            out.append(replace(a, community=assignment[a.home_tower]))
        else:
            excluded += 1
    return out, excluded


def observed_weekdays(
    pings: list[PingRecord], kept_towers: set[str] | None = None
) -> dict[str, frozenset[int]]:
    """Weekdays (0=Monday) on which each user pinged, after tower filtering."""
    days: dict[str, set[int]] = {}
    for p in pings:
        if kept_towers is not None and p.tower_id not in kept_towers:
            continue
        days.setdefault(p.user_id, set()).add(p.timestamp.weekday())
    return {u: frozenset(s) for u, s in days.items()}
