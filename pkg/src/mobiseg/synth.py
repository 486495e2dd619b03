"""Synthetic city generator with planted community and SEL structure.

Towers are scattered (Gaussian) around community centroids placed on a
regular polygon whose spacing is ``separation`` scatter units; users get a
home tower in their community and a work tower inside it with probability
1 - mu.  Ping records are emitted strictly inside the anchor windows with
margins, so anchor inference recovers the planted truth exactly.

A ring of inert guard towers (no pings, no users) surrounds the clusters so
that every content tower's Voronoi cell lies fully inside the emitted urban
rectangle; guards absorb the boundary cells instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta

import numpy as np

from .geometry import SEL_LABELS, Point, Polygon, TowerCell, compute_voronoi
from .ingest import PingRecord, UserAnchor


class SynthError(ValueError):
    """Invalid or infeasible synthesis configuration."""


@dataclass(frozen=True)
class SynthConfig:
    n_towers: int = 200
    n_users: int = 5000
    n_communities: int = 4
    mu: float = 0.1  # probability of working outside the home community
    distance_scale: float = 3000.0  # tower scatter sigma, metres
    separation: float = 3.0  # centroid spacing in scatter units
    seed: int = 0
    start: date = date(2015, 3, 2)  # a Monday
    n_weeks: int = 2
    guards: bool = True
    max_noise_pings: int = 2

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise SynthError(f"mu must be in [0, 1], got {self.mu!r}")
        if self.n_communities < 1 or self.n_towers < self.n_communities or self.n_users < 1:
            raise SynthError("counts must be positive and towers >= communities")
        if self.distance_scale <= 0:
            raise SynthError("distance_scale must be positive")
        if self.n_communities > 1 and self.separation < 2.0:
            raise SynthError(
                f"separation {self.separation!r} < 2.0 scatter units: "
                "clusters overlap beyond tolerance"
            )
        if self.start.weekday() != 0:
            raise SynthError("start must be a Monday")

    def uniform_mu(self) -> float:
        """mu that makes workplaces uniform over all towers (equal cluster sizes)."""
        return (self.n_communities - 1) / self.n_communities


@dataclass(frozen=True)
class SynthCity:
    towers: list[tuple[str, Point]]  # content + guard sites
    guard_ids: frozenset[str]
    urban: Polygon
    blocks: list[tuple[Polygon, str]]
    pings: list[PingRecord]
    tower_community: dict[str, int]  # planted label per content tower
    anchors: list[UserAnchor]  # planted truth, community label set
    config: SynthConfig = field(repr=False)

    def content_cells(self) -> list[TowerCell]:
        """Content tower sites wrapped as cells (unit placeholder polygons)."""
        square = Polygon.rectangle(0.0, 0.0, 1.0, 1.0)
        return [
            TowerCell(tower_id=tid, site=p, cell=square)
            for tid, p in self.towers
            if tid not in self.guard_ids
        ]


def _centroids(k: int, spacing: float) -> np.ndarray:
    if k == 1:
        return np.zeros((1, 2))
    radius = spacing / (2.0 * math.sin(math.pi / k))
    angles = 2.0 * math.pi * np.arange(k) / k
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def _community_sizes(total: int, k: int) -> list[int]:
    base, extra = divmod(total, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def generate_city(cfg: SynthConfig) -> SynthCity:
    """Build the synthetic city; fully determined by ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    k = cfg.n_communities
    sigma = cfg.distance_scale
    centroids = _centroids(k, cfg.separation * sigma)

    # --- towers: Gaussian scatter per community, ids zero-padded ------------
    sizes = _community_sizes(cfg.n_towers, k)
    towers: list[tuple[str, Point]] = []
    tower_community: dict[str, int] = {}
    community_towers: list[list[str]] = [[] for _ in range(k)]
    seen: set[tuple[float, float]] = set()
    idx = 0
    for c in range(k):
        for _ in range(sizes[c]):
            while True:
                x, y = centroids[c] + rng.normal(0.0, sigma, 2)
                if (x, y) not in seen:
                    seen.add((x, y))
                    break
            tid = f"t{idx:04d}"
            towers.append((tid, Point(float(x), float(y))))
            tower_community[tid] = c
            community_towers[c].append(tid)
            idx += 1

    # --- guard ring and urban rectangle -------------------------------------
    xs = np.array([p.x for _, p in towers])
    ys = np.array([p.y for _, p in towers])
    minx, maxx = float(xs.min()), float(xs.max())
    miny, maxy = float(ys.min()), float(ys.max())
    guard_ids: set[str] = set()
    if cfg.guards:
        gap = 1.5 * sigma
        gx0, gx1 = minx - gap, maxx + gap
        gy0, gy1 = miny - gap, maxy + gap
        n_side = max(8, int(math.ceil(max(gx1 - gx0, gy1 - gy0) / sigma)))
        # linspace endpoints are exact, so the four corners dedup cleanly
        xs_line = np.linspace(gx0, gx1, n_side)
        ys_line = np.linspace(gy0, gy1, n_side)
        g = 0
        for x, y in (
            [(float(x), gy0) for x in xs_line]
            + [(float(x), gy1) for x in xs_line]
            + [(gx0, float(y)) for y in ys_line]
            + [(gx1, float(y)) for y in ys_line]
        ):
            if (x, y) in seen:
                continue
            seen.add((x, y))
            tid = f"x{g:04d}"
            towers.append((tid, Point(x, y)))
            guard_ids.add(tid)
            g += 1
        urban = Polygon.rectangle(gx0 - 0.5 * sigma, gy0 - 0.5 * sigma,
                                  gx1 + 0.5 * sigma, gy1 + 0.5 * sigma)
    else:
        pad = 1.5 * sigma
        urban = Polygon.rectangle(minx - pad, miny - pad, maxx + pad, maxy + pad)

    # --- SEL blocks: centroid Voronoi over the urban rectangle --------------
    if k == 1:
        blocks = [(urban, SEL_LABELS[0])]
    else:
        block_sites = [(f"c{c}", Point(float(x), float(y))) for c, (x, y) in enumerate(centroids)]
        block_cells = compute_voronoi(block_sites, urban)
        blocks = [(cell.cell, SEL_LABELS[c % len(SEL_LABELS)]) for c, cell in enumerate(block_cells)]

    # --- users: planted anchors ----------------------------------------------
    user_sizes = _community_sizes(cfg.n_users, k)
    anchors: list[UserAnchor] = []
    uid = 0
    for c in range(k):
        own = community_towers[c]
        others = [t for cc in range(k) if cc != c for t in community_towers[cc]]
        for _ in range(user_sizes[c]):
            home = own[int(rng.integers(len(own)))]
            if others and rng.random() < cfg.mu:
                work = others[int(rng.integers(len(others)))]
            else:
                work = own[int(rng.integers(len(own)))]
            anchors.append(
                UserAnchor(
                    user_id=f"u{uid:05d}", home_tower=home, work_tower=work, community=c
                )
            )
            uid += 1

    # --- pings: strictly inside the windows, with margins --------------------
    weekdays = [cfg.start + timedelta(days=7 * w + d)
                for w in range(cfg.n_weeks) for d in range(5)]
    saturdays = [cfg.start + timedelta(days=7 * w + 5) for w in range(cfg.n_weeks)]
    content_ids = [tid for tid, _ in towers if tid not in guard_ids]
    pings: list[PingRecord] = []
    for a in anchors:
        n_home = 6 + int(rng.integers(0, 3))
        n_work = 6 + int(rng.integers(0, 3))
        n_noise = int(rng.integers(0, cfg.max_noise_pings + 1))
        for j in range(n_home):
            day = weekdays[int(rng.integers(len(weekdays)))]
            hour = 23 if j % 2 == 0 else 5  # deep inside 22:00-07:00, no rollover
            ts = datetime.combine(day, time(hour, int(rng.integers(0, 60))))
            pings.append(PingRecord(a.user_id, a.home_tower, ts))
        for _ in range(n_work):
            day = weekdays[int(rng.integers(len(weekdays)))]
            ts = datetime.combine(day, time(int(rng.integers(10, 16)), int(rng.integers(0, 60))))
            pings.append(PingRecord(a.user_id, a.work_tower, ts))
        for _ in range(n_noise):
            day = weekdays[int(rng.integers(len(weekdays)))]
            ts = datetime.combine(day, time(8, int(rng.integers(0, 60))))
            pings.append(PingRecord(a.user_id, content_ids[int(rng.integers(len(content_ids)))], ts))
        if rng.random() < 0.5:  # occasional weekend ping, excluded by weekday rule
            day = saturdays[int(rng.integers(len(saturdays)))]
            ts = datetime.combine(day, time(12, int(rng.integers(0, 60))))
            pings.append(PingRecord(a.user_id, a.home_tower, ts))

    return SynthCity(
        towers=towers,
        guard_ids=frozenset(guard_ids),
        urban=urban,
        blocks=blocks,
        pings=pings,
        tower_community=tower_community,
        anchors=anchors,
        config=cfg,
    )
