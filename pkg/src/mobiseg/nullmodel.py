"""Randomized-relocation null model for the isolation index.

Per community, empirical histograms of home-work distance D (metres) and
direction angle theta (degrees in [0, 360), counterclockwise from East) are
fitted from the labelled anchors.  Simulated relocations keep every home
fixed, redraw (D, theta) from the community's histograms, land at
home + D*(cos theta, sin theta) and snap to the nearest tower site.  Self-loop
users (D = 0) form a separate point mass at zero and are resampled as exact
self-loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Point, SiteIndex, TowerCell
from .ingest import UserAnchor
from .segregation import counts_matrix, isolation_index


@dataclass(frozen=True)
class CommunityStats:
    """Histograms for one community; masses (zero + distance bins) sum to 1."""

    n: int
    zero_mass: float
    dist_counts: np.ndarray  # counts of D > 0 users per distance bin
    angle_counts: np.ndarray  # counts of D > 0 users per angle bin
    joint_counts: np.ndarray  # (n_dist_bins, n_angle_bins)


@dataclass(frozen=True)
class TrajectoryStats:
    dist_bin: float
    angle_bin: float
    communities: dict[int, CommunityStats]

    def distance_rows(self, community: int) -> list[tuple[float, float, float]]:
        """(bin_low, bin_high, mass) rows; the D = 0 point mass is the 0-0 row."""
        s = self.communities[community]
        rows = [(0.0, 0.0, s.zero_mass)]
        total = s.n
        for i, c in enumerate(s.dist_counts):
            if c:
                rows.append((i * self.dist_bin, (i + 1) * self.dist_bin, c / total))
        return rows

    def angle_rows(self, community: int) -> list[tuple[float, float, float]]:
        s = self.communities[community]
        moving = s.dist_counts.sum()
        if moving == 0:
            return []
        return [
            (i * self.angle_bin, (i + 1) * self.angle_bin, c / moving)
            for i, c in enumerate(s.angle_counts)
            if c
        ]

    def mean_distance(self, community: int) -> float:
        """Histogram-implied mean D (bin midpoints; zero mass at 0)."""
        s = self.communities[community]
        centers = (np.arange(len(s.dist_counts)) + 0.5) * self.dist_bin
        return float((s.dist_counts * centers).sum() / s.n)


def _sites_of(cells: list[TowerCell]) -> dict[str, Point]:
    return {c.tower_id: c.site for c in cells}


def fit_distributions(
    anchors: list[UserAnchor],
    cells: list[TowerCell],
    bin_width_dist: float = 500.0,
    bin_width_angle: float = 10.0,
    communities: tuple[int, ...] | None = None,
) -> TrajectoryStats:
    """Empirical per-community histograms of D and theta.

    D is the Euclidean home-work site distance; theta = atan2 of the
    work - home vector, normalized to [0, 360).  D = 0 users are excluded
    from the angle histogram (undefined direction) and tracked as the
    zero-distance point mass.  Passing ``communities`` asserts that each of
    those labels has at least one anchor.
    """
    if bin_width_dist <= 0 or bin_width_angle <= 0:
        raise ValueError("bin widths must be positive")
    sites = _sites_of(cells)
    groups: dict[int, list[UserAnchor]] = {}
    for a in anchors:
        if a.community is None:
            raise ValueError(f"anchor {a.user_id!r} has no community label")
        groups.setdefault(a.community, []).append(a)
    if not groups:
        raise ValueError("no anchors to fit")
    if communities is not None:
        for c in communities:
            if c not in groups:
                raise ValueError(f"community {c} has zero anchors")

    n_angle = math.ceil(360.0 / bin_width_angle)
    per_comm: dict[int, CommunityStats] = {}
    for label in sorted(groups):
        members = groups[label]
        dists, angles = [], []
        n_zero = 0
        for a in members:
            h, w = sites[a.home_tower], sites[a.work_tower]
            d = h.distance_to(w)
            if d == 0.0:
                n_zero += 1
                continue
            dists.append(d)
            theta = math.degrees(math.atan2(w.y - h.y, w.x - h.x)) % 360.0
            angles.append(theta)
        n_dist = (int(max(dists) // bin_width_dist) + 1) if dists else 0
        dist_counts = np.zeros(n_dist, dtype=np.int64)
        angle_counts = np.zeros(n_angle, dtype=np.int64)
        joint = np.zeros((n_dist, n_angle), dtype=np.int64)
        for d, t in zip(dists, angles):
            di = min(int(d // bin_width_dist), n_dist - 1)
            ai = min(int(t // bin_width_angle), n_angle - 1)
            dist_counts[di] += 1
            angle_counts[ai] += 1
            joint[di, ai] += 1
        per_comm[label] = CommunityStats(
            n=len(members),
            zero_mass=n_zero / len(members),
            dist_counts=dist_counts,
            angle_counts=angle_counts,
            joint_counts=joint,
        )
    return TrajectoryStats(
        dist_bin=float(bin_width_dist), angle_bin=float(bin_width_angle), communities=per_comm
    )


def simulate_relocation(
    anchors: list[UserAnchor],
    stats: TrajectoryStats,
    cells: list[TowerCell],
    rng: np.random.Generator | int,
    joint: bool = False,
) -> list[UserAnchor]:
    """One randomized relocation of every user's workplace.

    Homes are kept; D and theta are redrawn from the user's community
    histograms (independently from the marginals by default, jointly from
    the 2-D histogram with ``joint=True``), uniform within bins; the landing
    point is assigned to the nearest tower site with no rejection, so user
    counts are conserved exactly.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    sites = _sites_of(cells)
    index = SiteIndex(list(sites.items()))

    out: list[UserAnchor | None] = [None] * len(anchors)
    by_comm: dict[int, list[int]] = {}
    for i, a in enumerate(anchors):
        by_comm.setdefault(a.community, []).append(i)

    for label in sorted(by_comm):
        idxs = by_comm[label]
        s = stats.communities.get(label)
        if s is None:
            raise ValueError(f"no fitted statistics for community {label}")
        n = len(idxs)
        zero = rng.random(n) < s.zero_mass
        n_move = int((~zero).sum())
        if n_move:
            if joint:
                flat = s.joint_counts.ravel().astype(float)
                pick = rng.choice(flat.size, size=n_move, p=flat / flat.sum())
                d_bin, a_bin = np.unravel_index(pick, s.joint_counts.shape)
            else:
                pd = s.dist_counts.astype(float)
                pa = s.angle_counts.astype(float)
                d_bin = rng.choice(pd.size, size=n_move, p=pd / pd.sum())
                a_bin = rng.choice(pa.size, size=n_move, p=pa / pa.sum())
            d = (d_bin + rng.random(n_move)) * stats.dist_bin
            theta = np.radians((a_bin + rng.random(n_move)) * stats.angle_bin)
            homes = np.array(
                [(sites[anchors[i].home_tower].x, sites[anchors[i].home_tower].y)
                 for i, z in zip(idxs, zero) if not z]
            )
            pts = homes + np.column_stack([d * np.cos(theta), d * np.sin(theta)])
            new_ids = index.nearest_ids(pts)
        mv = 0
        for i, z in zip(idxs, zero):
            if z:
                out[i] = replace(anchors[i], work_tower=anchors[i].home_tower)
            else:
                out[i] = replace(anchors[i], work_tower=new_ids[mv])
                mv += 1
    return [a for a in out if a is not None]


@dataclass(frozen=True)
class SIIResult:
    """Simulated isolation indices: one row per replication, one column per community."""

    communities: tuple[int, ...]
    values: np.ndarray  # shape (reps, n_communities)
    seed: int

    @property
    def reps(self) -> int:
        return self.values.shape[0]

    def mean(self, community: int) -> float:
        return float(self.values[:, self.communities.index(community)].mean())

    def std(self, community: int) -> float:
        # population-style spread over the replication set
        return float(self.values[:, self.communities.index(community)].std(ddof=0))


def sii_experiment(
    anchors: list[UserAnchor],
    stats: TrajectoryStats,
    cells: list[TowerCell],
    reps: int = 100,
    seed: int = 0,
    joint: bool = False,
) -> SIIResult:
    """R relocation replications -> isolation index per community per replication.

    Each replication consumes an independent child of ``seed`` (spawned
    deterministically in replication order), so results are byte-reproducible
    and replications never share a stream.
    """
    if reps < 2:
        raise ValueError("need at least 2 replications")
    communities = tuple(sorted({a.community for a in anchors}))
    children = np.random.SeedSequence(seed).spawn(reps)
    values = np.empty((reps, len(communities)))
    for r in range(reps):
        sim = simulate_relocation(anchors, stats, cells, np.random.default_rng(children[r]), joint)
        m = counts_matrix(sim)
        for j, c in enumerate(communities):
            values[r, j] = isolation_index(m, c)
    return SIIResult(communities=communities, values=values, seed=seed)


@dataclass(frozen=True)
class ZScore:
    community: int
    rii: float
    sii_mean: float
    sii_std: float
    z: float
    segregated: bool


def z_distance(
    rii: dict[int, float], sii: SIIResult, threshold: float = 3.0
) -> dict[int, ZScore]:
    """|RII - <SII>| / sigma_SII per community, with the segregation verdict.

    sigma = 0 degenerates to an infinite separation unless RII equals the
    mean exactly.  ``segregated`` requires RII above the null mean by more
    than ``threshold`` standard deviations.
    """
    out: dict[int, ZScore] = {}
    for c in sii.communities:
        mean, std = sii.mean(c), sii.std(c)
        r = rii[c]
        if std > 0:
            z = abs(r - mean) / std
        else:
            z = 0.0 if r == mean else math.inf
        out[c] = ZScore(
            community=c,
            rii=r,
            sii_mean=mean,
            sii_std=std,
            z=z,
            segregated=bool(r > mean and z > threshold),
        )
    return out
