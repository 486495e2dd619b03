"""Isolation indices over workplace units and community SEL composition.

The isolation index of community C over units i is

    P_C = sum_i (c_i / C) * (c_i / T_i)

with c_i the community's users working at unit i, C its population and T_i
the unit's total workforce.  P_C = 1 means complete segregation; workplace
choice independent of community gives the well-mixed limit P_C = k, the
community's population share.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SELProfile, TowerCell
from .graph import Partition
from .ingest import UserAnchor


@dataclass(frozen=True)
class CountsMatrix:
    """User counts per (home community, workplace unit) with marginals."""

    communities: tuple[int, ...]
    units: tuple[str, ...]
    counts: np.ndarray  # shape (n_communities, n_units), nonnegative ints

    def __post_init__(self):
        if self.counts.shape != (len(self.communities), len(self.units)):
            raise ValueError("counts shape does not match labels")
        if (self.counts < 0).any():
            raise ValueError("counts must be nonnegative")

    @property
    def C(self) -> np.ndarray:
        """Population per community (row totals)."""
        return self.counts.sum(axis=1)

    @property
    def T(self) -> np.ndarray:
        """Workforce per unit (column totals)."""
        return self.counts.sum(axis=0)

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    def row(self, community: int) -> np.ndarray:
        try:
            i = self.communities.index(community)
        except ValueError:
            raise ValueError(f"unknown community {community!r}") from None
        return self.counts[i]


def counts_matrix(
    anchors: list[UserAnchor], units: dict[str, object] | None = None
) -> CountsMatrix:
    """Tabulate labelled anchors into community x workplace-unit counts.

    The workplace unit is the work tower; passing ``units`` (a work tower ->
    unit mapping, e.g. a community assignment) aggregates columns for
    sensitivity analyses.
    """
    cells: dict[tuple[int, object], int] = {}
    for a in anchors:
        if a.community is None:
            raise ValueError(f"anchor {a.user_id!r} has no community label")
        unit = a.work_tower if units is None else units[a.work_tower]
        key = (a.community, unit)
        cells[key] = cells.get(key, 0) + 1
    comms = tuple(sorted({c for c, _ in cells}))
    unit_ids = tuple(sorted({u for _, u in cells}, key=str))
    counts = np.zeros((len(comms), len(unit_ids)), dtype=np.int64)
    ci = {c: i for i, c in enumerate(comms)}
    ui = {u: i for i, u in enumerate(unit_ids)}
    for (c, u), n in cells.items():
        counts[ci[c], ui[u]] = n
    return CountsMatrix(communities=comms, units=tuple(str(u) for u in unit_ids), counts=counts)


def isolation_index(m: CountsMatrix, community: int) -> float:
    """Isolation index P_C = sum_i (c_i/C)(c_i/T_i); empty units contribute 0."""
    row = m.row(community).astype(float)
    total = row.sum()
    if total <= 0:
        raise ValueError(f"community {community!r} is empty")
    T = m.T.astype(float)
    mask = row > 0
    return float(((row[mask] / total) * (row[mask] / T[mask])).sum())


def well_mixed_index(
    m: CountsMatrix,
    community: int,
    mc_reps: int | None = None,
    seed: int | None = None,
) -> float:
    """Well-mixed limit of the isolation index.

    Analytic form: the community's population share k = C/N.  With
    ``mc_reps``, estimates it instead by Monte Carlo: every user gets a
    uniformly random work unit, the isolation index is evaluated on the
    resampled counts, and the mean over replications is reported.
    """
    if m.N == 0:
        raise ValueError("empty counts matrix")
    row_total = m.row(community).sum()
    if mc_reps is None:
        return float(row_total) / float(m.N)
    rng = np.random.default_rng(seed)
    n_units = len(m.units)
    pvals = np.full(n_units, 1.0 / n_units)
    idx = m.communities.index(community)
    values = []
    for _ in range(mc_reps):
        sim = np.vstack([rng.multinomial(int(c), pvals) for c in m.C])
        T = sim.sum(axis=0).astype(float)
        row = sim[idx].astype(float)
        mask = row > 0
        values.append(float(((row[mask] / row_total) * (row[mask] / T[mask])).sum()))
    return float(np.mean(values))


def community_sel(
    p: Partition,
    cells: list[TowerCell],
    weight: str = "area",
    home_counts: dict[str, int] | None = None,
) -> dict[int, SELProfile | None]:
    """Aggregate member-cell SEL profiles per community.

    Weighted mean of the member cells' profiles; ``weight`` is "area"
    (default) or "users" (home-anchor counts, requires ``home_counts``).
    Cells without a profile are skipped; a community whose cells all lack one
    maps to None.
    """
    if weight not in ("area", "users"):
        raise ValueError(f"unknown weight {weight!r}")
    if weight == "users" and home_counts is None:
        raise ValueError("weight='users' requires home_counts")
    by_id = {c.tower_id: c for c in cells}
    out: dict[int, SELProfile | None] = {}
    for label in p.labels:
        acc = np.zeros(5)
        w_total = 0.0
        for tower in p.members(label):
            cell = by_id.get(tower)
            if cell is None or cell.sel is None:
                continue
            w = cell.cell.area if weight == "area" else float(home_counts.get(tower, 0))
            if w <= 0:
                continue
            acc += w * np.asarray(cell.sel.fractions)
            w_total += w
        if w_total > 0:
            out[label] = SELProfile(tuple(acc / w_total))
        else:
            out[label] = None
    return out
