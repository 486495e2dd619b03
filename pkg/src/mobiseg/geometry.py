"""Planar geometry kernel: Voronoi tessellation, overlap filtering, SEL areal weighting.

Coordinates are metric (x east, y north).  Lon/lat inputs must be projected
first, see :func:`project_lonlat`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import shapely
import shapely.geometry as sgeom
from shapely.geometry.polygon import orient

EARTH_RADIUS_M = 6_371_000.0

SEL_LABELS = ("S1", "S2", "S3", "S4", "S5")


class GeometryError(ValueError):
    """Invalid geometric input (duplicate sites, bad rings, empty bounds...)."""


@dataclass(frozen=True, order=True)
class Point:
    x: float
    y: float

    def distance_to(self, other: "Point") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Polygon:
    """Simple polygon: one outer ring (CCW) plus optional holes (CW).

    Rings are stored closed-form-free (no repeated last vertex); orientation
    is normalised by the constructors.
    """

    outer: tuple[tuple[float, float], ...]
    holes: tuple[tuple[tuple[float, float], ...], ...] = ()

    @classmethod
    def from_coords(cls, outer, holes=()) -> "Polygon":
        shp = sgeom.Polygon(outer, holes)
        if not shp.is_valid or shp.is_empty:
            raise GeometryError(f"invalid polygon: {shapely.is_valid_reason(shp)}")
        return cls.from_shapely(shp)

    @classmethod
    def from_shapely(cls, shp) -> "Polygon":
        if shp.is_empty or not isinstance(shp, sgeom.Polygon):
            raise GeometryError(f"expected a nonempty polygon, got {shp.geom_type}")
        shp = orient(shp)  # outer CCW, holes CW
        outer = tuple(map(tuple, shp.exterior.coords[:-1]))
        holes = tuple(tuple(map(tuple, ring.coords[:-1])) for ring in shp.interiors)
        return cls(outer, holes)

    @classmethod
    def rectangle(cls, minx: float, miny: float, maxx: float, maxy: float) -> "Polygon":
        if not (minx < maxx and miny < maxy):
            raise GeometryError("degenerate rectangle")
        return cls(((minx, miny), (maxx, miny), (maxx, maxy), (minx, maxy)))

    def to_shapely(self) -> sgeom.Polygon:
        return sgeom.Polygon(self.outer, self.holes)

    @property
    def area(self) -> float:
        return self.to_shapely().area

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.outer]
        ys = [p[1] for p in self.outer]
        return (min(xs), min(ys), max(xs), max(ys))

    def is_rectangle(self) -> bool:
        if self.holes or len(self.outer) != 4:
            return False
        minx, miny, maxx, maxy = self.bounds
        return set(self.outer) == {(minx, miny), (maxx, miny), (maxx, maxy), (minx, maxy)}

    def contains_point(self, p: Point) -> bool:
        return bool(shapely.covers(self.to_shapely(), sgeom.Point(p.x, p.y)))


@dataclass(frozen=True)
class SELProfile:
    """Socioeconomic composition: fractions over the five SEL groups S1..S5."""

    fractions: tuple[float, float, float, float, float]

    def __post_init__(self):
        if len(self.fractions) != len(SEL_LABELS):
            raise ValueError("expected five SEL fractions")
        if any(f < 0.0 for f in self.fractions):
            raise ValueError("SEL fractions must be nonnegative")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"SEL fractions must sum to 1, got {sum(self.fractions)!r}")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(SEL_LABELS, self.fractions))


@dataclass(frozen=True)
class TowerCell:
    """A tower site with its Voronoi service area."""

    tower_id: str
    site: Point
    cell: Polygon
    urban_overlap: float | None = None
    sel: SELProfile | None = None


def _clip_halfplane(verts: np.ndarray, a: np.ndarray, b: float) -> np.ndarray:
    """Clip a convex polygon to the half-plane ``a . p <= b``.

    Parameters
    ----------
    verts : ndarray, shape (n, 2)
        Vertices of a convex polygon in order.
    a, b : ndarray shape (2,), float
        Half-plane in inner-product form.

    Returns
    -------
    ndarray, shape (m, 2)
        Clipped polygon; empty array if nothing survives.
    """
    d = verts @ a - b
    inside = d <= 1e-9
    if inside.all():
        return verts
    if not inside.any():
        return verts[:0]
    out = []
    n = len(verts)
    for i in range(n):
        j = (i + 1) % n
        if inside[i]:
            out.append(verts[i])
        if inside[i] != inside[j]:
            # edge crosses the boundary: interpolate the intersection
            t = d[i] / (d[i] - d[j])
            out.append(verts[i] + t * (verts[j] - verts[i]))
    return np.asarray(out)


def compute_voronoi(sites: list[tuple[str, Point]], bounds: Polygon) -> list[TowerCell]:
    """Voronoi tessellation of ``bounds`` by iterative half-plane clipping.

    Each site's cell starts from the bounding box of ``bounds`` and is cut by
    the perpendicular bisector against every other site, visiting sites by
    increasing distance so the loop can stop once no further bisector can
    reach the current cell.  Non-rectangular bounds are applied afterwards by
    polygon intersection.

    Parameters
    ----------
    sites : list of (tower_id, Point)
        Distinct tower locations; every site must lie within ``bounds``.
    bounds : Polygon
        Clipping region.  Must not disconnect any cell (convex regions are
        always safe).

    Returns
    -------
    list of TowerCell
        One cell per site, in input order; cells tile ``bounds``.
    """
    if not sites:
        raise GeometryError("no sites")
    seen: dict[tuple[float, float], str] = {}
    for tid, p in sites:
        key = (p.x, p.y)
        if key in seen:
            raise GeometryError(f"duplicate site location for {seen[key]!r} and {tid!r}")
        seen[key] = tid
    bshp = bounds.to_shapely()
    for tid, p in sites:
        if not shapely.covers(bshp, sgeom.Point(p.x, p.y)):
            raise GeometryError(f"site {tid!r} lies outside bounds")

    xy = np.array([(p.x, p.y) for _, p in sites], dtype=float)
    minx, miny, maxx, maxy = bounds.bounds
    box = np.array([(minx, miny), (maxx, miny), (maxx, maxy), (minx, maxy)], dtype=float)
    rectangular = bounds.is_rectangle()

    cells: list[TowerCell] = []
    for i, (tid, p) in enumerate(sites):
        si = xy[i]
        d2 = ((xy - si) ** 2).sum(axis=1)
        order = np.argsort(d2, kind="stable")
        verts = box
        for j in order:
            if j == i:
                continue
            # bisector cannot cut the cell once |s_j - s_i| / 2 exceeds the
            # farthest current vertex
            r2max = (((verts - si) ** 2).sum(axis=1)).max()
            if d2[j] >= 4.0 * r2max:
                break
            sj = xy[j]
            a = 2.0 * (sj - si)
            b = float(sj @ sj - si @ si)
            verts = _clip_halfplane(verts, a, b)
            if len(verts) == 0:  # pragma: no cover - impossible: site is inside bounds
                raise GeometryError(f"cell of site {tid!r} vanished")
        cell_shp = sgeom.Polygon(verts)
        if not rectangular:
            cell_shp = cell_shp.intersection(bshp)
            if isinstance(cell_shp, sgeom.MultiPolygon):
                parts = [g for g in cell_shp.geoms if g.area > 1e-12]
                if len(parts) != 1:
                    raise GeometryError(
                        f"bounds disconnect the cell of site {tid!r}; "
                        "use a convex clipping region"
                    )
                cell_shp = parts[0]
            elif not isinstance(cell_shp, sgeom.Polygon) or cell_shp.is_empty:
                raise GeometryError(f"cell of site {tid!r} vanished under bounds")
        cells.append(TowerCell(tower_id=tid, site=p, cell=Polygon.from_shapely(cell_shp)))
    return cells


def polygon_intersection_area(a: Polygon, b: Polygon) -> float:
    """Area of the intersection of two polygons (0.0 when disjoint)."""
    return float(a.to_shapely().intersection(b.to_shapely()).area)


def urban_overlap_filter(
    cells: list[TowerCell], urban: Polygon, threshold: float = 0.70
) -> tuple[list[TowerCell], list[TowerCell]]:
    """Split cells into (kept, dropped) by urban area overlap.

    A cell is kept iff area(cell & urban) / area(cell) >= threshold
    (inclusive).  Both lists preserve input order and carry the computed
    ``urban_overlap`` fraction.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold!r}")
    ushp = urban.to_shapely()
    kept: list[TowerCell] = []
    dropped: list[TowerCell] = []
    for c in cells:
        area = c.cell.area
        if area <= 0.0:
            raise GeometryError(f"cell of {c.tower_id!r} has zero area")
        frac = float(c.cell.to_shapely().intersection(ushp).area) / area
        out = replace(c, urban_overlap=frac)
        (kept if frac >= threshold else dropped).append(out)
    return kept, dropped


def assign_sel(cells: list[TowerCell], blocks: list[tuple[Polygon, str]]) -> list[TowerCell]:
    """Attach an areal-weighted SEL profile to each cell.

    Each census block carries one SEL label; a cell's profile is the share of
    its block-covered area per group.  Cells intersecting no block keep
    ``sel=None``.
    """
    for _, label in blocks:
        if label not in SEL_LABELS:
            raise ValueError(f"unknown SEL label {label!r}")
    block_shps = [(b.to_shapely(), b.bounds, label) for b, label in blocks]
    out: list[TowerCell] = []
    for c in cells:
        cshp = c.cell.to_shapely()
        cminx, cminy, cmaxx, cmaxy = c.cell.bounds
        weights = dict.fromkeys(SEL_LABELS, 0.0)
        for bshp, (bminx, bminy, bmaxx, bmaxy), label in block_shps:
            if bminx > cmaxx or bmaxx < cminx or bminy > cmaxy or bmaxy < cminy:
                continue
            a = cshp.intersection(bshp).area
            if a > 0.0:
                weights[label] += a
        total = sum(weights.values())
        if total <= 0.0:
            out.append(replace(c, sel=None))
        else:
            fractions = tuple(weights[lbl] / total for lbl in SEL_LABELS)
            out.append(replace(c, sel=SELProfile(fractions)))
    return out


class SiteIndex:
    """Vectorised nearest-site lookup; distance ties go to the lowest tower_id."""

    def __init__(self, sites: list[tuple[str, Point]]):
        if not sites:
            raise GeometryError("no sites")
        ordered = sorted(sites, key=lambda s: s[0])
        self.tower_ids = [tid for tid, _ in ordered]
        self.xy = np.array([(p.x, p.y) for _, p in ordered], dtype=float)

    def nearest(self, points: np.ndarray) -> np.ndarray:
        """Indices (into the sorted tower_id list) of the nearest site per row of points."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        # chunk to bound the (n_points x n_sites) distance matrix
        out = np.empty(len(pts), dtype=np.intp)
        step = max(1, 8_000_000 // max(1, len(self.xy)))
        for lo in range(0, len(pts), step):
            chunk = pts[lo : lo + step]
            d2 = (chunk[:, None, 0] - self.xy[None, :, 0]) ** 2 + (
                chunk[:, None, 1] - self.xy[None, :, 1]
            ) ** 2
            out[lo : lo + len(chunk)] = np.argmin(d2, axis=1)  # first min = lowest id
        return out

    def nearest_ids(self, points: np.ndarray) -> list[str]:
        return [self.tower_ids[i] for i in self.nearest(points)]


def locate_tower(p: Point, cells: list[TowerCell]) -> str:
    """Tower whose site is nearest to ``p`` (ties: lowest tower_id)."""
    idx = SiteIndex([(c.tower_id, c.site) for c in cells])
    return idx.nearest_ids(np.array([[p.x, p.y]]))[0]


def expand_bbox(poly: Polygon, fraction: float) -> Polygon:
    """Rectangle covering ``poly``'s bounding box grown by ``fraction`` per side."""
    minx, miny, maxx, maxy = poly.bounds
    dx = (maxx - minx) * fraction
    dy = (maxy - miny) * fraction
    return Polygon.rectangle(minx - dx, miny - dy, maxx + dx, maxy + dy)


def project_lonlat(
    lon: np.ndarray, lat: np.ndarray, origin: tuple[float, float] | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Equirectangular projection of lon/lat degrees to metres.

    Adequate for city-scale extents; ``origin`` defaults to the centroid of
    the inputs.  Returns (x, y) arrays.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if origin is None:
        origin = (float(lon.mean()), float(lat.mean()))
    lon0, lat0 = origin
    x = np.radians(lon - lon0) * math.cos(math.radians(lat0)) * EARTH_RADIUS_M
    y = np.radians(lat - lat0) * EARTH_RADIUS_M
    return x, y
