"""Artifact readers and writers: CSV, GeoJSON, JSON.

All writers are deterministic: fixed column orders, sorted iteration, floats
serialized via ``repr`` (shortest round-trip form), JSON with sorted keys.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .geometry import SEL_LABELS, Point, Polygon, SELProfile, TowerCell
from .graph import HWNetwork, Partition
from .ingest import DataError, RejectionLog, UserAnchor


def _f(x) -> str:
    return repr(float(x))


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _read_json(path):
    return json.loads(Path(path).read_text())


# --- towers ------------------------------------------------------------------


def write_towers_csv(path, towers: list[tuple[str, Point]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tower_id", "x", "y"])
        for tid, p in towers:
            w.writerow([tid, _f(p.x), _f(p.y)])


def read_towers_csv(path, project: bool = False) -> list[tuple[str, Point]]:
    """Read tower sites; with ``project`` the columns are lon/lat degrees and
    get projected to metres about their centroid."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header not in (["tower_id", "x", "y"], ["tower_id", "lon", "lat"]):
            raise DataError(f"{path}: expected header tower_id,x,y or tower_id,lon,lat")
        if header == ["tower_id", "lon", "lat"] and not project:
            raise DataError(f"{path}: lon/lat towers require the --project flag")
        rows = []
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{i}: expected 3 fields")
            try:
                rows.append((row[0], float(row[1]), float(row[2])))
            except ValueError as exc:
                raise DataError(f"{path}:{i}: bad coordinate") from exc
    ids = [r[0] for r in rows]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate tower_id")
    if project:
        from .geometry import project_lonlat

        lon = np.array([r[1] for r in rows])
        lat = np.array([r[2] for r in rows])
        x, y = project_lonlat(lon, lat)
        return [(tid, Point(float(xi), float(yi))) for tid, xi, yi in zip(ids, x, y)]
    return [(tid, Point(xv, yv)) for tid, xv, yv in rows]


# --- pings and anchors --------------------------------------------------------


def write_pings_csv(path, pings) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "tower_id", "timestamp"])
        for p in pings:
            w.writerow([p.user_id, p.tower_id, p.timestamp.isoformat()])


def write_anchors_csv(path, anchors: list[UserAnchor]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "home_tower", "work_tower"])
        for a in anchors:
            w.writerow([a.user_id, a.home_tower, a.work_tower])


def read_anchors_csv(path) -> list[UserAnchor]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_id", "home_tower", "work_tower"]:
            raise DataError(f"{path}: expected header user_id,home_tower,work_tower")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{i}: expected 3 fields")
            out.append(UserAnchor(user_id=row[0], home_tower=row[1], work_tower=row[2]))
    return out


def write_planted_anchors_csv(path, anchors: list[UserAnchor]) -> None:
    """Ground-truth anchors from the generator, with the planted community label."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "home_tower", "work_tower", "community"])
        for a in anchors:
            w.writerow([a.user_id, a.home_tower, a.work_tower, a.community])


def read_planted_anchors_csv(path) -> list[UserAnchor]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_id", "home_tower", "work_tower", "community"]:
            raise DataError(f"{path}: expected header user_id,home_tower,work_tower,community")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{i}: expected 4 fields")
            out.append(UserAnchor(user_id=row[0], home_tower=row[1],
                                  work_tower=row[2], community=int(row[3])))
    return out


def write_rejections_json(path, log: RejectionLog, malformed_lines: int) -> None:
    _write_json(path, {"users": log.as_dict(), "malformed_lines": malformed_lines})


# --- GeoJSON -------------------------------------------------------------------


def _ring_coords(ring) -> list[list[float]]:
    closed = list(ring) + [ring[0]]
    return [[float(x), float(y)] for x, y in closed]


def _polygon_geometry(poly: Polygon) -> dict:
    return {
        "type": "Polygon",
        "coordinates": [_ring_coords(poly.outer)] + [_ring_coords(h) for h in poly.holes],
    }


def _geometry_polygon(geom: dict, where: str) -> Polygon:
    if geom.get("type") != "Polygon":
        raise DataError(f"{where}: expected Polygon geometry, got {geom.get('type')!r}")
    rings = geom["coordinates"]
    outer = [tuple(pt) for pt in rings[0][:-1]]
    holes = [[tuple(pt) for pt in r[:-1]] for r in rings[1:]]
    return Polygon.from_coords(outer, holes)


def write_urban_geojson(path, poly: Polygon) -> None:
    _write_json(
        path,
        {
            "type": "FeatureCollection",
            "features": [
                {"type": "Feature", "properties": {}, "geometry": _polygon_geometry(poly)}
            ],
        },
    )


def read_urban_geojson(path) -> Polygon:
    doc = _read_json(path)
    if doc.get("type") == "FeatureCollection":
        feats = doc.get("features", [])
        if len(feats) != 1:
            raise DataError(f"{path}: expected exactly one urban boundary feature")
        return _geometry_polygon(feats[0]["geometry"], str(path))
    if doc.get("type") == "Feature":
        return _geometry_polygon(doc["geometry"], str(path))
    return _geometry_polygon(doc, str(path))


def write_blocks_geojson(path, blocks: list[tuple[Polygon, str]]) -> None:
    feats = [
        {"type": "Feature", "properties": {"sel": label}, "geometry": _polygon_geometry(b)}
        for b, label in blocks
    ]
    _write_json(path, {"type": "FeatureCollection", "features": feats})


def read_blocks_geojson(path) -> list[tuple[Polygon, str]]:
    doc = _read_json(path)
    if doc.get("type") != "FeatureCollection":
        raise DataError(f"{path}: expected a FeatureCollection")
    out = []
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        label = props.get("sel")
        if label not in SEL_LABELS:
            raise DataError(f"{path}: feature {i} has invalid sel property {label!r}")
        out.append((_geometry_polygon(feat["geometry"], f"{path} feature {i}"), label))
    return out


def write_cells_geojson(path, cells: list[TowerCell]) -> None:
    feats = []
    for c in cells:
        props: dict[str, object] = {
            "tower_id": c.tower_id,
            "site_x": float(c.site.x),
            "site_y": float(c.site.y),
            "urban_overlap": None if c.urban_overlap is None else float(c.urban_overlap),
        }
        fractions = c.sel.fractions if c.sel is not None else (None,) * 5
        for label, frac in zip(SEL_LABELS, fractions):
            props[f"sel_{label.lower()}"] = None if frac is None else float(frac)
        feats.append(
            {"type": "Feature", "properties": props, "geometry": _polygon_geometry(c.cell)}
        )
    _write_json(path, {"type": "FeatureCollection", "features": feats})


def read_cells_geojson(path) -> list[TowerCell]:
    doc = _read_json(path)
    if doc.get("type") != "FeatureCollection":
        raise DataError(f"{path}: expected a FeatureCollection")
    out = []
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        try:
            tid = props["tower_id"]
            site = Point(float(props["site_x"]), float(props["site_y"]))
        except KeyError as exc:
            raise DataError(f"{path}: feature {i} missing {exc}") from None
        fractions = [props.get(f"sel_{label.lower()}") for label in SEL_LABELS]
        sel = None if any(f is None for f in fractions) else SELProfile(tuple(map(float, fractions)))
        out.append(
            TowerCell(
                tower_id=tid,
                site=site,
                cell=_geometry_polygon(feat["geometry"], f"{path} feature {i}"),
                urban_overlap=props.get("urban_overlap"),
                sel=sel,
            )
        )
    return out


# --- network, partitions --------------------------------------------------------


def write_network_csv(path, net: HWNetwork) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tower_a", "tower_b", "weight"])
        for (a, b), weight in sorted(net.edges.items()):
            w.writerow([a, b, weight])


def read_network_csv(path) -> HWNetwork:
    edges = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["tower_a", "tower_b", "weight"]:
            raise DataError(f"{path}: expected header tower_a,tower_b,weight")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                edges[(row[0], row[1])] = int(row[2])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{i}: bad edge row") from exc
    return HWNetwork.from_edges(edges)


def write_partition_csv(path, p: Partition) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tower_id", "community"])
        for tid in sorted(p.assignment):
            w.writerow([tid, p.assignment[tid]])


def read_partition_csv(path) -> Partition:
    raw = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["tower_id", "community"]:
            raise DataError(f"{path}: expected header tower_id,community")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                raw[row[0]] = int(row[1])
            except (IndexError, ValueError) as exc:
                raise DataError(f"{path}:{i}: bad partition row") from exc
    return Partition.from_assignment(raw)


def write_partition_json(path, p: Partition, q: float, *, seed: int, resolution: float,
                         min_size: int, discarded: list[str]) -> None:
    _write_json(
        path,
        {
            "Q": q,
            "n_communities": p.n_communities,
            "sizes": list(p.sizes),
            "seed": seed,
            "resolution": resolution,
            "min_size": min_size,
            "discarded": discarded,
        },
    )


# --- histograms, SII, reports -----------------------------------------------------


def write_histogram_csv(path, rows: list[tuple[float, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high", "mass"])
        for lo, hi, mass in rows:
            w.writerow([_f(lo), _f(hi), _f(mass)])


def read_histogram_csv(path) -> list[tuple[float, float, float]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["bin_low", "bin_high", "mass"]:
            raise DataError(f"{path}: expected header bin_low,bin_high,mass")
        for row in reader:
            if row:
                rows.append((float(row[0]), float(row[1]), float(row[2])))
    return rows


def write_sii_csv(path, result) -> None:
    """Replication values plus mean/std summary rows per community."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["community", "replication", "sii"])
        for j, c in enumerate(result.communities):
            for r in range(result.reps):
                w.writerow([c, r, _f(result.values[r, j])])
        for c in result.communities:
            w.writerow([c, "mean", _f(result.mean(c))])
            w.writerow([c, "std", _f(result.std(c))])


def read_sii_csv(path):
    """Returns (communities, values array, seed-less) rebuilt from the dump."""
    per_comm: dict[int, list[float]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["community", "replication", "sii"]:
            raise DataError(f"{path}: expected header community,replication,sii")
        for row in reader:
            if not row or row[1] in ("mean", "std"):
                continue
            per_comm.setdefault(int(row[0]), []).append(float(row[2]))
    if not per_comm:
        raise DataError(f"{path}: no replication rows")
    communities = tuple(sorted(per_comm))
    reps = {len(v) for v in per_comm.values()}
    if len(reps) != 1:
        raise DataError(f"{path}: ragged replication counts")
    values = np.column_stack([per_comm[c] for c in communities])
    return communities, values


def write_report_csv(path, rows: list[dict]) -> None:
    cols = ["community", "RII", "WII", "SII_mean", "SII_std", "z",
            "sel_s1", "sel_s2", "sel_s3", "sel_s4", "sel_s5"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            out = []
            for col in cols:
                v = row[col]
                out.append("" if v is None else (_f(v) if isinstance(v, float) else v))
            w.writerow(out)


def write_retention_csv(path, rows: list[tuple[str, int, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["weekday", "n_shared", "retention"])
        for weekday, n_shared, value in rows:
            w.writerow([weekday, n_shared, _f(value)])


def read_retention_csv(path) -> list[tuple[str, int, float]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["weekday", "n_shared", "retention"]:
            raise DataError(f"{path}: expected header weekday,n_shared,retention")
        for row in reader:
            if row:
                rows.append((row[0], int(row[1]), float(row[2])))
    return rows


def write_json(path, obj) -> None:
    """Canonical JSON dump (sorted keys, stable float repr via Python defaults)."""
    _write_json(path, obj)


def read_json(path):
    return _read_json(path)
