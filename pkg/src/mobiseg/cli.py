"""Command-line pipeline: stage commands, `run-all`, and the synthetic generator.

Every stage is a plain function over a PipelineConfig that reads its inputs
from files and writes its outputs to files, so `run-all` is literally the
sequential composition of the stage commands.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from dataclasses import replace
from datetime import date
from pathlib import Path

from . import __version__, fileio
from .config import (
    ConfigError,
    PipelineConfig,
    _VALID_KEYS,
    build_config,
    parse_kv_file,
    stage_seed,
)
from .geometry import (
    assign_sel,
    compute_voronoi,
    expand_bbox,
    urban_overlap_filter,
)
from .graph import Partition, build_hw_network, louvain, prune_small, retention
from .ingest import (
    DataError,
    TimeWindow,
    infer_home_work,
    label_anchors,
    observed_weekdays,
    parse_pings,
)
from .nullmodel import SIIResult, fit_distributions, sii_experiment
from .report import (
    WEEKDAY_NAMES,
    build_report_rows,
    render_figures,
    report_json_payload,
    write_manifest,
)
from .segregation import community_sel, counts_matrix, isolation_index, well_mixed_index
from .synth import SynthConfig, SynthError, generate_city


def _artifact(cfg: PipelineConfig, name: str, producer: str) -> Path:
    path = cfg.out(name)
    if not path.exists():
        raise ConfigError(f"missing intermediate {name}: run `{producer}` first")
    return path


def _network_name(weekday: int | None) -> str:
    return "network.csv" if weekday is None else f"network_{WEEKDAY_NAMES[weekday]}.csv"


def _partition_name(weekday: int | None, ext: str = "csv") -> str:
    return f"partition.{ext}" if weekday is None else f"partition_{WEEKDAY_NAMES[weekday]}.{ext}"


# --- pipeline stages ---------------------------------------------------------------


def stage_tessellate(cfg: PipelineConfig) -> None:
    cfg.require("towers", "urban")
    towers = fileio.read_towers_csv(cfg.towers, project=cfg.project)
    urban = fileio.read_urban_geojson(cfg.urban)
    bounds = expand_bbox(urban, cfg.bounds_expand)
    cells = compute_voronoi(towers, bounds)
    kept, dropped = urban_overlap_filter(cells, urban, cfg.overlap_threshold)
    if not kept:
        raise DataError("no tower cell meets the urban-overlap threshold")
    if cfg.blocks:
        cfg.require("blocks")
        kept = assign_sel(kept, fileio.read_blocks_geojson(cfg.blocks))
    fileio.write_cells_geojson(cfg.out("cells.geojson"), kept)
    print(f"tessellate: kept {len(kept)}/{len(cells)} tower cells "
          f"(urban overlap >= {cfg.overlap_threshold})")


def stage_infer(cfg: PipelineConfig) -> None:
    cfg.require("pings")
    cells = fileio.read_cells_geojson(_artifact(cfg, "cells.geojson", "tessellate"))
    pings, malformed = parse_pings(cfg.pings)
    anchors, log = infer_home_work(
        pings,
        kept_towers={c.tower_id for c in cells},
        home_window=TimeWindow.parse(cfg.home_window),
        work_window=TimeWindow.parse(cfg.work_window),
        min_anchor_pings=cfg.min_anchor_pings,
        anchor_share=cfg.anchor_share,
        share_rule=cfg.share_rule,
    )
    fileio.write_anchors_csv(cfg.out("anchors.csv"), anchors)
    fileio.write_rejections_json(cfg.out("rejections.json"), log, malformed)
    print(f"infer: {log.accepted}/{log.total_users} users anchored "
          f"({malformed} malformed lines skipped)")


def stage_network(cfg: PipelineConfig, weekday: int | None = None) -> None:
    anchors = fileio.read_anchors_csv(_artifact(cfg, "anchors.csv", "infer"))
    if weekday is not None:
        cfg.require("pings")
        cells = fileio.read_cells_geojson(_artifact(cfg, "cells.geojson", "tessellate"))
        pings, _ = parse_pings(cfg.pings)
        observed = observed_weekdays(pings, {c.tower_id for c in cells})
        anchors = [
            replace(a, weekdays_observed=observed.get(a.user_id, frozenset()))
            for a in anchors
        ]
    net = build_hw_network(anchors, day_filter=weekday)
    fileio.write_network_csv(cfg.out(_network_name(weekday)), net)
    label = "aggregate" if weekday is None else WEEKDAY_NAMES[weekday]
    print(f"network[{label}]: {len(net.nodes)} towers, {len(net.edges)} edges, "
          f"weight {net.m}")


def stage_communities(cfg: PipelineConfig, weekday: int | None = None) -> None:
    label = "aggregate" if weekday is None else WEEKDAY_NAMES[weekday]
    net = fileio.read_network_csv(
        _artifact(cfg, _network_name(weekday), "network")
    )
    seed = stage_seed(cfg.seed, "louvain" if weekday is None else f"louvain_{label}")
    partition, q = louvain(net, seed=seed, resolution=cfg.resolution)
    pruned, discarded = prune_small(partition, cfg.min_size)
    fileio.write_partition_csv(cfg.out(_partition_name(weekday)), pruned)
    fileio.write_partition_json(
        cfg.out(_partition_name(weekday, "json")), pruned, q,
        seed=seed, resolution=cfg.resolution, min_size=cfg.min_size,
        discarded=discarded,
    )
    print(f"communities[{label}]: {pruned.n_communities} communities, "
          f"Q={q:.4f}, {len(discarded)} nodes pruned")


def stage_retention(cfg: PipelineConfig) -> None:
    aggregate = fileio.read_partition_csv(_artifact(cfg, "partition.csv", "communities"))
    rows = []
    for wd, name in enumerate(WEEKDAY_NAMES):
        path = cfg.out(_partition_name(wd))
        if not path.exists():
            continue
        daily = fileio.read_partition_csv(path)
        n_shared = len(set(daily.assignment) & set(aggregate.assignment))
        rows.append((name, n_shared, retention(daily, aggregate, cfg.matching)))
    if not rows:
        raise ConfigError(
            "no per-weekday partitions found: run `communities --weekday <day>` first"
        )
    fileio.write_retention_csv(cfg.out("retention.csv"), rows)
    print("retention: " + ", ".join(f"{d}={v:.3f}" for d, _, v in rows))


def _labelled_anchors(cfg: PipelineConfig):
    anchors = fileio.read_anchors_csv(_artifact(cfg, "anchors.csv", "infer"))
    partition = fileio.read_partition_csv(_artifact(cfg, "partition.csv", "communities"))
    labelled, excluded = label_anchors(anchors, partition.assignment)
    if not labelled:
        raise DataError("no anchored user falls inside a detected community")
    return labelled, excluded, partition


def stage_isolation(cfg: PipelineConfig) -> None:
    labelled, excluded, partition = _labelled_anchors(cfg)
    cells = fileio.read_cells_geojson(_artifact(cfg, "cells.geojson", "tessellate"))
    matrix = counts_matrix(labelled)
    home_counts: dict[str, int] = {}
    for a in labelled:
        home_counts[a.home_tower] = home_counts.get(a.home_tower, 0) + 1
    sel = community_sel(partition, cells, weight=cfg.sel_weight, home_counts=home_counts)
    mc = cfg.wii_mc if cfg.wii_mc > 0 else None
    wii_seed = stage_seed(cfg.seed, "wii")
    payload = {
        "communities": {
            str(c): {
                "rii": isolation_index(matrix, c),
                "wii": well_mixed_index(matrix, c, mc_reps=mc, seed=wii_seed),
                "n_users": int(matrix.row(c).sum()),
                "sel": None if sel.get(c) is None else sel[c].as_dict(),
            }
            for c in matrix.communities
        },
        "n_labelled": len(labelled),
        "excluded_users": excluded,
        "wii_mode": "analytic" if mc is None else f"mc:{mc}",
    }
    fileio.write_json(cfg.out("rii.json"), payload)
    print("isolation: " + ", ".join(
        f"c{c}: RII={payload['communities'][str(c)]['rii']:.3f}"
        for c in matrix.communities))


def stage_simulate(cfg: PipelineConfig) -> None:
    labelled, _, _ = _labelled_anchors(cfg)
    cells = fileio.read_cells_geojson(_artifact(cfg, "cells.geojson", "tessellate"))
    stats = fit_distributions(
        labelled, cells, bin_width_dist=cfg.bin_dist, bin_width_angle=cfg.bin_angle
    )
    for c in sorted(stats.communities):
        fileio.write_histogram_csv(cfg.out(f"hist_dist_c{c}.csv"), stats.distance_rows(c))
        fileio.write_histogram_csv(cfg.out(f"hist_angle_c{c}.csv"), stats.angle_rows(c))
    result = sii_experiment(
        labelled, stats, cells,
        reps=cfg.reps, seed=stage_seed(cfg.seed, "sii"), joint=cfg.joint,
    )
    fileio.write_sii_csv(cfg.out("sii.csv"), result)
    mode = "joint" if cfg.joint else "marginal"
    print(f"simulate: {result.reps} relocation replications "
          f"x {len(result.communities)} communities ({mode} histograms)")


def stage_report(cfg: PipelineConfig) -> None:
    rii_payload = fileio.read_json(_artifact(cfg, "rii.json", "isolation"))
    communities, values = fileio.read_sii_csv(_artifact(cfg, "sii.csv", "simulate"))
    sii = SIIResult(communities=communities, values=values,
                    seed=stage_seed(cfg.seed, "sii"))
    rows, zs = build_report_rows(rii_payload["communities"], sii, cfg.z_threshold)
    fileio.write_report_csv(cfg.out("isolation_report.csv"), rows)

    extras: dict = {
        "z_threshold": cfg.z_threshold,
        "n_labelled": rii_payload["n_labelled"],
        "excluded_users": rii_payload["excluded_users"],
    }
    retention_path = cfg.out("retention.csv")
    if retention_path.exists():
        extras["retention"] = [
            {"weekday": d, "n_shared": n, "retention": v}
            for d, n, v in fileio.read_retention_csv(retention_path)
        ]
    if cfg.planted:
        cfg.require("planted")
        planted = fileio.read_partition_csv(cfg.planted)
        detected = fileio.read_partition_csv(_artifact(cfg, "partition.csv", "communities"))
        shared = set(planted.assignment) & set(detected.assignment)
        extras["planted"] = {
            "agreement": retention(detected, planted, cfg.matching),
            "n_shared": len(shared),
            "matching": cfg.matching,
        }
    fileio.write_json(cfg.out("isolation_report.json"),
                      report_json_payload(rows, zs, sii, extras))

    if cfg.figures:
        hists = {}
        for c in communities:
            dist_path = cfg.out(f"hist_dist_c{c}.csv")
            angle_path = cfg.out(f"hist_angle_c{c}.csv")
            hists[c] = (
                fileio.read_histogram_csv(dist_path) if dist_path.exists() else [],
                fileio.read_histogram_csv(angle_path) if angle_path.exists() else [],
            )
        render_figures(Path(cfg.outdir) / "figures", rows, hists)

    counts = _bundle_counts(cfg, rows, zs)
    write_manifest(cfg, counts)
    for row in rows:
        flag = "SEGREGATED" if zs[row["community"]].segregated else "not segregated"
        print(f"report: community {row['community']}: RII={row['RII']:.4f} "
              f"SII={row['SII_mean']:.4f}+-{row['SII_std']:.4f} z={row['z']:.2f} "
              f"({flag})")
    print(f"report: bundle written to {cfg.outdir}/ (manifest.json)")


def _bundle_counts(cfg: PipelineConfig, rows: list[dict], zs: dict) -> dict:
    """Pipeline tallies for the manifest, recomputed from the written artifacts."""
    counts: dict = {
        "communities_reported": len(rows),
        "segregated": sum(1 for row in rows if zs[row["community"]].segregated),
    }
    cells_path = cfg.out("cells.geojson")
    if cells_path.exists():
        counts["towers_kept"] = len(fileio.read_cells_geojson(cells_path))
    rejections_path = cfg.out("rejections.json")
    if rejections_path.exists():
        rej = fileio.read_json(rejections_path)
        counts["users_accepted"] = rej["users"]["accepted"]
        counts["users_rejected"] = sum(
            v for k, v in rej["users"].items()
            if k not in ("accepted", "dropped_pings")
        )
        counts["malformed_lines"] = rej["malformed_lines"]
    network_path = cfg.out("network.csv")
    if network_path.exists():
        net = fileio.read_network_csv(network_path)
        counts["network_nodes"] = len(net.nodes)
        counts["network_edges"] = len(net.edges)
        counts["network_weight"] = net.m
    partition_path = cfg.out("partition.json")
    if partition_path.exists():
        part = fileio.read_json(partition_path)
        counts["communities_detected"] = part["n_communities"]
        counts["modularity"] = part["Q"]
        counts["nodes_pruned"] = len(part["discarded"])
    sii_path = cfg.out("sii.csv")
    if sii_path.exists():
        _, values = fileio.read_sii_csv(sii_path)
        counts["replications"] = int(values.shape[0])
    return counts


class StageFailure(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


def run_all(cfg: PipelineConfig) -> None:
    """Sequential composition of the stage commands; aborts on the first failure."""
    stages: list[tuple[str, object]] = [
        ("tessellate", lambda: stage_tessellate(cfg)),
        ("infer", lambda: stage_infer(cfg)),
        ("network", lambda: stage_network(cfg)),
        ("communities", lambda: stage_communities(cfg)),
    ]
    if cfg.weekdays:
        for wd in range(5):
            stages.append((f"network[{WEEKDAY_NAMES[wd]}]",
                           lambda wd=wd: stage_network(cfg, wd)))
            stages.append((f"communities[{WEEKDAY_NAMES[wd]}]",
                           lambda wd=wd: stage_communities(cfg, wd)))
        stages.append(("retention", lambda: stage_retention(cfg)))
    stages += [
        ("isolation", lambda: stage_isolation(cfg)),
        ("simulate", lambda: stage_simulate(cfg)),
        ("report", lambda: stage_report(cfg)),
    ]
    for name, fn in stages:
        try:
            fn()
        except Exception as exc:
            raise StageFailure(name, exc) from exc


# --- synthetic-city command ---------------------------------------------------------

_SYNTH_INT = {"n_towers", "n_users", "n_communities", "seed", "n_weeks", "max_noise_pings"}
_SYNTH_FLOAT = {"mu", "distance_scale", "separation"}
_SYNTH_BOOL = {"guards"}
_SYNTH_KEYS = _SYNTH_INT | _SYNTH_FLOAT | _SYNTH_BOOL | {"start", "outdir"}


def _synth_coerce(key: str, raw: str):
    if key in _SYNTH_INT:
        return int(raw)
    if key in _SYNTH_FLOAT:
        return float(raw)
    if key in _SYNTH_BOOL:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    return raw


def cmd_synth(args: argparse.Namespace) -> int:
    values: dict = {}
    if args.config:
        for key, raw in parse_kv_file(args.config, _SYNTH_KEYS).items():
            values[key] = _synth_coerce(key, raw)
    for key in _SYNTH_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    outdir = Path(values.pop("outdir", "city"))
    if "start" in values:
        try:
            values["start"] = date.fromisoformat(values["start"])
        except ValueError as exc:
            raise ConfigError(f"start: expected ISO date, got {values['start']!r}") from exc
    try:
        scfg = SynthConfig(**values)
    except SynthError as exc:
        raise ConfigError(str(exc)) from exc
    city = generate_city(scfg)
    outdir.mkdir(parents=True, exist_ok=True)
    fileio.write_towers_csv(outdir / "towers.csv", city.towers)
    fileio.write_urban_geojson(outdir / "urban.geojson", city.urban)
    fileio.write_blocks_geojson(outdir / "blocks.geojson", city.blocks)
    fileio.write_pings_csv(outdir / "pings.csv", city.pings)
    fileio.write_partition_csv(outdir / "planted_communities.csv",
                               Partition(assignment=city.tower_community))
    fileio.write_planted_anchors_csv(outdir / "planted_anchors.csv", city.anchors)
    n_content = len(city.towers) - len(city.guard_ids)
    print(f"synth: {n_content} towers (+{len(city.guard_ids)} guards), "
          f"{len(city.anchors)} users, {len(city.pings)} pings -> {outdir}/")
    return 0


# --- argument parsing ---------------------------------------------------------------

_PATH_FLAGS = ("towers", "urban", "blocks", "pings", "planted", "outdir")
_STR_FLAGS = ("home_window", "work_window", "share_rule", "matching", "sel_weight")
_INT_FLAGS = ("min_anchor_pings", "seed", "min_size", "wii_mc", "reps")
_FLOAT_FLAGS = ("bounds_expand", "overlap_threshold", "anchor_share", "resolution",
                "bin_dist", "bin_angle", "z_threshold")
_BOOL_FLAGS = ("project", "weekdays", "joint", "figures")


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="key = value config file; flags override it")
    for name in _PATH_FLAGS + _STR_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None)
    for name in _INT_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name,
                            type=int, default=None)
    for name in _FLOAT_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name,
                            type=float, default=None)
    for name in _BOOL_FLAGS:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None,
                            action=argparse.BooleanOptionalAction)


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {
        key: getattr(args, key)
        for key in _VALID_KEYS
        if getattr(args, key, None) is not None
    }
    return build_config(args.config, overrides)


def _weekday_index(args: argparse.Namespace) -> int | None:
    if getattr(args, "weekday", None) is None:
        return None
    return WEEKDAY_NAMES.index(args.weekday)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mobiseg",
        description="Home-work mobility networks, movement communities, and "
                    "workplace-segregation statistics.",
    )
    parser.add_argument("--version", action="version", version=f"mobiseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def pipeline_cmd(name: str, help_text: str, runner, weekday_flag: bool = False):
        p = sub.add_parser(name, help=help_text)
        _add_pipeline_flags(p)
        if weekday_flag:
            p.add_argument("--weekday", choices=WEEKDAY_NAMES, default=None,
                           help="build the per-weekday variant")
        p.set_defaults(runner=runner)
        return p

    pipeline_cmd("tessellate", "Voronoi cells, urban filter, SEL assignment",
                 lambda cfg, args: stage_tessellate(cfg))
    pipeline_cmd("infer", "home/work anchor inference from pings",
                 lambda cfg, args: stage_infer(cfg))
    pipeline_cmd("network", "aggregate (or per-weekday) home-work network",
                 lambda cfg, args: stage_network(cfg, _weekday_index(args)),
                 weekday_flag=True)
    pipeline_cmd("communities", "Louvain communities on a built network",
                 lambda cfg, args: stage_communities(cfg, _weekday_index(args)),
                 weekday_flag=True)
    pipeline_cmd("retention", "daily-vs-aggregate community retention",
                 lambda cfg, args: stage_retention(cfg))
    pipeline_cmd("isolation", "observed isolation indices and SEL profiles",
                 lambda cfg, args: stage_isolation(cfg))
    pipeline_cmd("simulate", "relocation null model: histograms and SII",
                 lambda cfg, args: stage_simulate(cfg))
    pipeline_cmd("report", "final tables, figures, and the run manifest",
                 lambda cfg, args: stage_report(cfg))
    pipeline_cmd("run-all", "every stage in sequence",
                 lambda cfg, args: run_all(cfg))

    synth = sub.add_parser("synth", help="generate a synthetic city with planted truth")
    synth.add_argument("--config", metavar="FILE", help="key = value synth config")
    synth.add_argument("--outdir", default=None)
    synth.add_argument("--start", default=None, help="first Monday, ISO date")
    for name in sorted(_SYNTH_INT):
        synth.add_argument(f"--{name.replace('_', '-')}", dest=name,
                           type=int, default=None)
    for name in sorted(_SYNTH_FLOAT):
        synth.add_argument(f"--{name.replace('_', '-')}", dest=name,
                           type=float, default=None)
    synth.add_argument("--guards", dest="guards", default=None,
                       action=argparse.BooleanOptionalAction)
    synth.set_defaults(runner=None, synth=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "synth", False):
            return cmd_synth(args)
        args.runner(_pipeline_config(args), args)
        return 0
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc.cause)
    except Exception as exc:  # noqa: BLE001 - single exit-code mapping point
        code = _exit_code(exc)
        if code == 4:
            traceback.print_exc()
        else:
            print(f"error: {exc}", file=sys.stderr)
        return code


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, ValueError):  # DataError, GeometryError, SynthError included
        return 3
    return 4
