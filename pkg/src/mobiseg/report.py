"""Final report assembly: per-community table, figures, and the run manifest."""

from __future__ import annotations

import hashlib
import json
import math
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, stage_seed
from .geometry import SEL_LABELS
from .nullmodel import SIIResult, z_distance

WEEKDAY_NAMES = ("mon", "tue", "wed", "thu", "fri")


def build_report_rows(
    rii_info: dict, sii: SIIResult, z_threshold: float
) -> tuple[list[dict], dict[int, object]]:
    """Join RII/WII/SEL data with the SII distribution into table rows.

    Returns (csv rows, z-scores per community).
    """
    rii = {c: rii_info[str(c)]["rii"] for c in sii.communities}
    zs = z_distance(rii, sii, threshold=z_threshold)
    rows = []
    for c in sii.communities:
        info = rii_info[str(c)]
        sel = info.get("sel")
        row = {
            "community": c,
            "RII": float(info["rii"]),
            "WII": float(info["wii"]),
            "SII_mean": sii.mean(c),
            "SII_std": sii.std(c),
            "z": zs[c].z,
        }
        for label in SEL_LABELS:
            row[f"sel_{label.lower()}"] = None if sel is None else float(sel[label])
        rows.append(row)
    return rows, zs


def report_json_payload(rows: list[dict], zs: dict, sii: SIIResult, extras: dict) -> dict:
    payload = {
        "communities": [
            {
                **{k: (None if v is None else (v if not isinstance(v, float) or math.isfinite(v) else "inf"))
                   for k, v in row.items()},
                "segregated": zs[row["community"]].segregated,
            }
            for row in rows
        ],
        "replications": sii.reps,
    }
    payload.update(extras)
    return payload


# --- figures -------------------------------------------------------------------


def render_figures(
    figdir: Path,
    rows: list[dict],
    hists: dict[int, tuple[list, list]],
) -> list[Path]:
    """Render the report figures (PNG) from the already-written table data."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figdir.mkdir(parents=True, exist_ok=True)
    out: list[Path] = []
    labels = [row["community"] for row in rows]
    cmap = plt.get_cmap("tab10")

    # distance and angle distributions per community
    for name, idx, xlabel, scale in (
        ("fig_distance.png", 0, "home-work distance [km]", 1e-3),
        ("fig_angle.png", 1, "direction angle [deg]", 1.0),
    ):
        fig, ax = plt.subplots(figsize=(7.0, 4.2))
        for j, c in enumerate(labels):
            rows_h = hists.get(c, ([], []))[idx]
            if not rows_h:
                continue
            xs = [scale * 0.5 * (lo + hi) for lo, hi, _ in rows_h]
            ms = [m for _, _, m in rows_h]
            ax.plot(xs, ms, drawstyle="steps-mid", color=cmap(j % 10), label=f"community {c}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("probability mass")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = figdir / name
        fig.savefig(path, dpi=120)
        plt.close(fig)
        out.append(path)

    # isolation indices: RII markers vs SII distribution
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    xs = np.arange(len(labels))
    ax.errorbar(
        xs,
        [row["SII_mean"] for row in rows],
        yerr=[3 * row["SII_std"] for row in rows],
        fmt="s",
        color="0.45",
        capsize=4,
        label="SII mean +- 3 sigma",
    )
    ax.plot(xs, [row["RII"] for row in rows], "o", color="crimson", label="RII")
    ax.plot(xs, [row["WII"] for row in rows], "_", markersize=16, color="navy", label="WII (k)")
    ax.set_xticks(xs, [str(c) for c in labels])
    ax.set_xlabel("community")
    ax.set_ylabel("isolation index")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = figdir / "fig_isolation.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    out.append(path)

    # SEL composition stacked bars
    if any(row["sel_s1"] is not None for row in rows):
        fig, ax = plt.subplots(figsize=(7.0, 4.2))
        bottom = np.zeros(len(labels))
        for i, label in enumerate(SEL_LABELS):
            vals = np.array(
                [row[f"sel_{label.lower()}"] or 0.0 for row in rows], dtype=float
            )
            ax.bar(xs, vals, bottom=bottom, color=cmap(i), label=label, width=0.6)
            bottom += vals
        ax.set_xticks(xs, [str(c) for c in labels])
        ax.set_xlabel("community")
        ax.set_ylabel("SEL fraction")
        ax.legend(fontsize=8, ncol=5)
        fig.tight_layout()
        path = figdir / "fig_sel.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        out.append(path)
    return out


# --- manifest --------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: PipelineConfig, counts: dict) -> Path:
    """Hash every artifact in the output directory into manifest.json.

    The manifest pins package/library versions, the full parameter set, the
    derived per-stage seeds, pipeline counts, and a digest per artifact, so a
    rerun can be checked for byte identity at a glance.
    """
    import matplotlib
    import scipy
    import shapely

    outdir = Path(cfg.outdir)
    artifacts = {}
    for path in sorted(outdir.rglob("*")):
        if path.is_dir() or path.name == "manifest.json":
            continue
        artifacts[str(path.relative_to(outdir))] = {
            "bytes": path.stat().st_size,
            "sha256": _sha256(path),
        }
    seeds = {"louvain": stage_seed(cfg.seed, "louvain"),
             "sii": stage_seed(cfg.seed, "sii"),
             "wii_mc": stage_seed(cfg.seed, "wii")}
    for wd in WEEKDAY_NAMES:
        seeds[f"louvain_{wd}"] = stage_seed(cfg.seed, f"louvain_{wd}")
    manifest = {
        "package": {"name": "mobiseg", "version": __version__},
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "shapely": shapely.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
        "config": cfg.as_dict(),
        "seeds": seeds,
        "counts": counts,
        "artifacts": artifacts,
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path
