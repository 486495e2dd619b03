"""Pipeline configuration: plain key=value files, flag overrides, seed splitting."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .ingest import TimeWindow


class ConfigError(ValueError):
    """Invalid configuration (bad key, out-of-range value, missing input path)."""


@dataclass
class PipelineConfig:
    # input artifacts
    towers: str | None = None
    urban: str | None = None
    blocks: str | None = None
    pings: str | None = None
    planted: str | None = None  # optional tower_id,community ground truth
    outdir: str = "out"
    # geometry
    project: bool = False
    bounds_expand: float = 0.10
    overlap_threshold: float = 0.70
    # anchor inference
    home_window: str = "22:00-07:00"
    work_window: str = "09:00-17:00"
    min_anchor_pings: int = 5
    anchor_share: float = 0.5
    share_rule: str = "combined"
    # communities
    seed: int = 42
    resolution: float = 1.0
    min_size: int = 2
    matching: str = "greedy"
    weekdays: bool = True  # per-weekday networks in run-all
    # segregation / null model
    sel_weight: str = "area"
    wii_mc: int = 0  # 0 = analytic well-mixed index
    reps: int = 100
    bin_dist: float = 500.0
    bin_angle: float = 10.0
    joint: bool = False
    z_threshold: float = 3.0
    # report
    figures: bool = True

    def validate(self) -> "PipelineConfig":
        if not 0.0 <= self.overlap_threshold <= 1.0:
            raise ConfigError(f"overlap_threshold must be in [0, 1], got {self.overlap_threshold}")
        if not 0.0 <= self.anchor_share < 1.0:
            raise ConfigError(f"anchor_share must be in [0, 1), got {self.anchor_share}")
        if self.bounds_expand < 0:
            raise ConfigError(f"bounds_expand must be nonnegative, got {self.bounds_expand}")
        if self.min_anchor_pings < 1:
            raise ConfigError(f"min_anchor_pings must be >= 1, got {self.min_anchor_pings}")
        if self.share_rule not in ("combined", "per_anchor"):
            raise ConfigError(f"share_rule must be combined or per_anchor, got {self.share_rule!r}")
        if self.matching not in ("greedy", "optimal"):
            raise ConfigError(f"matching must be greedy or optimal, got {self.matching!r}")
        if self.sel_weight not in ("area", "users"):
            raise ConfigError(f"sel_weight must be area or users, got {self.sel_weight!r}")
        if self.min_size < 1:
            raise ConfigError(f"min_size must be >= 1, got {self.min_size}")
        if self.reps < 2:
            raise ConfigError(f"reps must be >= 2, got {self.reps}")
        if self.bin_dist <= 0:
            raise ConfigError(f"bin_dist must be positive, got {self.bin_dist}")
        if not 0.0 < self.bin_angle <= 360.0:
            raise ConfigError(f"bin_angle must be in (0, 360], got {self.bin_angle}")
        if self.resolution <= 0:
            raise ConfigError(f"resolution must be positive, got {self.resolution}")
        if self.z_threshold <= 0:
            raise ConfigError(f"z_threshold must be positive, got {self.z_threshold}")
        if self.wii_mc < 0:
            raise ConfigError(f"wii_mc must be >= 0, got {self.wii_mc}")
        for name in ("home_window", "work_window"):
            try:
                TimeWindow.parse(getattr(self, name))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return self

    def require(self, *names: str) -> None:
        """Assert the named input paths are configured and exist."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"missing required input: {name}")
            if not Path(value).exists():
                raise ConfigError(f"{name} file not found: {value}")

    def out(self, *parts: str) -> Path:
        p = Path(self.outdir).joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_BOOL_KEYS = {"project", "weekdays", "joint", "figures"}
_INT_KEYS = {"min_anchor_pings", "seed", "min_size", "reps", "wii_mc"}
_FLOAT_KEYS = {"bounds_expand", "overlap_threshold", "anchor_share", "resolution",
               "bin_dist", "bin_angle", "z_threshold"}
_VALID_KEYS = {f.name for f in fields(PipelineConfig)}


def _coerce(key: str, raw: str):
    if key in _BOOL_KEYS:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: bad numeric value {raw!r}") from None
    return raw


def parse_kv_file(path, valid_keys: set[str]) -> dict[str, str]:
    """Parse ``key = value`` lines into raw strings; '#' starts a comment."""
    if not Path(path).exists():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in valid_keys:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = raw
    return out


def parse_config_file(path) -> dict:
    """Parse a pipeline config file with values coerced to their key's type."""
    return {key: _coerce(key, raw) for key, raw in parse_kv_file(path, _VALID_KEYS).items()}


def build_config(file_path=None, overrides: dict | None = None) -> PipelineConfig:
    """Config file values, then CLI flag overrides on top."""
    values: dict = {}
    if file_path is not None:
        values.update(parse_config_file(file_path))
    for key, value in (overrides or {}).items():
        if value is not None:
            values.update({key: value})
    return PipelineConfig(**values).validate()


def stage_seed(root: int, stage: str) -> int:
    """Deterministic 63-bit sub-seed for a named stage of a run."""
    digest = hashlib.sha256(f"{root}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1
