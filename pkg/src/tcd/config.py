"""Run configuration: defaults, config-file and environment overrides.

Precedence is flag > environment (``TCD_*``) > config file > default.
The config file is plain ``key = value`` lines with ``#`` comments.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields


@dataclass
class RunConfig:
    tile_size: int = 1024
    overlap: int = 256
    batch_size: int = 4
    workers: int = 1
    threshold: float = 0.5
    confidence: float = 0.4
    nms_iou: float = 0.5
    merge_iou: float = 0.5
    semantic_fraction: float = 0.5
    height_threshold: float = 3.0
    seed: int = 42
    skip_empty: bool = True
    nodata_skip: bool = False

    def validate(self) -> None:
        # Fail fast: reuse the module-level invariant checks before any work.
        from .merge import MergeConfig
        from .stitch import StitchConfig
        from .tiling import TileGridSpec

        TileGridSpec(max(self.tile_size, 1), max(self.tile_size, 1),
                     self.tile_size, self.overlap)
        StitchConfig(self.tile_size, self.overlap, self.batch_size,
                     self.skip_empty, self.threshold, self.workers)
        MergeConfig(self.nms_iou, self.merge_iou, self.confidence,
                    self.semantic_fraction)
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ValueError(f"config key {name!r}: not a boolean: {raw!r}")
    try:
        return kind(raw)
    except ValueError as exc:
        raise ValueError(f"config key {name!r}: {exc}") from exc


def parse_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
    return values


def load_config(config_path=None, overrides: dict | None = None,
                environ=None) -> RunConfig:
    """Merge defaults, config file, TCD_* environment and explicit flags."""
    environ = os.environ if environ is None else environ
    cfg = RunConfig()
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {f.name: type(getattr(cfg, f.name)) for f in fields(RunConfig)}

    if config_path:
        for key, raw in parse_config_file(config_path).items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, _coerce(key, types[key], raw))
    for name in known:
        env_key = "TCD_" + name.upper()
        if env_key in environ:
            setattr(cfg, name, _coerce(name, types[name], environ[env_key]))
    if overrides:
        for key, value in overrides.items():
            if value is not None:
                setattr(cfg, key, value)
    cfg.validate()
    return cfg
