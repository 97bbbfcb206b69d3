"""Run configuration shared by all pipeline stages.

Configs serialize to a flat ``key=value`` text file (dotted keys for
nested sections, comma lists for grids) and round-trip losslessly.  The
SHA-256 digest of the canonical dump identifies a run in reports.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .classifiers import HyperGrid, KINDS
from .dsp import FilterConfig
from .segmentation import SegmentationConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    train_fraction: float = 0.8
    n_components: int = 25
    model: str = "svm"
    # deterministic even-stride caps on beats per user and session; 0 disables
    max_train_beats: int = 120
    max_test_beats: int = 80
    threads: int = 1
    filter: FilterConfig = field(default_factory=FilterConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    grid: HyperGrid = field(default_factory=HyperGrid)

    def __post_init__(self):
        if self.model not in KINDS:
            raise ConfigError(f"model must be one of {KINDS}, got {self.model!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.n_components < 1:
            raise ConfigError("n_components must be at least 1")
        if self.max_train_beats < 0 or self.max_test_beats < 0:
            raise ConfigError("beat caps must be non-negative (0 disables)")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")


_SECTIONS = {"filter": FilterConfig, "segmentation": SegmentationConfig, "grid": HyperGrid}


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_like(template, text: str):
    if isinstance(template, tuple):
        element = template[0]
        return tuple(_parse_like(element, tok) for tok in text.split(",") if tok != "")
    if isinstance(template, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    return text


def config_items(config: RunConfig) -> list[tuple[str, str]]:
    """Canonical (key, value) pairs, sorted by key."""
    items: list[tuple[str, str]] = []
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name in _SECTIONS:
            for sub in fields(value):
                items.append((f"{f.name}.{sub.name}", _format_value(getattr(value, sub.name))))
        else:
            items.append((f.name, _format_value(value)))
    return sorted(items)


def config_digest(config: RunConfig) -> str:
    dump = "\n".join(f"{k}={v}" for k, v in config_items(config))
    return hashlib.sha256(dump.encode("utf-8")).hexdigest()[:16]


def write_config(path: Path, config: RunConfig) -> None:
    lines = [f"{k}={v}" for k, v in config_items(config)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def apply_overrides(config: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Apply flat ``key=value`` overrides; values are parsed from the defaults' types."""
    top: dict[str, object] = {}
    nested: dict[str, dict[str, object]] = {}
    defaults = {f.name: f for f in fields(RunConfig)}
    for key, text in overrides.items():
        if "." in key:
            section, _, name = key.partition(".")
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            section_cls = _SECTIONS[section]
            section_fields = {f.name: f for f in fields(section_cls)}
            if name not in section_fields:
                raise ConfigError(f"unknown config key {key!r}")
            template = getattr(getattr(config, section), name)
            nested.setdefault(section, {})[name] = _parse_like(template, text)
        else:
            if key not in defaults or key in _SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            template = getattr(config, key)
            top[key] = _parse_like(template, text)
    for section, values in nested.items():
        top[section] = replace(getattr(config, section), **values)
    try:
        return replace(config, **top)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def read_config(path: Path, base: RunConfig | None = None) -> RunConfig:
    base = base if base is not None else RunConfig()
    overrides: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        overrides[key.strip()] = value.strip()
    return apply_overrides(base, overrides)
