"""
Central configuration module for the CAE toolkit.

This module manages:
- Process-level settings read from the environment (.env honoured)
- The typed schema of run configuration files (`key = value`, dotted keys)
- Loading, overriding, validating and writing back resolved run configs
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import dotenv_values, load_dotenv

from .reports import format_value
from .storage import atomic_write

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = "resolved.conf"


class ConfigError(ValueError):
    """Raised for unknown keys, malformed values or unreadable config files."""


class Config:
    """Process-level settings for the toolkit."""

    # Logging
    LOG_LEVEL: str = os.getenv("CAE_LOG_LEVEL", "WARNING")
    LOG_FILE: str = os.getenv("CAE_LOG_FILE", "cae.log")
    VERBOSE_MODE: bool = False  # Set by command-line flag

    # Parallel chains
    WORKERS: int = int(os.getenv("CAE_WORKERS", "4"))

    # Data locations
    DATA_DIR: str = os.getenv("CAE_DATA_DIR", "data")
    MNIST_DIR: str | None = os.getenv("CAE_MNIST_DIR") or None

    # Resource monitor
    MONITOR_INTERVAL: float = float(os.getenv("CAE_MONITOR_INTERVAL", "30"))

    @classmethod
    def summary(cls) -> dict:
        """
        Get a summary of current configuration.

        Returns:
            Dictionary with all config values
        """
        return {
            "log_level": cls.LOG_LEVEL,
            "log_file": cls.LOG_FILE,
            "workers": cls.WORKERS,
            "data_dir": cls.DATA_DIR,
            "mnist_dir": cls.MNIST_DIR,
            "monitor_interval": cls.MONITOR_INTERVAL,
        }


# Singleton instance
config = Config()


@dataclass(frozen=True)
class Setting:
    kind: str  # int, float, bool, str, optional_float, float_list, str_list
    default: str
    help: str = ""


SCHEMA: dict[str, Setting] = {
    # data
    "data.source": Setting("str", "circle", "circle or idx"),
    "data.images": Setting("str", "", "IDX image file (data.source = idx)"),
    "data.labels": Setting("str", "", "IDX label file (optional)"),
    "data.n": Setting("int", "2000", "circle points, or IDX subset size (0 = all)"),
    "data.dim": Setting("int", "16", "circle ambient dimension"),
    "data.radius": Setting("float", "0.3"),
    "data.noise_std": Setting("float", "0.0"),
    "data.seed": Setting("int", "0"),
    "data.binarize": Setting("optional_float", "", "binarization threshold (empty = off)"),
    "data.split": Setting("float_list", "0.8,0.1,0.1", "train, valid, test fractions"),
    "data.split_seed": Setting("int", "0"),
    # layer 1
    "train.hidden": Setting("int", "32"),
    "train.lambda": Setting("float", "0.1"),
    "train.learning_rate": Setting("float", "0.1"),
    "train.epochs": Setting("int", "50"),
    "train.batch_size": Setting("int", "20"),
    "train.seed": Setting("int", "0"),
    "train.init_scale": Setting("float", "1.0"),
    # layer 2
    "stack.layer1": Setting("str", "", "layer-1 model file"),
    "stack.hidden": Setting("int", "32"),
    "stack.lambda": Setting("float", "0.1"),
    "stack.lambda_p": Setting("float", "0.0"),
    "stack.sigma": Setting("float", "0.1"),
    "stack.clip": Setting("bool", "true"),
    "stack.learning_rate": Setting("float", "0.1"),
    "stack.epochs": Setting("int", "50"),
    "stack.batch_size": Setting("int", "20"),
    "stack.seed": Setting("int", "0"),
    "stack.init_scale": Setting("float", "1.0"),
    # sampler
    "sampler.model": Setting("str", "", "CAE1 or CAE2 model file"),
    "sampler.sigma": Setting("float", "0.1"),
    "sampler.steps": Setting("int", "1000"),
    "sampler.modes": Setting("str_list", "jacobian,isotropic"),
    "sampler.chains": Setting("int", "4"),
    "sampler.seed": Setting("int", "0"),
    "sampler.init": Setting("str", "uniform", "uniform or example"),
    "sampler.init_index": Setting("int", "0"),
    "sampler.record_every": Setting("int", "1"),
    "sampler.burn_in": Setting("int", "100"),
    "sampler.thin": Setting("int", "1"),
    "sampler.grid_images": Setting("int", "100"),
    "sampler.grid_cols": Setting("int", "10"),
    "sampler.grid_pad": Setting("int", "1"),
    # parzen
    "parzen.traces": Setting("str", "", "directory of .ctrc files written by `sample`"),
    "parzen.min_samples": Setting("int", "100"),
    "parzen.bandwidths": Setting("float_list", "", "empty = default log-spaced grid"),
    "parzen.baseline_seed": Setting("int", "0"),
    "parzen.max_test": Setting("int", "0", "0 = whole test split"),
    # sensitivity
    "sensitivity.models": Setting("str_list", "", "model files; the last one is the reference"),
    "sensitivity.seed": Setting("int", "0"),
    "sensitivity.n": Setting("int", "0", "examples used (0 = whole train split)"),
    "sensitivity.identity": Setting("bool", "false", "use the identity deformation"),
    "sensitivity.rotation": Setting("float_list", "-0.1,0.1"),
    "sensitivity.scale_x": Setting("float_list", "0.9,1.1"),
    "sensitivity.scale_y": Setting("float_list", "0.9,1.1"),
    "sensitivity.shear": Setting("float_list", "-0.1,0.1"),
    "sensitivity.translate_x": Setting("float_list", "-1.5,1.5"),
    "sensitivity.translate_y": Setting("float_list", "-1.5,1.5"),
    # probe
    "probe.models": Setting("str_list", ""),
    "probe.seed": Setting("int", "0"),
    "probe.epochs": Setting("int", "50"),
    "probe.learning_rate": Setting("float", "0.5"),
    "probe.batch_size": Setting("int", "100"),
    # render
    "render.source": Setting("str", "dataset", "dataset, trace or filters"),
    "render.input": Setting("str", "", "trace file or model file"),
    "render.count": Setting("int", "100"),
    "render.cols": Setting("int", "10"),
    "render.pad": Setting("int", "1"),
    # spectrum
    "spectrum.model": Setting("str", ""),
    "spectrum.points": Setting("int", "200"),
    "spectrum.top_m": Setting("int", "2"),
    "spectrum.ratio_index": Setting("int", "5"),
}

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def parse_value(key: str, raw: str):
    """
    Convert raw text to the schema type of `key`.

    Raises:
        ConfigError: If the key is unknown or the text does not parse
    """
    if key not in SCHEMA:
        raise ConfigError(f"Unknown config key: {key}")
    kind = SCHEMA[key].kind
    text = "" if raw is None else str(raw).strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "optional_float":
            return float(text) if text else None
        if kind == "bool":
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "float_list":
            return [float(v) for v in text.split(",") if v.strip()]
        if kind == "str_list":
            return [v.strip() for v in text.split(",") if v.strip()]
        return text
    except ValueError as e:
        raise ConfigError(f"Invalid value for {key} ({kind}): {e}")


class RunConfig:
    """Validated run configuration: every schema key with a typed value."""

    def __init__(self, values: dict):
        self._values = dict(values)

    def __getitem__(self, key: str):
        if key not in self._values:
            raise ConfigError(f"Unknown config key: {key}")
        return self._values[key]

    def section(self, name: str) -> dict:
        """Values of one section, keyed without the section prefix."""
        prefix = f"{name}."
        return {k[len(prefix) :]: v for k, v in self._values.items() if k.startswith(prefix)}

    def with_overrides(self, overrides: dict[str, str]) -> "RunConfig":
        values = dict(self._values)
        for key, raw in overrides.items():
            values[key] = parse_value(key, raw)
        return RunConfig(values)

    def to_text(self) -> str:
        """Sorted `key = value` lines that load back to an equal config."""
        return "".join(f"{key} = {format_value(self._values[key])}\n" for key in sorted(self._values))

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self._values == other._values


def default_run_config() -> RunConfig:
    return RunConfig({key: parse_value(key, s.default) for key, s in SCHEMA.items()})


def load_run_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """
    Load a run config file over the schema defaults, then apply overrides.

    Args:
        path: Flat `key = value` file (optional)
        overrides: Raw override values keyed by dotted name

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: On unknown keys, malformed values or a missing file
    """
    cfg = default_run_config()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        raw = dotenv_values(path, interpolate=False)
        missing = [k for k, v in raw.items() if v is None]
        if missing:
            raise ConfigError(f"{path}: keys without a value: {', '.join(missing)}")
        cfg = cfg.with_overrides(raw)
        logger.debug(f"Loaded {len(raw)} settings from {path}")
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def write_resolved(cfg: RunConfig, out_dir: str | Path) -> Path:
    path = Path(out_dir) / RESOLVED_CONFIG_NAME
    atomic_write(path, cfg.to_text().encode("utf-8"))
    return path
