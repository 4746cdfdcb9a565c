"""Run configuration: defaults, flat key = value config files, CLI merging.

Precedence is defaults < config file < command-line flags. Every file key
has a flag of the same name (dashes for underscores). Preset-dependent
defaults (iterations, halving_period) resolve last, after the preset is
known.
"""

from dataclasses import dataclass, fields

from .data import IMAGENET_MEAN, IMAGENET_STD
from .errors import ConfigurationError
from .graph import PRESETS

# (iterations, halving_period) when the config leaves them unset
_PRESET_DEFAULTS = {"desk64": (300, 500), "paper224": (400000, 100000)}


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigurationError("expected a boolean, got %r" % text)


def _parse_floats(text):
    return tuple(float(v) for v in str(text).split(","))


@dataclass
class RunConfig:
    preset: str = "desk64"
    data: str = ""
    k: int = 10
    seed: int = 0
    iterations: int = None
    batch: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    halving_period: int = None
    augment: bool = True
    norm_mean: tuple = IMAGENET_MEAN
    norm_std: tuple = IMAGENET_STD
    out: str = "out"
    log_interval: int = 10
    fractions: tuple = (0.9, 0.8, 0.7, 0.6)

    def resolve(self):
        """Fill preset-dependent defaults and validate; returns self."""
        if self.preset not in PRESETS:
            raise ConfigurationError(
                "unknown preset %r (choose from %s)"
                % (self.preset, ", ".join(sorted(PRESETS))))
        it_default, period_default = _PRESET_DEFAULTS[self.preset]
        if self.iterations is None:
            self.iterations = it_default
        if self.halving_period is None:
            self.halving_period = period_default
        if self.batch < 1:
            raise ConfigurationError("batch must be >= 1, got %d" % self.batch)
        if self.iterations < 1:
            raise ConfigurationError(
                "iterations must be >= 1, got %d" % self.iterations)
        if self.halving_period < 1:
            raise ConfigurationError(
                "halving_period must be >= 1, got %d" % self.halving_period)
        if self.log_interval < 1:
            raise ConfigurationError(
                "log_interval must be >= 1, got %d" % self.log_interval)
        if len(self.norm_mean) != 3 or len(self.norm_std) != 3:
            raise ConfigurationError("norm_mean and norm_std need 3 values")
        return self

    def echo(self):
        """The effective configuration as sorted `key = value` lines."""
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join("%g" % v for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append("%s = %s" % (f.name, value))
        return "\n".join(lines)


_PARSERS = {
    "preset": str, "data": str, "out": str,
    "k": int, "seed": int, "iterations": int, "batch": int,
    "halving_period": int, "log_interval": int,
    "lr": float, "momentum": float, "weight_decay": float,
    "augment": _parse_bool,
    "norm_mean": _parse_floats, "norm_std": _parse_floats,
    "fractions": _parse_floats,
}


def read_config_file(path):
    """Parse a flat `key = value` file with # comments into a dict."""
    values = {}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigurationError(
                    "bad config line %d in %s: %r" % (line_no, path, line.rstrip()))
            key, _, value = text.partition("=")
            key = key.strip()
            if key not in _PARSERS:
                raise ConfigurationError(
                    "unknown config key %r at line %d of %s" % (key, line_no, path))
            try:
                values[key] = _PARSERS[key](value.strip())
            except ValueError as exc:
                raise ConfigurationError(
                    "bad value for %s at line %d of %s (%s)"
                    % (key, line_no, path, exc))
    return values


def build_run_config(file_path=None, overrides=None):
    """Merge defaults, an optional config file, and CLI overrides."""
    cfg = RunConfig()
    merged = read_config_file(file_path) if file_path else {}
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key, value in merged.items():
        if key not in _PARSERS:
            raise ConfigurationError("unknown config key %r" % key)
        setattr(cfg, key, value)
    return cfg.resolve()
