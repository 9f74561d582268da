"""Run configuration: flat ``key = value`` files with command-line overrides."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from ..memory import RateTriple, check_stability
from ..model import StawmConfig, format_layers, parse_layers

MODES = ("classify", "draw-addition", "draw-bernoulli", "selfsup", "sketchpad")
DATASETS = ("mnist", "synth-quadrant", "synth-bars")

MODE_HEADS = {
    "classify": "classify",
    "draw-addition": "draw-addition",
    "draw-bernoulli": "draw-bernoulli",
    "selfsup": "classify",
    "sketchpad": "sketchpad",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: StawmConfig = field(default_factory=StawmConfig)
    mode: str = "classify"
    dataset: str = "mnist"
    data_dir: str | None = None
    out_dir: str = "runs"
    checkpoint: str | None = None
    epochs: int = 5
    batch_size: int = 128
    seed: int = 0
    lr: float = 1e-3
    lr_gamma: float = 0.99
    milestones: tuple[int, ...] = ()
    clip_norm: float = 5.0
    augment: bool = True
    rotation_degrees: float = 20.0
    train_subset: int = 0  # 0 keeps the whole training split
    test_subset: int = 0
    val_fraction: float = 0.0
    synth_count: int = 400
    synth_size: int = 28
    rate_margin: float = 1e-3
    eval_batch: int = 500

    @property
    def head(self) -> str:
        return MODE_HEADS[self.mode]

    def with_(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def echo(self) -> dict:
        """Every effective setting, model and run, as plain values."""
        out = {}
        for f in dataclasses.fields(self.model):
            value = getattr(self.model, f.name)
            out[f.name] = format_layers(value) if f.name.endswith("_layers") else value
        out["hidden_size"] = self.model.hidden_size
        for f in dataclasses.fields(self):
            if f.name != "model":
                value = getattr(self, f.name)
                out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


_MODEL_KEYS = {f.name: f for f in dataclasses.fields(StawmConfig) if f.name != "head"}
_RUN_KEYS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "model"}
_OPTIONAL_STR = {"data_dir", "checkpoint"}


def _convert(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if key.endswith("_layers"):
            return parse_layers(text)
        if key == "milestones":
            return tuple(int(t) for t in text.replace(",", " ").split())
        if key in _OPTIONAL_STR:
            return text or None
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None


def parse_text(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        pairs[key] = value
    return pairs


def parse_config(source: str | None = None, overrides: dict | None = None,
                 check_paths: bool = True) -> RunConfig:
    """Build a :class:`RunConfig` from a config file and overrides.

    ``source`` is a path, or None for defaults only. Override values may be
    strings or already-typed; None values are ignored so that unset CLI flags
    fall through to the file.
    """
    pairs: dict = {}
    if source is not None:
        with open(source, encoding="utf-8") as f:
            pairs.update(parse_text(f.read()))
    pairs.update({k: v for k, v in (overrides or {}).items() if v is not None})

    model_changes, run_changes = {}, {}
    for key, raw in pairs.items():
        if key in _MODEL_KEYS:
            default = getattr(StawmConfig(), key)
            model_changes[key] = _convert(key, raw, default)
        elif key in _RUN_KEYS:
            default = getattr(RunConfig(), key)
            run_changes[key] = _convert(key, raw, default)
        elif key == "hidden_size":
            raise ConfigError("hidden_size is fixed at 2 * memory_size; set memory_size instead")
        else:
            raise ConfigError(f"unknown config key {key!r}")

    mode = run_changes.get("mode", RunConfig.mode)
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "selfsup":
        model_changes.setdefault("learnable_rates", True)
    try:
        model = StawmConfig(head=MODE_HEADS[mode], **model_changes).validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    config = RunConfig(model=model, **run_changes)
    validate(config, check_paths)
    return config


def validate(config: RunConfig, check_paths: bool = True) -> RunConfig:
    m = config.model
    report = check_stability(RateTriple(m.eta, m.delta, m.theta))
    if not report.satisfied:
        raise ConfigError("memory rates violate the stability conditions: " + ", ".join(report.violations))
    if config.epochs < 1 or config.batch_size < 1 or config.eval_batch < 1:
        raise ConfigError("epochs and batch sizes must be positive")
    if config.lr <= 0 or config.clip_norm <= 0:
        raise ConfigError("learning rate and clip norm must be positive")
    if not 0.0 <= config.val_fraction < 1.0:
        raise ConfigError("val_fraction must lie in [0, 1)")
    if config.seed < 0:
        raise ConfigError("seed must be non-negative")
    if config.dataset not in DATASETS:
        raise ConfigError(f"unknown dataset {config.dataset!r}; expected one of {DATASETS}")
    if config.dataset == "mnist":
        if not config.data_dir:
            raise ConfigError("dataset path missing: set data_dir or pass --data-dir")
        if check_paths and not os.path.isdir(config.data_dir):
            raise ConfigError(f"dataset path {config.data_dir!r} does not exist")
    elif m.image_size != config.synth_size or m.channels != 1:
        raise ConfigError("synthetic corpora are single-channel at synth_size")
    if config.mode == "selfsup" and not config.checkpoint:
        raise ConfigError("selfsup mode needs a drawing checkpoint")
    return config


def model_config_from_echo(echo: dict, **changes) -> StawmConfig:
    """Rebuild the architecture from a config echo such as a checkpoint stores."""
    kwargs = {}
    for name in _MODEL_KEYS:
        if name in echo:
            value = echo[name]
            kwargs[name] = parse_layers(value) if name.endswith("_layers") else value
    kwargs["head"] = echo.get("head", "classify")
    kwargs.update(changes)
    return StawmConfig(**kwargs).validate()


def format_config(config: RunConfig) -> str:
    lines = []
    for key, value in config.echo().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif value is None:
            value = ""
        elif isinstance(value, bool):
            value = "true" if value else "false"
        prefix = "# " if key in ("head", "hidden_size") else ""  # derived, not settable
        lines.append(f"{prefix}{key} = {value}")
    return "\n".join(lines) + "\n"
