"""Run configuration: flat dotted keys, line-oriented config files, defaults.

Config files are `key = value` lines with `#` comments. Every key has a
documented default; unknown keys, type mismatches, and out-of-range values
are hard errors naming the key and line. The effective config echoes to
`effective.cfg` and reparses to an identical RunConfig.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

MODES = ("full", "no-inhibition", "direct-training", "direct-pruning")
HL_SCOPES = ("row", "option", "task")
HEBBIAN_SCOPES = ("layer", "network")


@dataclass
class RunConfig:
    # suite
    suite_seed: int = 7
    suite_train_size: int = 2000
    suite_test_size: int = 500
    suite_overlap: float = 1.0
    suite_tau_cmd: float = 0.1
    # model
    model_width_factor: float = 0.25
    model_step: int = 4
    model_v_th: float = 1.0
    model_tau_init: float = 2.0
    model_beta: float = 4.0
    # training
    train_lr: float = 0.2
    train_momentum: float = 0.9
    train_batch_size: int = 64
    train_epochs: int = 30
    train_burst_epochs: int = 5
    train_finetune_epochs: int = 10
    # evolution controller
    evolution_episodes: int = 8
    evolution_gamma: float = 0.5
    evolution_hl_scope: str = "row"
    # plasticity / pruning
    plasticity_alpha: float = 0.6
    plasticity_N: int = 12
    plasticity_probe_size: int = 256
    plasticity_hebbian_scope: str = "layer"
    # run protocol
    run_mode: str = "full"
    run_seed: int = 0
    run_tasks: int = 9

    def key_value_pairs(self):
        """(dotted key, value) pairs in canonical sorted order."""
        return [(key, getattr(self, _KEYS[key].attr)) for key in sorted(_KEYS)]


@dataclass(frozen=True)
class _KeySpec:
    attr: str
    kind: type
    check: object = None  # callable(value) -> bool
    describe: str = ""


def _in(options):
    return lambda v: v in options, "one of " + "/".join(options)


_KEYS: dict[str, _KeySpec] = {
    "suite.seed": _KeySpec("suite_seed", int, lambda v: v >= 0, ">= 0"),
    "suite.train_size": _KeySpec("suite_train_size", int, lambda v: v >= 10, ">= 10"),
    "suite.test_size": _KeySpec("suite_test_size", int, lambda v: v >= 10, ">= 10"),
    "suite.overlap": _KeySpec("suite_overlap", float, lambda v: 0.0 <= v <= 1.0, "in [0, 1]"),
    "suite.tau_cmd": _KeySpec("suite_tau_cmd", float, lambda v: v > 0.0, "> 0"),
    "model.width_factor": _KeySpec("model_width_factor", float, lambda v: v > 0.0, "> 0"),
    "model.step": _KeySpec("model_step", int, lambda v: v >= 1, ">= 1"),
    "model.v_th": _KeySpec("model_v_th", float, lambda v: v > 0.0, "> 0"),
    "model.tau_init": _KeySpec("model_tau_init", float, lambda v: True),
    "model.beta": _KeySpec("model_beta", float, lambda v: v > 0.0, "> 0"),
    "train.lr": _KeySpec("train_lr", float, lambda v: v > 0.0, "> 0"),
    "train.momentum": _KeySpec("train_momentum", float, lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
    "train.batch_size": _KeySpec("train_batch_size", int, lambda v: v >= 1, ">= 1"),
    "train.epochs": _KeySpec("train_epochs", int, lambda v: v >= 0, ">= 0"),
    "train.burst_epochs": _KeySpec("train_burst_epochs", int, lambda v: v >= 0, ">= 0"),
    "train.finetune_epochs": _KeySpec("train_finetune_epochs", int, lambda v: v >= 0, ">= 0"),
    "evolution.episodes": _KeySpec("evolution_episodes", int, lambda v: v >= 1, ">= 1"),
    "evolution.gamma": _KeySpec("evolution_gamma", float, lambda v: v > 0.0, "> 0"),
    "evolution.hl_scope": _KeySpec("evolution_hl_scope", str, *_in(HL_SCOPES)),
    "plasticity.alpha": _KeySpec("plasticity_alpha", float, lambda v: 0.0 <= v < 1.0, "in [0, 1)"),
    "plasticity.N": _KeySpec("plasticity_N", int, lambda v: v > 0, "> 0"),
    "plasticity.probe_size": _KeySpec("plasticity_probe_size", int, lambda v: v >= 1, ">= 1"),
    "plasticity.hebbian_scope": _KeySpec("plasticity_hebbian_scope", str, *_in(HEBBIAN_SCOPES)),
    "run.mode": _KeySpec("run_mode", str, *_in(MODES)),
    "run.seed": _KeySpec("run_seed", int, lambda v: v >= 0, ">= 0"),
    "run.tasks": _KeySpec("run_tasks", int, lambda v: 1 <= v <= 9, "in [1, 9]"),
}


def _coerce(key: str, raw: str, where: str) -> object:
    spec = _KEYS[key]
    text = raw.strip()
    try:
        if spec.kind is int:
            value = int(text)
        elif spec.kind is float:
            value = float(text)
        else:
            value = text
    except ValueError:
        raise ConfigError(f"{where}: key '{key}' expects {spec.kind.__name__}, got '{text}'")
    if spec.check is not None and not spec.check(value):
        raise ConfigError(f"{where}: key '{key}' value {value!r} out of range (must be {spec.describe})")
    return value


def apply_overrides(config: RunConfig, overrides) -> RunConfig:
    """Apply `key=value` override strings on top of a config."""
    values = dataclasses.asdict(config)
    for i, item in enumerate(overrides):
        if "=" not in item:
            raise ConfigError(f"override {i + 1}: expected key=value, got '{item}'")
        key, raw = item.split("=", 1)
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"override {i + 1}: unknown key '{key}'")
        values[_KEYS[key].attr] = _coerce(key, raw, f"override {i + 1}")
    return RunConfig(**values)


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    values = dataclasses.asdict(RunConfig())
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{stripped}'")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        values[_KEYS[key].attr] = _coerce(key, raw, f"{source}:{lineno}")
    return RunConfig(**values)


def parse_config(path=None, overrides=()) -> RunConfig:
    """Load a config file (or defaults when path is None) plus overrides."""
    if path is None:
        config = RunConfig()
    else:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        config = parse_config_text(p.read_text(), source=str(p))
    return apply_overrides(config, overrides)


def format_config(config: RunConfig) -> str:
    """Effective-config echo; reparsing it reproduces the identical RunConfig."""
    lines = []
    for key, value in config.key_value_pairs():
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_effective_config(config: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "effective.cfg"
    path.write_text(format_config(config))
    return path
