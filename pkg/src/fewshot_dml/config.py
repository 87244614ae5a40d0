"""Training configuration: every tunable the pipelines expose.

Config files are flat ``key = value`` text ('#' starts a comment); CLI
flags mirror the keys and win over the file.  Unknown keys are rejected.
Every command writes its fully resolved configuration next to its outputs.
"""

import hashlib
from dataclasses import dataclass, fields

from .errors import ConfigError


@dataclass
class TrainConfig:
    # shared optimizer settings
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 0.0   # 0 disables
    grad_clip: float = 0.0      # 0 disables (global-norm clip)
    leaky_slope: float = 0.2

    # conditional WGAN-GP
    noise_dim: int = 312
    gan_gen_hidden: tuple = (128, 128, 128)
    gan_critic_hidden: tuple = (128, 128, 128)
    lambda_gp: float = 10.0
    beta_cls: float = 0.01
    n_critic: int = 5
    gan_batch_size: int = 64
    gan_epochs: int = 30
    gan_lr: float = 1e-4
    gan_beta1: float = 0.5
    eq2_literal: bool = False            # keep the log on the real-sample critic term
    interpolate_real_aerial: bool = False  # interpolate generated vs real aerial instead of ground
    per_record: int = 1

    # frozen few-shot classifier used inside the generator objective
    classifier_hidden: tuple = ()
    classifier_steps: int = 500
    classifier_lr: float = 1e-3
    classifier_beta1: float = 0.9

    # disjoint multitask trainer
    dml_epochs: int = 200
    dml_batch_size: int = 32
    dml_lr: float = 1e-3
    dml_beta1: float = 0.9
    trunk_activation: str = "relu"
    branch_weight_real: float = 1.0       # branch 1: real head on real data
    branch_weight_real_on_aux: float = 1.0  # branch 2: real head on aux data
    branch_weight_aux_on_real: float = 1.0  # branch 3: aux head on real data
    branch_weight_aux: float = 1.0        # branch 4: aux head on aux data
    generated_branch_weight: float = 0.5  # stage-2 weight for branches fed generated data
    soft_pseudo_labels: bool = False
    ensemble_heads: bool = False          # average heads 1 and 2 at inference
    include_games_in_finetune: bool = False
    k: int = 5

    # dataset handling
    split_train: float = 0.6
    split_val: float = 0.1
    split_test: float = 0.3
    split_seed: int = 0
    kshot_seed: int = 0
    standardize_features: bool = False

    # synthetic benchmark
    synth_classes: int = 8
    synth_game_classes: int = 7
    synth_game_overlap: int = 3
    synth_dim: int = 64
    synth_ground_per_class: int = 100
    synth_aerial_per_class: int = 50
    synth_game_per_class: int = 100
    synth_mean_scale: float = 1.0
    synth_cluster_spread: float = 2.0
    synth_map_strength: float = 0.5
    synth_aerial_noise: float = 0.5
    synth_aerial_shift: float = 1.0
    synth_game_offset: float = 0.5

    # k-shot sweep
    sweep_ks: tuple = (1, 5, 10, 15)
    sweep_seeds: tuple = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9)
    sweep_modes: tuple = ("baseline", "games_plus_generated")


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _parse_value(name, text, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"key {name}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"key {name}: expected an integer, got {text!r}") from None
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"key {name}: expected a number, got {text!r}") from None
    if isinstance(default, tuple):
        if not text:
            return ()
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if default and isinstance(default[0], str):
            return tuple(parts)
        try:
            return tuple(int(p) for p in parts)
        except ValueError:
            raise ConfigError(f"key {name}: expected comma-separated integers, got {text!r}") from None
    return text


def apply_overrides(cfg, overrides):
    """Apply {key: raw-string} overrides; unknown keys are rejected by name."""
    defaults = TrainConfig()
    for name, raw in overrides.items():
        if name not in _FIELDS:
            raise ConfigError(f"unknown config key {name!r}")
        setattr(cfg, name, _parse_value(name, str(raw), getattr(defaults, name)))
    return cfg


def parse_config_file(path):
    """Read a flat key=value config file into a {key: raw-string} dict."""
    overrides = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line.rstrip()!r}")
            key, value = stripped.split("=", 1)
            overrides[key.strip()] = value.strip()
    return overrides


def resolve_config(config_path=None, overrides=None):
    """defaults <- config file <- explicit overrides (last wins)."""
    cfg = TrainConfig()
    if config_path is not None:
        apply_overrides(cfg, parse_config_file(config_path))
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def config_to_text(cfg, extra=None):
    """Canonical key=value rendering (sorted keys); `extra` rows go on top."""
    lines = []
    if extra:
        for key in sorted(extra):
            lines.append(f"{key} = {extra[key]}")
    for name in sorted(_FIELDS):
        lines.append(f"{name} = {_format_value(getattr(cfg, name))}")
    return "\n".join(lines) + "\n"


def config_hash(cfg):
    """sha256 of the canonical config text (without run-specific extras)."""
    return hashlib.sha256(config_to_text(cfg).encode("utf-8")).hexdigest()
