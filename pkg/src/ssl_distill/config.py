"""Flat-key experiment configuration with presets.

Config files are UTF-8 text, one `section.key = value` assignment per
line, `#` starting a comment line.  Values resolve with precedence
flag > config file > preset; the experiment seed additionally accepts the
SSL_DISTILL_SEED environment variable as the lowest-precedence source
(below any preset-independent default of 0, it is consulted only when no
flag and no config line set a seed).

Two presets ship: `desk`, sized to finish on a laptop CPU in minutes, and
`paper`, carrying the published hyperparameters (lr 1e-5 / weight decay
5e-4 / batch 64 / 100 epochs for pretraining; lr 1e-4 / batch 32 / 200
epochs for distillation; 100 final epochs; label fraction 2%; 299px
inputs).  Where no published value exists (teacher fine-tune schedule,
momentum, distill weight decay) both presets use the same documented
defaults.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .augment import AugmentationPolicy
from .data import GeneratorConfig
from .pipeline import StageConfig, TRAINING_STAGES


class ConfigError(ValueError):
    """Unknown key, bad value, or malformed config line."""


ENV_SEED = "SSL_DISTILL_SEED"

_POLICY_FIELDS = (
    "brightness", "contrast", "saturation", "hue",
    "crop_scale_min", "rotation_max", "hflip_prob",
)

# key -> type tag: int | float | str | floats (comma list)
SCHEMA: Dict[str, str] = {
    "data.root": "str",
    "data.n_train": "int",
    "data.n_test": "int",
    "data.image_size": "int",
    "data.grade_distribution": "floats",
    "data.seed": "int",
    "split.label_fraction": "float",
    "split.seed": "int",
    "model.teacher": "str",
    "model.student": "str",
    "experiment.out_dir": "str",
    "experiment.seed": "int",
    "loss.temperature": "float",
    "loss.bce_eps": "float",
    "pseudo_label.threshold": "float",
}
for _pol in ("strong", "weak"):
    for _f in _POLICY_FIELDS:
        SCHEMA[f"augment.{_pol}.{_f}"] = "float"
for _st in TRAINING_STAGES:
    SCHEMA[f"{_st}.lr"] = "float"
    SCHEMA[f"{_st}.weight_decay"] = "float"
    SCHEMA[f"{_st}.momentum"] = "float"
    SCHEMA[f"{_st}.batch_size"] = "int"
    SCHEMA[f"{_st}.epochs"] = "int"
    SCHEMA[f"{_st}.policy"] = "str"

_COMMON: Dict[str, str] = {
    "data.root": "./dataset",
    "data.grade_distribution": "0.45,0.20,0.20,0.10,0.05",
    "data.seed": "0",
    "split.seed": "0",
    "model.teacher": "tiny-t",
    "model.student": "tiny-s",
    "experiment.out_dir": "./runs",
    "loss.temperature": "0.5",
    "loss.bce_eps": "1e-7",
    "pseudo_label.threshold": "0.5",
    "augment.strong.brightness": "0.4",
    "augment.strong.contrast": "0.4",
    "augment.strong.saturation": "0.4",
    "augment.strong.hue": "0.1",
    "augment.strong.crop_scale_min": "0.6",
    "augment.strong.rotation_max": "30",
    "augment.strong.hflip_prob": "0.5",
    "augment.weak.brightness": "0.2",
    "augment.weak.contrast": "0.2",
    "augment.weak.saturation": "0",
    "augment.weak.hue": "0",
    "augment.weak.crop_scale_min": "1.0",
    "augment.weak.rotation_max": "0",
    "augment.weak.hflip_prob": "0.5",
    "pretrain.policy": "strong",
    "finetune_teacher.policy": "weak",
    "distill.policy": "weak",
    "finetune_student.policy": "weak",
    "pretrain.momentum": "0.9",
    "finetune_teacher.momentum": "0.9",
    "distill.momentum": "0.9",
    "finetune_student.momentum": "0.9",
}

PRESETS: Dict[str, Dict[str, str]] = {
    "desk": {
        **_COMMON,
        "data.n_train": "2000",
        "data.n_test": "400",
        "data.image_size": "32",
        "split.label_fraction": "0.05",
        "pretrain.lr": "0.02",
        "pretrain.weight_decay": "5e-4",
        "pretrain.batch_size": "64",
        "pretrain.epochs": "30",
        "finetune_teacher.lr": "0.005",
        "finetune_teacher.weight_decay": "1e-4",
        "finetune_teacher.batch_size": "32",
        "finetune_teacher.epochs": "20",
        "distill.lr": "0.02",
        "distill.weight_decay": "5e-4",
        "distill.batch_size": "32",
        "distill.epochs": "40",
        "finetune_student.lr": "0.005",
        "finetune_student.weight_decay": "1e-4",
        "finetune_student.batch_size": "32",
        "finetune_student.epochs": "20",
    },
    "paper": {
        **_COMMON,
        "data.n_train": "57146",
        "data.n_test": "8790",
        "data.image_size": "299",
        "split.label_fraction": "0.02",
        "pretrain.lr": "1e-5",
        "pretrain.weight_decay": "5e-4",
        "pretrain.batch_size": "64",
        "pretrain.epochs": "100",
        "finetune_teacher.lr": "1e-4",
        "finetune_teacher.weight_decay": "5e-4",
        "finetune_teacher.batch_size": "32",
        "finetune_teacher.epochs": "100",
        "distill.lr": "1e-4",
        "distill.weight_decay": "5e-4",
        "distill.batch_size": "32",
        "distill.epochs": "200",
        "finetune_student.lr": "1e-4",
        "finetune_student.weight_decay": "5e-4",
        "finetune_student.batch_size": "32",
        "finetune_student.epochs": "100",
    },
}


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Raw `key = value` pairs; unknown keys and bad syntax are rejected."""
    values: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}: expected 'key = value', line {lineno}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}: unknown key {key!r}, line {lineno}")
        if not value:
            raise ConfigError(f"{source}: empty value for {key!r}, line {lineno}")
        values[key] = value
    return values


def _convert(key: str, raw: str):
    kind = SCHEMA[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "floats":
            return tuple(float(p) for p in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    data_root: str
    generator: GeneratorConfig
    label_fraction: float
    split_seed: int
    teacher_spec: str
    student_spec: str
    out_dir: str
    seed: int
    temperature: float
    bce_eps: float
    pseudo_threshold: float
    strong_policy: AugmentationPolicy
    weak_policy: AugmentationPolicy
    stages: Dict[str, StageConfig]


def _policy_from(resolved: Dict[str, object], name: str) -> AugmentationPolicy:
    kwargs = {f: resolved[f"augment.{name}.{f}"] for f in _POLICY_FIELDS}
    policy = AugmentationPolicy(name, **kwargs)
    policy.validate()
    return policy


def resolve(
    preset: str = "desk",
    file_values: Optional[Dict[str, str]] = None,
    overrides: Optional[Dict[str, str]] = None,
    seed_flag: Optional[int] = None,
    env: Optional[Dict[str, str]] = None,
) -> ExperimentConfig:
    """Merge preset, config file, and flag overrides into a typed config."""
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
    env = os.environ if env is None else env
    raw: Dict[str, str] = dict(PRESETS[preset])
    for k, v in (file_values or {}).items():
        if k not in SCHEMA:
            raise ConfigError(f"unknown key {k!r}")
        raw[k] = v
    for k, v in (overrides or {}).items():
        if k not in SCHEMA:
            raise ConfigError(f"unknown key {k!r}")
        raw[k] = v

    resolved = {k: _convert(k, v) for k, v in raw.items()}

    # seed precedence: flag > config/override > environment > 0
    if seed_flag is not None:
        seed = int(seed_flag)
    elif "experiment.seed" in raw:
        seed = int(resolved["experiment.seed"])
    elif env.get(ENV_SEED):
        try:
            seed = int(env[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED}: cannot parse {env[ENV_SEED]!r} as int") from None
    else:
        seed = 0

    missing = [k for k in SCHEMA if k not in resolved and k != "experiment.seed"]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(sorted(missing))}")

    generator = GeneratorConfig(
        n_train=resolved["data.n_train"],
        n_test=resolved["data.n_test"],
        image_size=resolved["data.image_size"],
        grade_distribution=resolved["data.grade_distribution"],
        seed=resolved["data.seed"],
    )
    generator.validate()

    stages: Dict[str, StageConfig] = {}
    for st in TRAINING_STAGES:
        cfg = StageConfig(
            stage=st,
            lr=resolved[f"{st}.lr"],
            weight_decay=resolved[f"{st}.weight_decay"],
            momentum=resolved[f"{st}.momentum"],
            batch_size=resolved[f"{st}.batch_size"],
            epochs=resolved[f"{st}.epochs"],
            policy=resolved[f"{st}.policy"],
            temperature=resolved["loss.temperature"],
            threshold=resolved["pseudo_label.threshold"],
            seed=seed,
        )
        cfg.validate()
        stages[st] = cfg

    fraction = resolved["split.label_fraction"]
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"split.label_fraction must be in (0, 1], got {fraction}")
    threshold = resolved["pseudo_label.threshold"]
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"pseudo_label.threshold must be in (0, 1), got {threshold}")

    return ExperimentConfig(
        preset=preset,
        data_root=resolved["data.root"],
        generator=generator,
        label_fraction=fraction,
        split_seed=resolved["split.seed"],
        teacher_spec=resolved["model.teacher"],
        student_spec=resolved["model.student"],
        out_dir=resolved["experiment.out_dir"],
        seed=seed,
        temperature=resolved["loss.temperature"],
        bce_eps=resolved["loss.bce_eps"],
        pseudo_threshold=threshold,
        strong_policy=_policy_from(resolved, "strong"),
        weak_policy=_policy_from(resolved, "weak"),
        stages=stages,
    )


def load_experiment(
    config_path: Optional[str] = None,
    preset: str = "desk",
    overrides: Optional[Dict[str, str]] = None,
    seed_flag: Optional[int] = None,
    env: Optional[Dict[str, str]] = None,
) -> ExperimentConfig:
    file_values = None
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            file_values = parse_config_text(fh.read(), source=config_path)
    return resolve(preset, file_values, overrides, seed_flag, env)
