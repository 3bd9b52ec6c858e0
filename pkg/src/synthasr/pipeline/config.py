"""Experiment configuration: one YAML document with these sections.

``corpora``   manifests (or ``toy: true`` to generate the micro-corpus)
``dsp``       mel/MFCC sizes
``augment``   SpecAugment parameters
``tts``       synthesis model sizes and training
``asr``       recogniser sizes, subword merges, training and beam size
``schedule``  checkpoint counts of the two training phases
``mix``       real:synthetic ratio
``lm_sweep``  LM weights tried on the dev sets
``conditions`` ordered list of ``{name, spec_aug, syn_data}`` rows
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..augment import SpecAugmentParams


class ConfigError(ValueError):
    pass


@dataclass
class CorporaConfig:
    toy: bool = False
    toy_seed: int = 0
    train: str | None = None
    dev_clean: str | None = None
    dev_other: str | None = None
    test_clean: str | None = None
    test_other: str | None = None
    text_only: str | None = None


@dataclass
class DspConfig:
    n_mels: int = 80
    n_mfcc: int = 40
    f_min: float = 60.0


@dataclass
class AugmentConfig:
    max_freq_masks: int = 4
    max_freq_width: int = 8
    time_mask_frac: float = 0.02
    max_time_width: int = 20

    def to_params(self) -> SpecAugmentParams:
        return SpecAugmentParams((1, self.max_freq_masks), (1, self.max_freq_width), self.time_mask_frac,
                                 self.max_time_width)


@dataclass
class TtsSection:
    epochs: int = 25
    batch_size: int = 8
    lr: float = 3e-3
    dec_hidden: int = 128
    max_steps: int = 200
    mel2lin_epochs: int = 15
    mel2lin_hidden: int = 128
    mel2lin_lr: float = 3e-3
    gl_iters: int = 1


@dataclass
class AsrSection:
    enc_hidden: int = 128
    dec_hidden: int = 128
    att_dim: int = 128
    embed_dim: int = 64
    ctc_weight: float = 0.5
    bpe_merges: int = 40
    batch_size: int = 8
    lr: float = 2e-3
    lr_decay: float = 0.9
    decay_every: int = 20
    beam_size: int = 4
    lm_order: int = 3


@dataclass
class ScheduleConfig:
    phase1_checkpoints: int = 8
    phase1_epochs: float = 4.0
    phase2_checkpoints: int = 17
    lr_reset: bool = True


@dataclass
class MixSection:
    ratio: str = "3:2"


@dataclass
class Condition:
    name: str
    spec_aug: bool = False
    syn_data: bool = False


def _default_conditions():
    return [Condition("baseline", False, False), Condition("syn", False, True)]


@dataclass
class ExperimentConfig:
    seed: int = 0
    corpora: CorporaConfig = field(default_factory=CorporaConfig)
    dsp: DspConfig = field(default_factory=DspConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    tts: TtsSection = field(default_factory=TtsSection)
    asr: AsrSection = field(default_factory=AsrSection)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    mix: MixSection = field(default_factory=MixSection)
    lm_sweep: list = field(default_factory=lambda: [0.0, 0.2, 0.5])
    conditions: list = field(default_factory=_default_conditions)

    def to_dict(self):
        return dataclasses.asdict(self)


_SECTIONS = {"corpora": CorporaConfig, "dsp": DspConfig, "augment": AugmentConfig, "tts": TtsSection,
             "asr": AsrSection, "schedule": ScheduleConfig, "mix": MixSection}


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        obj = cls(**data)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from None
    for name, f in fields.items():
        value = getattr(obj, name)
        default = f.default if f.default is not dataclasses.MISSING else None
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{where}.{name}: expected true/false, got {value!r}")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{name}: expected a number, got {value!r}")
    return obj


def config_from_dict(data) -> ExperimentConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    known = {"seed", "lm_sweep", "conditions", *_SECTIONS}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown section(s) {', '.join(unknown)}")
    cfg = ExperimentConfig()
    for name, cls in _SECTIONS.items():
        if name in data:
            setattr(cfg, name, _build(cls, data[name] or {}, name))
    if "seed" in data:
        if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
            raise ConfigError("seed must be an integer")
        cfg.seed = data["seed"]
    if "lm_sweep" in data:
        sweep = data["lm_sweep"]
        if (not isinstance(sweep, list) or not sweep
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) and x >= 0 for x in sweep)):
            raise ConfigError("lm_sweep must be a non-empty list of non-negative numbers")
        cfg.lm_sweep = [float(x) for x in sweep]
    if "conditions" in data:
        conds = data["conditions"]
        if not isinstance(conds, list) or not conds:
            raise ConfigError("conditions must be a non-empty list")
        cfg.conditions = [_build(Condition, c, f"conditions[{i}]") for i, c in enumerate(conds)]
        names = [c.name for c in cfg.conditions]
        if len(set(names)) != len(names):
            raise ConfigError("condition names must be unique")
    c = cfg.corpora
    if not c.toy and not (c.train and c.text_only):
        raise ConfigError("corpora: give train and text_only manifests, or set toy: true")
    s = cfg.schedule
    if s.phase1_checkpoints < 1 or s.phase2_checkpoints < 1 or s.phase1_epochs <= 0:
        raise ConfigError("schedule: checkpoint counts and epochs must be positive")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    cfg = config_from_dict(data)
    # relative corpus paths are relative to the config file
    for f in dataclasses.fields(CorporaConfig):
        v = getattr(cfg.corpora, f.name)
        if isinstance(v, str) and not Path(v).is_absolute():
            setattr(cfg.corpora, f.name, str((path.parent / v).resolve()))
    return cfg


__all__ = ["AsrSection", "AugmentConfig", "Condition", "ConfigError", "CorporaConfig", "DspConfig",
           "ExperimentConfig", "MixSection", "ScheduleConfig", "TtsSection", "config_from_dict", "load_config"]
