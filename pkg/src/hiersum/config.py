"""Experiment configuration: flat ``key = value`` files with command-line overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import get_type_hints

from .encoder import PRESETS, ModelConfig
from .pretrain import PretrainConfig
from .summarizer import FinetuneConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # model
    model: str = "tiny"
    dropout: float = 0.1
    # text pipeline
    vocab: str = ""
    merges: str = ""
    # pre-training
    stage_corpora: str = ""          # comma-separated corpus paths, one per stage
    stage_names: str = ""            # optional comma-separated names
    pretrain_valid: str = ""
    pretrain_lr: float = 1e-4
    pretrain_warmup: int = 10_000
    pretrain_batch_size: int = 8
    pretrain_max_epochs: int = 200
    pretrain_max_steps: int = 0      # 0 = unlimited
    pretrain_eval_every: int = 1
    patience: int = 3
    min_rel_improvement: float = 0.005
    valid_mask_seed: int = 1234
    # fine-tuning
    finetune_corpus: str = ""        # labelled corpus (output of `label`)
    finetune_valid: str = ""
    finetune_lr: float = 5e-5
    finetune_warmup: int = 4_000
    finetune_batch_size: int = 32
    epochs: int = 5
    finetune_max_steps: int = 0
    # shared
    weight_decay: float = 0.01
    max_selected: int = 3
    k_range: str = "1,2,3,4,5"
    seed: int = 0
    out_dir: str = "runs"

    # -- derived views -----------------------------------------------------
    def model_config(self, vocab_size: int) -> ModelConfig:
        if self.model not in PRESETS:
            raise ConfigError(f"unknown model preset {self.model!r}; choose from {sorted(PRESETS)}")
        try:
            return ModelConfig.preset(self.model, vocab_size, dropout=self.dropout)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def stages(self) -> list[tuple[str, str]]:
        paths = _split(self.stage_corpora)
        names = _split(self.stage_names) or [f"stage{i + 1}" for i in range(len(paths))]
        if len(names) != len(paths):
            raise ConfigError("stage_names and stage_corpora have different lengths")
        return list(zip(names, paths))

    def k_values(self) -> list[int]:
        try:
            ks = [int(k) for k in _split(self.k_range)]
        except ValueError as exc:
            raise ConfigError(f"bad k_range {self.k_range!r}") from exc
        if not ks or min(ks) < 1:
            raise ConfigError("k_range must list positive integers")
        return ks

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(
            base_lr=self.pretrain_lr, warmup_steps=self.pretrain_warmup,
            weight_decay=self.weight_decay, batch_size=self.pretrain_batch_size,
            max_epochs=self.pretrain_max_epochs, max_steps=self.pretrain_max_steps or None,
            eval_every=self.pretrain_eval_every, patience=self.patience,
            min_rel_improvement=self.min_rel_improvement, seed=self.seed,
            valid_mask_seed=self.valid_mask_seed)

    def finetune_config(self) -> FinetuneConfig:
        return FinetuneConfig(
            base_lr=self.finetune_lr, warmup_steps=self.finetune_warmup,
            weight_decay=self.weight_decay, batch_size=self.finetune_batch_size,
            epochs=self.epochs, max_steps=self.finetune_max_steps or None, seed=self.seed)

    def check(self) -> None:
        """Validate values that do not depend on files."""
        positive = ("pretrain_lr", "finetune_lr", "pretrain_warmup", "finetune_warmup",
                    "pretrain_batch_size", "finetune_batch_size", "pretrain_max_epochs",
                    "pretrain_eval_every", "patience", "max_selected")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("epochs", "pretrain_max_steps", "finetune_max_steps", "weight_decay"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        self.model_config(vocab_size=5)
        self.k_values()


def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _coerce(name: str, raw: str, kind) -> object:
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_assignments(lines, source: str = "<flags>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | None = None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then the config file, then overrides (highest precedence)."""
    values: dict[str, str] = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_assignments(p.read_text(encoding="utf-8").splitlines(), str(p)))
    values.update(overrides or {})
    hints = get_type_hints(ExperimentConfig)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = ExperimentConfig(**{k: _coerce(k, v, hints[k]) for k, v in values.items()})
    cfg.check()
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(cfg).items())
