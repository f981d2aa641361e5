"""Typed views of an experiment configuration."""
from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field
from typing import Optional, Tuple

from inflect.diagnostics.locator import METHODS, LocatorConfig
from inflect.diagnostics.probes import ProbeConfig
from inflect.errors import ConfigError, InvalidInputError
from inflect.harness.tasks import TaskSpec
from inflect.model.architectures.encoder import ModelConfig
from inflect.model.lora import LoraSpec
from inflect.utility.configs import Config

UNDER = "UNDER"
OVER = "OVER"
REGIMES = (UNDER, OVER)

SHALLOW = "shallow"
FULL = "full"
SELECTIVE_LORA = "selective-lora"
LORA_EVERYWHERE = "lora-everywhere"
FROZEN_ALL = "frozen-all"
STRATEGIES = (SHALLOW, FULL, SELECTIVE_LORA, LORA_EVERYWHERE, FROZEN_ALL)
STRATEGY_ALIASES = {"shallow-top-k": SHALLOW, "frozen-everything": FROZEN_ALL}
EXPLICIT = "explicit"
BAND_SOURCES = METHODS + (EXPLICIT,)


def _regime_order(item):
    name = item[0]
    return REGIMES.index(name) if name in REGIMES else len(REGIMES)


@dataclass(frozen=True)
class RegimeSpec:
    name: str
    source_epochs: int
    lr: float = 1e-3
    batch_size: int = 32
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.name not in REGIMES:
            raise InvalidInputError(f"unknown regime '{self.name}', expected one of {REGIMES}")
        if self.source_epochs < 1:
            raise InvalidInputError(f"source_epochs must be >= 1, got {self.source_epochs}")


@dataclass(frozen=True)
class StrategySpec:
    name: str
    k: int = 2
    lora: LoraSpec = field(default_factory=LoraSpec)
    band_source: str = "greedy"
    band: Tuple[int, ...] = ()
    steps: int = 300
    lr: float = 2e-5
    batch_size: int = 16
    weight_decay: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "name", STRATEGY_ALIASES.get(self.name, self.name))
        if self.name not in STRATEGIES:
            raise InvalidInputError(f"unknown strategy '{self.name}', expected one of {STRATEGIES}")
        if self.band_source not in BAND_SOURCES:
            raise InvalidInputError(f"unknown band source '{self.band_source}', expected one of {BAND_SOURCES}")
        if self.band_source == EXPLICIT and not self.band:
            raise InvalidInputError("band_source 'explicit' needs a non-empty band")
        if self.steps < 0 or self.batch_size < 1:
            raise InvalidInputError("steps must be >= 0 and batch_size >= 1")
        object.__setattr__(self, "band", tuple(sorted(set(int(l) for l in self.band))))
        if self.name == FROZEN_ALL:
            object.__setattr__(self, "steps", 0)

    @property
    def uses_lora(self) -> bool:
        return self.name in (SELECTIVE_LORA, LORA_EVERYWHERE)

    @property
    def label(self) -> str:
        return f"shallow-top-{self.k}" if self.name == SHALLOW else self.name

    def to_dict(self) -> dict:
        record = asdict(self)
        record["lora"] = self.lora.to_dict()
        record["band"] = list(self.band)
        return record


@dataclass(frozen=True)
class DiagnosticsConfig:
    pca_dim: int = 16
    cka_samples: int = 512
    eval_batch_size: int = 256


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig
    task: TaskSpec
    regimes: Tuple[RegimeSpec, ...]
    strategies: Tuple[StrategySpec, ...]
    lora: LoraSpec
    locator: LocatorConfig
    diagnostics: DiagnosticsConfig
    probe: ProbeConfig
    seeds: Tuple[int, ...] = (42, 43, 44)
    out_dir: str = "runs"
    progress: bool = False

    def regime(self, name: str) -> RegimeSpec:
        for regime in self.regimes:
            if regime.name == name:
                return regime
        raise ConfigError(f"regime '{name}' is not configured")

    def strategy(self, name: str) -> StrategySpec:
        name = STRATEGY_ALIASES.get(name, name)
        for strategy in self.strategies:
            if strategy.name == name:
                return strategy
        raise ConfigError(f"strategy '{name}' is not configured")

    def with_seeds(self, seeds) -> "ExperimentConfig":
        return dataclasses.replace(self, seeds=tuple(int(s) for s in seeds))

    @classmethod
    def from_config(cls, config: Config, seed: Optional[int] = None, out_dir: Optional[str] = None) -> "ExperimentConfig":
        """
        Build typed specs from a loaded Config.

        Unknown keys, missing sections and invalid values all raise ConfigError.
        ``seed`` replaces the configured seed list, ``out_dir`` the output root.
        """
        try:
            model = ModelConfig(**config.section("model"))
            task = TaskSpec(**config.section("task"))
            lora = LoraSpec(**config.section("lora"))
            finetune = config.section("finetune")
            regimes = tuple(RegimeSpec(name=name, **values)
                            for name, values in sorted(config.section("regimes").items(), key=_regime_order))
            strategies = tuple(StrategySpec(**{**finetune, **entry, "lora": lora})
                               for entry in getattr(config, "strategies", None) or [])
            experiment = cls(
                model=model,
                task=task,
                regimes=regimes,
                strategies=strategies,
                lora=lora,
                locator=LocatorConfig(**config.section("locator")),
                diagnostics=DiagnosticsConfig(**config.section("diagnostics")),
                probe=ProbeConfig(**config.section("probe")),
                seeds=tuple(int(s) for s in getattr(config, "seeds", (42, 43, 44))),
                out_dir=str(getattr(config, "out_dir", "runs")),
                progress=bool(getattr(config, "progress", False)),
            )
        except (TypeError, InvalidInputError) as e:
            raise ConfigError(f"invalid experiment config: {e}") from e

        if seed is not None:
            experiment = experiment.with_seeds([seed])
        if out_dir is not None:
            experiment = dataclasses.replace(experiment, out_dir=str(out_dir))
        experiment.validate()
        return experiment

    def validate(self):
        if not self.regimes:
            raise ConfigError("config defines no regimes")
        if not self.seeds:
            raise ConfigError("config defines no seeds")
        names = [regime.name for regime in self.regimes]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate regimes {names}")
        if UNDER in names and OVER in names and self.regime(OVER).source_epochs <= self.regime(UNDER).source_epochs:
            raise ConfigError("OVER must train for more source epochs than UNDER")
        if self.model.vocab_size != self.task.vocab_size or self.model.num_classes != self.task.num_classes:
            raise ConfigError("model and task disagree on vocab_size or num_classes")
        if self.model.max_seq_len < self.task.seq_len:
            raise ConfigError(f"task seq_len={self.task.seq_len} exceeds model max_seq_len={self.model.max_seq_len}")
        if self.diagnostics.pca_dim > self.model.d_model:
            raise ConfigError(f"pca_dim={self.diagnostics.pca_dim} exceeds d_model={self.model.d_model}")
        if self.diagnostics.cka_samples > self.task.val_size:
            raise ConfigError(f"cka_samples={self.diagnostics.cka_samples} exceeds val_size={self.task.val_size}")
        bad = [layer for strategy in self.strategies for layer in strategy.band
               if not 0 <= layer < self.model.num_layers]
        if bad:
            raise ConfigError(f"explicit band layers {bad} outside [0, {self.model.num_layers})")
        bad_k = [strategy.k for strategy in self.strategies
                 if strategy.name == SHALLOW and not 0 <= strategy.k <= self.model.num_layers]
        if bad_k:
            raise ConfigError(f"shallow k={bad_k} outside [0, {self.model.num_layers}]")
        return self

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "task": self.task.to_dict(),
            "regimes": [asdict(regime) for regime in self.regimes],
            "strategies": [strategy.to_dict() for strategy in self.strategies],
            "lora": self.lora.to_dict(),
            "locator": asdict(self.locator),
            "diagnostics": asdict(self.diagnostics),
            "probe": asdict(self.probe),
            "seeds": list(self.seeds),
            "out_dir": self.out_dir,
        }
