"""Experiment configuration and the train+evaluate cell shared by the CLI and the ablation grid."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .agent import AgentConfig, AgentModel, build_agent
from .evaluation import SplitReport, evaluate
from .lm import EncoderKind, LMModel, PretrainConfig, pretrain
from .training import ConfigError, StrategyConfig, TrainConfig, train
from .world import WorldConfig, WorldSplit

ENCODERS = tuple(k.value for k in EncoderKind)


@dataclass
class StrategySection:
    kind: str = "SS"
    epsilon: float = 0.5

    def build(self) -> StrategyConfig:
        return StrategyConfig(self.kind, self.epsilon)


@dataclass
class EvalSection:
    setting: str = "S"  # S, M or both
    splits: tuple[str, ...] = ("val_seen", "val_unseen")
    include_test: bool = False


@dataclass
class AblateSection:
    encoders: tuple[str, ...] = ENCODERS
    strategies: tuple[str, ...] = ("TF", "SF", "SS")
    seeds: tuple[int, ...] = (0,)
    splits: tuple[str, ...] = ("val_seen", "val_unseen")


def desk_train_config() -> TrainConfig:
    """Desk-scale schedule: the published 1e-4 rate barely moves a toy agent in minutes."""
    return TrainConfig(stage1_epochs=10, stage2_epochs=15, lr_main=2e-3, lr_lm_finetune=1e-3)


@dataclass
class ExperimentConfig:
    """Everything a command needs; JSON-serializable, unknown keys rejected."""
    seed: int = 0
    encoder: str = "scratch_embedding"
    world: WorldConfig = field(default_factory=WorldConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    strategy: StrategySection = field(default_factory=StrategySection)
    train: TrainConfig = field(default_factory=desk_train_config)
    eval: EvalSection = field(default_factory=EvalSection)
    ablate: AblateSection = field(default_factory=AblateSection)

    _SECTIONS = {"world": WorldConfig, "pretrain": PretrainConfig, "agent": AgentConfig, "strategy": StrategySection,
                 "train": TrainConfig, "eval": EvalSection, "ablate": AblateSection}

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        cfg = cls()
        cfg.update(d)
        return cfg

    def update(self, d: dict) -> None:
        top = {f.name for f in fields(self)}
        unknown = set(d) - top
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, value in d.items():
            if key in self._SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                section = getattr(self, key)
                known = {f.name for f in fields(section)}
                bad = set(value) - known
                if bad:
                    raise ConfigError(f"unknown keys in {key!r}: {sorted(bad)}")
                merged = dict(asdict(section), **value)
                for f in fields(section):
                    if isinstance(getattr(section, f.name), tuple):
                        merged[f.name] = tuple(merged[f.name])
                try:
                    setattr(self, key, type(section)(**merged))
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad {key!r} section: {exc}") from exc
            else:
                setattr(self, key, value)
        self.validate()

    def validate(self) -> None:
        if self.encoder not in ENCODERS:
            raise ConfigError(f"unknown encoder {self.encoder!r}; choose from {ENCODERS}")
        try:
            self.world.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.train.validate()
        self.strategy.build()
        if self.eval.setting not in ("S", "M", "both"):
            raise ConfigError(f"eval setting must be S, M or both, got {self.eval.setting!r}")
        for enc in self.ablate.encoders:
            if enc not in ENCODERS:
                raise ConfigError(f"unknown encoder {enc!r} in ablate.encoders")
        if not (self.ablate.encoders and self.ablate.strategies and self.ablate.seeds):
            raise ConfigError("ablate grid axes must be non-empty")
        for s in self.ablate.strategies:
            StrategyConfig(s, self.strategy.epsilon)
        if self.agent.embed_dim != self.pretrain.dim:
            raise ConfigError("agent.embed_dim must equal pretrain.dim")


def pretrained_lm(world: WorldSplit, kind: str, cfg: ExperimentConfig, seed: int,
                  cache_dir: Path | None = None) -> tuple[LMModel, list[float]]:
    """Pretrain on training-split instructions only; reuses a cached checkpoint when present."""
    pcfg = PretrainConfig(**dict(asdict(cfg.pretrain), seed=seed))
    corpus = world.corpus("train_seen")
    # the cache is only valid for the same corpus and vocabulary
    digest = hashlib.sha256(world.vocab.to_lines().encode())
    for x in corpus:
        digest.update(repr(x.tokens).encode())
    key = {"config": asdict(pcfg), "corpus": digest.hexdigest()}
    path = curve_path = None
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        path = cache_dir / f"{kind}_seed{seed}.ckpt"
        curve_path = path.with_suffix(".json")
        if path.exists() and curve_path.exists():
            meta = json.loads(curve_path.read_text())
            if {k: meta.get(k) for k in key} == key:
                return LMModel.load(path), meta["perplexity"]
    lm, curve = pretrain(corpus, kind, len(world.vocab), pcfg)
    if path is not None:
        lm.save(path)
        curve_path.write_text(json.dumps(dict(key, perplexity=curve), indent=1, sort_keys=True) + "\n")
    return lm, curve


def build_model(world: WorldSplit, encoder: str, cfg: ExperimentConfig, seed: int, lm: LMModel | None = None) -> AgentModel:
    agent_cfg = AgentConfig(**dict(asdict(cfg.agent), seed=seed))
    return build_agent(encoder, len(world.vocab), world.config.feature_dim, agent_cfg, lm=lm)


def run_cell(world: WorldSplit, encoder: str, strategy: StrategyConfig, seed: int, cfg: ExperimentConfig,
             lm_cache: Path | None = None, out_dir: Path | None = None) -> dict[str, dict]:
    """Pretrain (if needed), train both stages, and evaluate the configured splits in the S setting."""
    lm = None
    if EncoderKind(encoder) is not EncoderKind.SCRATCH:
        lm, _ = pretrained_lm(world, encoder, cfg, seed, lm_cache)
    model = build_model(world, encoder, cfg, seed, lm)
    tcfg = TrainConfig(**dict(asdict(cfg.train), seed=seed))
    train(model, world, strategy, tcfg, out_dir=out_dir)
    reports: dict[str, dict] = {}
    for split in cfg.ablate.splits:
        rep: SplitReport = evaluate(model, world, split, "S")
        reports[split] = rep.row()
    return reports


def cell_config(cfg: ExperimentConfig, encoder: str, strategy: StrategyConfig, seed: int) -> dict:
    """What a grid cell's result depends on; used to decide whether a stored cell can be reused."""
    return {
        "world_seed": cfg.seed,
        "world": asdict(cfg.world),
        "pretrain": asdict(cfg.pretrain) if encoder != "scratch_embedding" else None,
        "agent": asdict(cfg.agent),
        "train": asdict(cfg.train),
        "splits": list(cfg.ablate.splits),
        "encoder": encoder,
        "strategy": [strategy.kind.value, strategy.epsilon],
        "seed": seed,
    }
