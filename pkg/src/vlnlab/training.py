"""Roll-in strategies (teacher forcing, student forcing, stochastic sampling) and the training loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .agent import (
    AgentModel,
    Trajectory,
    commit_action,
    decode_step,
    initial_state,
    probabilities,
    sample_index,
)
from .lm import EncoderKind, Stage, set_stage
from .optim import Adamax, clip_grad_norm
from .world import TERMINAL, EpisodeSpec, WorldSplit, child_rng, expert_action, step


class ConfigError(ValueError):
    pass


class NumericAbort(RuntimeError):
    def __init__(self, message: str, path_id: str = ""):
        super().__init__(message)
        self.path_id = path_id


class StrategyKind(str, Enum):
    TF = "TF"
    SF = "SF"
    SS = "SS"


@dataclass(frozen=True)
class StrategyConfig:
    kind: StrategyKind | str = StrategyKind.SS
    epsilon: float = 0.5

    def __post_init__(self):
        kind = StrategyKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is StrategyKind.TF:
            object.__setattr__(self, "epsilon", 1.0)
        elif kind is StrategyKind.SF:
            object.__setattr__(self, "epsilon", 0.0)
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must lie in [0, 1], got {self.epsilon}")

    @property
    def label(self) -> str:
        return self.kind.value if self.kind is not StrategyKind.SS else f"SS({self.epsilon:g})"


TF = StrategyConfig(StrategyKind.TF)
SF = StrategyConfig(StrategyKind.SF)


def choose_transition_action(teacher: int, sampled: int, epsilon: float, rng: np.random.Generator) -> int:
    """Coin flip with P(teacher) = epsilon; consumes exactly one uniform draw."""
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError(f"epsilon must lie in [0, 1], got {epsilon}")
    delta = rng.random() < epsilon
    return teacher if delta else sampled


def episode_loss(
    model: AgentModel,
    episode: EpisodeSpec,
    graph,
    strategy: StrategyConfig,
    rng: np.random.Generator,
    instruction_ids=None,
) -> tuple[ad.Tensor, Trajectory]:
    """Mean per-step cross entropy against the expert action along a mixed roll-in.

    Every step consumes two uniforms: one for the student sample and one for
    the coin flip, whatever epsilon is.
    """
    ids = tuple(range(len(episode.instructions))) if instruction_ids is None else tuple(instruction_ids)
    traj = Trajectory(episode.path_id, [episode.start], instruction_ids=ids)
    state = initial_state(model, [episode.instructions[i] for i in ids])
    node = episode.start
    losses = []
    for _ in range(model.max_steps):
        obs = graph.observe(node)
        info, state = decode_step(model, state, obs)
        teacher = expert_action(graph, node, episode.goal)
        losses.append(ad.cross_entropy(info.logits, teacher))
        sampled = sample_index(probabilities(info.logits.data), rng.random())
        action = choose_transition_action(teacher, sampled, strategy.epsilon, rng)
        traj.actions.append(action)
        traj.logits.append(info.logits.data)
        state = commit_action(state, obs, action)
        nxt = step(graph, node, action)
        if nxt == TERMINAL:
            traj.stopped = True
            break
        node = nxt
        traj.nodes.append(node)
    return ad.mean(losses), traj


# ------------------------------------------------------------------ training


@dataclass
class TrainConfig:
    stage1_epochs: int = 10
    stage2_epochs: int = 5
    batch_size_stage1: int = 24
    batch_size_stage2: int = 16
    lr_main: float = 1e-4
    lr_lm_finetune: float = 5e-5
    clip_norm: float = 5.0
    setting: str = "S"  # S: one example per instruction; M: aggregated instructions
    eval_every: int = 0  # epochs between validation passes; 0 disables
    seed: int = 0

    def validate(self) -> None:
        if self.lr_main <= 0 or self.lr_lm_finetune <= 0:
            raise ConfigError("learning rates must be positive")
        if self.lr_lm_finetune >= self.lr_main:
            raise ConfigError("the LM fine-tuning rate must be smaller than the main rate")
        if min(self.batch_size_stage1, self.batch_size_stage2) < 1:
            raise ConfigError("batch sizes must be positive")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.setting not in ("S", "M"):
            raise ConfigError(f"setting must be 'S' or 'M', got {self.setting!r}")

    @property
    def total_epochs(self) -> int:
        return self.stage1_epochs + self.stage2_epochs

    def lr_map(self) -> dict[str, float]:
        return {"main": self.lr_main, "lm": self.lr_lm_finetune}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def optimize_step(model: AgentModel, optimizer: Adamax, lr_map: dict[str, float], clip: float | None = None) -> float:
    """Clip, then one Adamax update with the main rate on e2z/dec and the LM rate on x2e."""
    groups = model.trainable_partitions()
    params = [p for g in groups.values() for p in g.values()]
    norm = clip_grad_norm(params, clip) if clip else 0.0
    rates = {"e2z": lr_map["main"], "dec": lr_map["main"]}
    if "x2e" in groups:
        rates["x2e"] = model.lm.lr if model.lm.lr is not None else lr_map["lm"]
    optimizer.step(groups, rates)
    return norm


def make_examples(episodes: list[EpisodeSpec], setting: str) -> list[tuple[int, tuple[int, ...]]]:
    if setting == "M":
        return [(i, tuple(range(len(e.instructions)))) for i, e in enumerate(episodes)]
    return [(i, (j,)) for i, e in enumerate(episodes) for j in range(len(e.instructions))]


@dataclass
class TrainState:
    """Everything needed to resume training at an epoch boundary."""
    epoch: int
    rng_state: dict
    optimizer: Adamax
    log: list[dict] = field(default_factory=list)


def save_train_state(path: Path, model: AgentModel, state: TrainState) -> None:
    records = model.records() + state.optimizer.state_records()
    ad.save_checkpoint(path.with_suffix(".ckpt"), records, tag=model.tag())
    meta = {"epoch": state.epoch, "rng_state": state.rng_state, "log": state.log}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_train_state(path: Path, model: AgentModel) -> TrainState:
    _, recs = ad.load_checkpoint(path.with_suffix(".ckpt"))
    model.load_records(recs)
    opt = Adamax()
    opt.load_records({k: v for k, v in recs.items() if k.startswith(("m:", "u:")) or k == "__t__"})
    meta = json.loads(path.with_suffix(".json").read_text())
    return TrainState(meta["epoch"], meta["rng_state"], opt, meta["log"])


def _stage_for(epoch: int, cfg: TrainConfig) -> int:
    return 1 if epoch < cfg.stage1_epochs else 2


def train(
    model: AgentModel,
    world: WorldSplit,
    strategy: StrategyConfig,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    resume: bool = False,
    evaluator: Callable[[AgentModel, int], dict] | None = None,
    stop_after_epoch: int | None = None,
) -> tuple[AgentModel, list[dict]]:
    """Two-stage training; deterministic given (config.seed, config, world).

    With ``out_dir``, stage-end checkpoints go to ``checkpoints/stage{1,2}.ckpt``
    and a resumable state to ``checkpoints/last.{ckpt,json}`` after every epoch.
    ``stop_after_epoch`` simulates an interruption (used by resume tests).
    """
    config.validate()
    episodes = world.train_seen
    if not episodes:
        raise ConfigError("world has an empty train split")
    examples = make_examples(episodes, config.setting)
    lr_map = config.lr_map()
    rng = child_rng(config.seed, "training")
    state = TrainState(0, {}, Adamax(), [])
    ckpt_dir = Path(out_dir) / "checkpoints" if out_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        if resume and (ckpt_dir / "last.json").exists():
            state = load_train_state(ckpt_dir / "last", model)
            rng.bit_generator.state = state.rng_state

    for epoch in range(state.epoch, config.total_epochs):
        stage = _stage_for(epoch, config)
        set_stage(model.lm, Stage.EMBEDDING if stage == 1 else Stage.FINETUNE, lr_map)
        batch_size = config.batch_size_stage1 if stage == 1 else config.batch_size_stage2
        order = rng.permutation(len(examples))
        total, steps = 0.0, 0
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            for k in batch:
                ep_idx, ids = examples[int(k)]
                ep = episodes[ep_idx]
                loss, _ = episode_loss(model, ep, world.graph(ep), strategy, rng, ids)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericAbort(f"non-finite loss at epoch {epoch + 1} on episode {ep.path_id}", ep.path_id)
                total += value
                steps += 1
                ad.backward(ad.scale(loss, 1.0 / len(batch)))
            optimize_step(model, state.optimizer, lr_map, config.clip_norm)
        row = {
            "epoch": epoch + 1,
            "strategy": strategy.kind.value,
            "epsilon": strategy.epsilon,
            "stage": stage,
            "train_loss": total / steps,
        }
        if evaluator is not None and config.eval_every and (epoch + 1) % config.eval_every == 0:
            row.update(evaluator(model, epoch + 1))
        state.log.append(row)
        state.epoch = epoch + 1
        if ckpt_dir is not None:
            if epoch + 1 == config.stage1_epochs and config.stage1_epochs > 0:
                model.save(ckpt_dir / "stage1.ckpt")
            if epoch + 1 == config.total_epochs:
                model.save(ckpt_dir / "stage2.ckpt")
            state.rng_state = rng.bit_generator.state
            save_train_state(ckpt_dir / "last", model, state)
        if stop_after_epoch is not None and epoch + 1 >= stop_after_epoch:
            break
    model.lm.frozen = False
    model.lm.clear_cache()
    return model, state.log


def config_dict(cfg) -> dict:
    return asdict(cfg)
