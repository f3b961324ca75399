"""Attention seq2seq navigation policy over a panoramic action space.

Per decoding step, with memory ``h_prev`` from the previous step:

1. textual attention of ``P h_prev`` over each instruction's encoded rows,
2. mean of the per-instruction contexts -> ``z``,
3. visual attention ``softmax((W_h h_prev) . (W_s s_j))`` over the candidate
   features -> attended visual state ``s``,
4. decoder LSTM on ``[s, a_prev]`` -> ``h``,
5. candidate ``k`` scores ``feature_k . (W_a [h, z] + b_a)``; stop is the last
   candidate.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .instructions import TokenSeq
from .lm import EncoderKind, LMModel, init_lstm, init_matrix
from .world import TERMINAL, EpisodeSpec, NavGraph, Observation, step

PARTITIONS = ("x2e", "e2z", "dec")


class StepBudgetExhausted(RuntimeError):
    """decode_step called after max_steps; the episode must be truncated."""


@dataclass
class AgentConfig:
    hidden: int = 64
    att_dim: int = 32
    max_steps: int = 10
    embed_dim: int = 32
    seed: int = 0


class AgentModel:
    def __init__(self, lm: LMModel, feature_dim: int, config: AgentConfig | None = None):
        cfg = config or AgentConfig()
        self.config = cfg
        self.lm = lm
        self.feature_dim = feature_dim
        n, d_s, d_e = cfg.hidden, feature_dim, lm.dim
        rng = np.random.default_rng([cfg.seed, 11])
        enc_W, enc_b = init_lstm(rng, d_e, n)
        dec_W, dec_b = init_lstm(rng, 2 * d_s, n)
        self.e2z = OrderedDict(W=ad.parameter(enc_W), b=ad.parameter(enc_b))
        self.dec = OrderedDict(
            W=ad.parameter(dec_W),
            b=ad.parameter(dec_b),
            P=ad.parameter(init_matrix(rng, n, n)),
            W_h=ad.parameter(init_matrix(rng, n, cfg.att_dim).T.copy()),
            W_s=ad.parameter(init_matrix(rng, d_s, cfg.att_dim).T.copy()),
            W_a=ad.parameter(init_matrix(rng, 2 * n, d_s).T.copy()),
            b_a=ad.parameter(np.zeros(d_s)),
            start_action=ad.parameter(rng.normal(scale=1.0 / math.sqrt(d_s), size=d_s)),
        )

    @property
    def max_steps(self) -> int:
        return self.config.max_steps

    def partitions(self) -> "OrderedDict[str, OrderedDict[str, ad.Tensor]]":
        return OrderedDict(x2e=self.lm.params, e2z=self.e2z, dec=self.dec)

    def trainable_partitions(self) -> "OrderedDict[str, OrderedDict[str, ad.Tensor]]":
        parts = self.partitions()
        if self.lm.frozen:
            del parts["x2e"]
        return parts

    def parameters(self) -> list[ad.Tensor]:
        return [p for part in self.partitions().values() for p in part.values()]

    # ------------------------------------------------------------ checkpoint
    def records(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{part}/{name}", p.data) for part, ps in self.partitions().items() for name, p in ps.items()]

    def checkpoint_bytes(self) -> bytes:
        return ad.dump_checkpoint(self.records(), tag=self.tag())

    def tag(self) -> str:
        c = self.config
        return f"agent:{self.lm.kind.value}:{self.feature_dim}:{c.hidden}:{c.att_dim}:{c.max_steps}:{self.lm.dim}"

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.checkpoint_bytes())

    def load_records(self, recs) -> None:
        for part, ps in self.partitions().items():
            for name, p in ps.items():
                key = f"{part}/{name}"
                if key not in recs or recs[key].shape != p.data.shape:
                    raise ad.CheckpointError(f"checkpoint record {key!r} missing or mis-shaped")
                p.data = recs[key].copy()
        self.lm.clear_cache()

    @classmethod
    def load(cls, path: str | Path) -> "AgentModel":
        tag, recs = ad.load_checkpoint(path)
        parts = tag.split(":")
        if parts[0] != "agent" or len(parts) != 7:
            raise ad.CheckpointError(f"{path} is not an agent checkpoint (tag {tag!r})")
        kind, d_s, hidden, att, max_steps, d_e = parts[1], *map(int, parts[2:])
        vocab_size = recs["x2e/embedding"].shape[0]
        model = cls(LMModel(kind, vocab_size, d_e), d_s, AgentConfig(hidden, att, max_steps, d_e))
        model.load_records(recs)
        return model


def build_agent(kind: EncoderKind | str, vocab_size: int, feature_dim: int, config: AgentConfig | None = None,
                lm: LMModel | None = None) -> AgentModel:
    cfg = config or AgentConfig()
    if lm is None:
        if EncoderKind(kind) is not EncoderKind.SCRATCH:
            raise ValueError(f"{EncoderKind(kind).value} needs a pretrained LM")
        lm = LMModel(EncoderKind.SCRATCH, vocab_size, cfg.embed_dim, seed=cfg.seed)
    return AgentModel(lm, feature_dim, cfg)


# --------------------------------------------------------------- attention


def encode_instruction(model: AgentModel, x: TokenSeq) -> ad.Tensor:
    """Textual features h^e_1..h^e_L (L x hidden)."""
    if len(x.tokens) == 0:
        raise ValueError("cannot encode an empty instruction")
    e = model.lm.embed(x)
    return ad.lstm_seq(e, model.e2z["W"], model.e2z["b"])


def text_attend(memory: ad.Tensor, features: ad.Tensor) -> tuple[ad.Tensor, np.ndarray]:
    """Context ``sum_l alpha_l h^e_l`` with ``alpha = softmax(features @ memory)``."""
    alpha = ad.softmax(ad.matmul(features, memory))
    return ad.matmul(alpha, features), alpha.data


def aggregate_contexts(contexts: Sequence[ad.Tensor]) -> ad.Tensor:
    return ad.mean(list(contexts))


def visual_attend(memory: ad.Tensor, obs: Observation, W_h: ad.Tensor, W_s: ad.Tensor) -> tuple[ad.Tensor, np.ndarray]:
    """Attended visual state over all candidates (stop included) and its weights."""
    feats = ad.Tensor(obs.features)
    # (W_h h)^T (W_s s_j) == s_j . (W_s^T W_h h)
    probe = ad.matmul(ad.matmul(W_h, memory), W_s)
    gamma = ad.softmax(ad.matmul(feats, probe))
    return ad.matmul(gamma, feats), gamma.data


# ------------------------------------------------------------------ decoding


@dataclass
class AgentState:
    hc: ad.Tensor
    prev_action: ad.Tensor
    features: list[ad.Tensor]
    t: int = 0


@dataclass
class StepInfo:
    logits: ad.Tensor
    alphas: list[np.ndarray]
    gamma: np.ndarray


def initial_state(model: AgentModel, instructions: Sequence[TokenSeq]) -> AgentState:
    if not instructions:
        raise ValueError("at least one instruction is required")
    feats = [encode_instruction(model, x) for x in instructions]
    hc = ad.Tensor(np.zeros(2 * model.config.hidden))
    return AgentState(hc, model.dec["start_action"], feats, 0)


def decode_step(model: AgentModel, state: AgentState, obs: Observation) -> tuple[StepInfo, AgentState]:
    """One decoder step; the returned state still needs :func:`commit_action`."""
    if state.t >= model.max_steps:
        raise StepBudgetExhausted(f"step budget of {model.max_steps} exhausted")
    n = model.config.hidden
    dec = model.dec
    h_prev = ad.slice_(state.hc, 0, n)
    query = ad.matmul(dec["P"], h_prev)
    contexts, alphas = [], []
    for f in state.features:
        c, a = text_attend(query, f)
        contexts.append(c)
        alphas.append(a)
    z = aggregate_contexts(contexts)
    s, gamma = visual_attend(h_prev, obs, dec["W_h"], dec["W_s"])
    hc = ad.lstm_cell(ad.concat(s, state.prev_action), state.hc, dec["W"], dec["b"])
    h = ad.slice_(hc, 0, n)
    q = ad.add(ad.matmul(dec["W_a"], ad.concat(h, z)), dec["b_a"])
    logits = ad.matmul(ad.Tensor(obs.features), q)
    return StepInfo(logits, alphas, gamma), AgentState(hc, state.prev_action, state.features, state.t + 1)


def commit_action(state: AgentState, obs: Observation, action: int) -> AgentState:
    """Record the chosen candidate's feature as the next step's previous action."""
    state.prev_action = ad.Tensor(obs.features[action])
    return state


def probabilities(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def sample_index(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from ``probs`` using one uniform ``u``."""
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, len(probs) - 1)


@dataclass
class Trajectory:
    path_id: str
    nodes: list[int]
    actions: list[int] = field(default_factory=list)
    logits: list[np.ndarray] = field(default_factory=list)
    alphas: list[list[np.ndarray]] = field(default_factory=list)
    gammas: list[np.ndarray] = field(default_factory=list)
    stopped: bool = False
    instruction_ids: tuple[int, ...] = ()

    @property
    def final_node(self) -> int:
        return self.nodes[-1]

    def to_record(self) -> dict:
        return {
            "path_id": self.path_id,
            "instructions": list(self.instruction_ids),
            "nodes": list(self.nodes),
            "actions": list(self.actions),
            "stopped": self.stopped,
            "alpha": [[a.tolist() for a in step_a] for step_a in self.alphas],
            "gamma": [g.tolist() for g in self.gammas],
        }


def rollout(
    model: AgentModel,
    episode: EpisodeSpec,
    graph: NavGraph,
    policy_mode: str = "greedy",
    max_steps: int | None = None,
    rng: np.random.Generator | None = None,
    instruction_ids: Sequence[int] | None = None,
) -> Trajectory:
    """Run the policy from ``episode.start`` until stop or the step budget."""
    if policy_mode not in ("greedy", "sample"):
        raise ValueError(f"unknown policy mode {policy_mode!r}")
    if policy_mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    ids = tuple(range(len(episode.instructions))) if instruction_ids is None else tuple(instruction_ids)
    budget = min(model.max_steps, max_steps or model.max_steps)
    traj = Trajectory(episode.path_id, [episode.start], instruction_ids=ids)
    with ad.no_grad():
        state = initial_state(model, [episode.instructions[i] for i in ids])
        node = episode.start
        for _ in range(budget):
            obs = graph.observe(node)
            info, state = decode_step(model, state, obs)
            lg = info.logits.data
            if policy_mode == "greedy":
                action = int(np.argmax(lg))
            else:
                action = sample_index(probabilities(lg), rng.random())
            traj.logits.append(lg)
            traj.alphas.append(info.alphas)
            traj.gammas.append(info.gamma)
            traj.actions.append(action)
            state = commit_action(state, obs, action)
            nxt = step(graph, node, action)
            if nxt == TERMINAL:
                traj.stopped = True
                break
            node = nxt
            traj.nodes.append(node)
    return traj
