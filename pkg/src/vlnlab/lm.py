"""Toy pretrained language models used as the word-embedding stage of the agent.

Three encoder kinds share one interface, :meth:`LMModel.embed`:

``scratch_embedding``
    plain lookup table, trained jointly with the agent from random init.
``causal_lm``
    lookup + forward LSTM; position i only sees tokens <= i.
``masked_lm``
    lookup + bidirectional LSTM; every position sees the whole sentence.

Contextual kinds return ``lookup + context`` so the lexical identity of a
word survives next to its contextual reading. Unknown words are embedded as
the mask token by the masked model, which is exactly the situation its
pretraining objective teaches it to fill in from context.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .instructions import EOS, MASK, RESERVED, UNK, TokenSeq
from .optim import Adamax, clip_grad_norm


class EncoderKind(str, Enum):
    SCRATCH = "scratch_embedding"
    CAUSAL = "causal_lm"
    MASKED = "masked_lm"


class Stage(str, Enum):
    EMBEDDING = "embedding_stage"
    FINETUNE = "finetune_stage"


DEFAULT_LR_MAP = {"main": 1e-4, "lm": 5e-5}


class TrainingError(RuntimeError):
    pass


def init_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.normal(scale=1.0 / math.sqrt(rows), size=(rows, cols))


def init_lstm(rng: np.random.Generator, n_in: int, n_hid: int) -> tuple[np.ndarray, np.ndarray]:
    W = rng.uniform(-1.0, 1.0, size=(n_in + n_hid, 4 * n_hid)) / math.sqrt(n_in + n_hid)
    b = np.zeros(4 * n_hid)
    b[n_hid:2 * n_hid] = 1.0  # forget-gate bias
    return W, b


class LMModel:
    def __init__(self, kind: EncoderKind | str, vocab_size: int, dim: int = 32, seed: int = 0):
        self.kind = EncoderKind(kind)
        self.vocab_size = vocab_size
        self.dim = dim
        rng = np.random.default_rng(seed)
        params: OrderedDict[str, ad.Tensor] = OrderedDict()
        params["embedding"] = ad.parameter(rng.normal(scale=0.3, size=(vocab_size, dim)))
        if self.kind is EncoderKind.CAUSAL:
            W, b = init_lstm(rng, dim, dim)
            params["ctx_W"], params["ctx_b"] = ad.parameter(W), ad.parameter(b)
        elif self.kind is EncoderKind.MASKED:
            if dim % 2:
                raise ValueError("masked_lm needs an even dim")
            for direction in ("fwd", "bwd"):
                W, b = init_lstm(rng, dim, dim // 2)
                params[f"{direction}_W"], params[f"{direction}_b"] = ad.parameter(W), ad.parameter(b)
        self.params = params
        self.head: OrderedDict[str, ad.Tensor] | None = None
        self.frozen = False
        self.lr: float | None = None
        self._cache: dict[tuple[int, ...], ad.Tensor] = {}

    # ---------------------------------------------------------------- embed
    def _forward(self, tokens: Sequence[int]) -> ad.Tensor:
        ids = list(tokens)
        if any(not 0 <= t < self.vocab_size for t in ids):
            raise IndexError(f"token id out of range for vocabulary of size {self.vocab_size}")
        if self.kind is EncoderKind.MASKED:
            ids = [MASK if t == UNK else t for t in ids]
        x = ad.take_rows(self.params["embedding"], ids)
        if self.kind is EncoderKind.SCRATCH:
            return x
        if self.kind is EncoderKind.CAUSAL:
            ctx = ad.lstm_seq(x, self.params["ctx_W"], self.params["ctx_b"])
        else:
            fwd = ad.lstm_seq(x, self.params["fwd_W"], self.params["fwd_b"])
            bwd = ad.lstm_seq(x, self.params["bwd_W"], self.params["bwd_b"], reverse=True)
            ctx = ad.concat(fwd, bwd, axis=1)
        return ad.add(x, ctx)

    def embed(self, x: TokenSeq | Sequence[int]) -> ad.Tensor:
        """Contextual embeddings, one row per token (L x dim)."""
        tokens = tuple(x.tokens if isinstance(x, TokenSeq) else x)
        if not self.frozen:
            return self._forward(tokens)
        hit = self._cache.get(tokens)
        if hit is None:
            with ad.no_grad():
                hit = self._forward(tokens)
            self._cache[tokens] = hit
        return hit

    # ------------------------------------------------------------ persistence
    def named_params(self) -> list[tuple[str, ad.Tensor]]:
        return list(self.params.items())

    def clear_cache(self) -> None:
        self._cache.clear()

    def records(self) -> list[tuple[str, np.ndarray]]:
        return [(k, v.data) for k, v in self.params.items()]

    def save(self, path: str | Path) -> None:
        ad.save_checkpoint(path, self.records(), tag=f"lm:{self.kind.value}")

    @classmethod
    def load(cls, path: str | Path) -> "LMModel":
        tag, recs = ad.load_checkpoint(path)
        if not tag.startswith("lm:"):
            raise ad.CheckpointError(f"{path} is not an LM checkpoint (tag {tag!r})")
        emb = recs["embedding"]
        model = cls(tag[3:], emb.shape[0], emb.shape[1])
        model.load_records(recs)
        return model

    def load_records(self, recs) -> None:
        for k, p in self.params.items():
            if recs[k].shape != p.data.shape:
                raise ad.CheckpointError(f"{k}: shape {recs[k].shape} != {p.data.shape}")
            p.data = recs[k].copy()
        self.clear_cache()


def set_stage(model: LMModel, stage: Stage | str, lr_map: dict[str, float] | None = None) -> None:
    """Freeze the LM for the embedding stage, or unfreeze it at the smaller LM rate."""
    lr_map = dict(DEFAULT_LR_MAP, **(lr_map or {}))
    stage = Stage(stage)
    model.clear_cache()
    if model.kind is EncoderKind.SCRATCH:
        # learned from scratch: trains throughout at the main rate
        model.frozen = False
        model.lr = lr_map["main"]
        return
    if stage is Stage.EMBEDDING:
        model.frozen = True
        model.lr = None
    else:
        model.frozen = False
        model.lr = lr_map["lm"]


# ------------------------------------------------------------- pretraining


@dataclass
class PretrainConfig:
    epochs: int = 30
    lr: float = 5e-3
    batch: int = 24
    mask_rate: float = 0.15
    input_unk_rate: float = 0.1  # causal only: input-side token dropout to <unk>
    dim: int = 32
    seed: int = 0
    clip: float = 5.0


def _masked_example(tokens: list[int], cfg: PretrainConfig, vocab_size: int, rng: np.random.Generator):
    L = len(tokens)
    chosen = rng.random(L) < cfg.mask_rate
    if not chosen.any():
        chosen[int(rng.integers(L))] = True
    inp = list(tokens)
    u = rng.random(L)
    rand_tok = rng.integers(len(RESERVED), vocab_size, size=L)
    for i in np.flatnonzero(chosen):
        if u[i] < 0.8:
            inp[i] = MASK
        elif u[i] < 0.9:
            inp[i] = int(rand_tok[i])
    return inp, tokens, chosen.astype(float)


def pretrain_loss(model: LMModel, tokens: Sequence[int], cfg: PretrainConfig, head, rng) -> ad.Tensor:
    tokens = list(tokens)
    if model.kind is EncoderKind.CAUSAL:
        inp = [UNK if rng.random() < cfg.input_unk_rate else t for t in tokens[:-1]]
        if len(inp) == 0:
            inp, targets, weights = [EOS], [EOS], [1.0]
        else:
            targets, weights = tokens[1:], [1.0] * (len(tokens) - 1)
    else:
        inp, targets, weights = _masked_example(tokens, cfg, model.vocab_size, rng)
    e = model._forward(inp)
    logits = ad.add_bias(ad.matmul(e, head["W"]), head["b"])
    return ad.sequence_cross_entropy(logits, targets, weights)


def pretrain(corpus: Sequence[TokenSeq], kind: EncoderKind | str, vocab_size: int, config: PretrainConfig | None = None):
    """Train a causal (next token) or masked (fill in masked tokens) LM; returns (model, perplexity curve)."""
    cfg = config or PretrainConfig()
    kind = EncoderKind(kind)
    if kind is EncoderKind.SCRATCH:
        raise ValueError("scratch_embedding has nothing to pretrain")
    if not corpus:
        raise TrainingError("pretraining corpus is empty")
    model = LMModel(kind, vocab_size, cfg.dim, seed=cfg.seed)
    rng = np.random.default_rng([cfg.seed, 7])
    head = OrderedDict(
        W=ad.parameter(init_matrix(rng, cfg.dim, vocab_size)),
        b=ad.parameter(np.zeros(vocab_size)),
    )
    groups = {"lm": OrderedDict(model.params.items()), "head": head}
    lrs = {"lm": cfg.lr, "head": cfg.lr}
    opt = Adamax()
    curve = []
    seqs = [list(x.tokens) for x in corpus]
    all_params = list(model.params.values()) + list(head.values())
    for _ in range(cfg.epochs):
        order = rng.permutation(len(seqs))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch):
            batch = order[start:start + cfg.batch]
            for i in batch:
                loss = pretrain_loss(model, seqs[i], cfg, head, rng)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite pretraining loss on sequence {int(i)}")
                total += value
                count += 1
                ad.backward(ad.scale(loss, 1.0 / len(batch)))
            clip_grad_norm(all_params, cfg.clip)
            opt.step(groups, lrs)
        curve.append(math.exp(total / count))
    # the pretraining head is not part of the returned encoder
    return model, curve
