"""vlnlab: a desk-scale vision-and-language navigation testbed on numpy."""

from .agent import AgentConfig, AgentModel, build_agent
from .evaluation import SplitReport, evaluate, generalization_gap
from .instructions import Vocabulary, ngram_overlap, tokenize
from .lm import EncoderKind, LMModel, PretrainConfig, pretrain
from .training import SF, TF, StrategyConfig, TrainConfig, train
from .world import NavGraph, WorldConfig, WorldSplit, generate_world

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "AgentModel", "build_agent", "SplitReport", "evaluate", "generalization_gap",
    "Vocabulary", "ngram_overlap", "tokenize", "EncoderKind", "LMModel", "PretrainConfig", "pretrain",
    "SF", "TF", "StrategyConfig", "TrainConfig", "train", "NavGraph", "WorldConfig", "WorldSplit",
    "generate_world",
]
