import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repro", derandomize=True, print_blob=True)
settings.load_profile("repro")

from vlnlab.instructions import Grammar, Vocabulary, render_instructions, tokenize
from vlnlab.world import EpisodeSpec, NavGraph, WorldConfig, WorldSplit, shortest_path

TINY = WorldConfig(num_graphs=3, nodes_per_graph=6, split_ratios=(1 / 3, 1 / 3, 1 / 3), train_per_graph=6,
                   val_seen_per_graph=2, unseen_per_graph=4)


def two_node_world(m: int = 2) -> WorldSplit:
    """One 2-node graph with a single 0 -> 1 episode in every split."""
    g = NavGraph("g000", 11, [(0, (0.0, 0.0)), (1, (2.2, 0.4))], [(0, 1)], {0: ["lamp"], 1: ["chair"]})
    texts = render_instructions([0, 1], g, Grammar(), m, seed=0)
    vocab = Vocabulary.from_texts(texts)
    ep = EpisodeSpec("g000-0-1", "g000", 0, 1, (0, 1), tuple(tokenize(t, vocab) for t in texts))
    splits = {s: [ep] for s in ("train_seen", "val_seen", "val_unseen", "test_unseen")}
    return WorldSplit(0, WorldConfig(), {"g000": g}, splits, vocab)


def chain_world(n_nodes: int = 4) -> WorldSplit:
    nodes = [(i, (2.2 * i, 0.3 * (i % 2))) for i in range(n_nodes)]
    g = NavGraph("g000", 5, nodes, [(i, i + 1) for i in range(n_nodes - 1)],
                 {i: [s] for i, s in enumerate(["lamp", "chair", "table", "sofa", "plant", "door"][:n_nodes])})
    grammar = Grammar()
    raw = []
    for s, t in [(0, n_nodes - 1), (n_nodes - 1, 0), (1, n_nodes - 1)]:
        path, _ = shortest_path(g, s, t)
        raw.append((s, t, path, render_instructions(path, g, grammar, 3, seed=s * 10 + t)))
    vocab = Vocabulary.from_texts(x for *_, texts in raw for x in texts)
    eps = [EpisodeSpec(f"g000-{s}-{t}", "g000", s, t, tuple(p), tuple(tokenize(x, vocab) for x in texts))
           for s, t, p, texts in raw]
    splits = {"train_seen": eps, "val_seen": eps[:1], "val_unseen": eps[1:2], "test_unseen": eps[2:]}
    return WorldSplit(0, WorldConfig(), {"g000": g}, splits, vocab)


@pytest.fixture
def tiny_world():
    return two_node_world()


@pytest.fixture
def chain():
    return chain_world()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
