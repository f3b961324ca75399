"""Synthetic graph worlds: viewpoints, panoramic features, expert paths, splits."""

from __future__ import annotations

import heapq
import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np

from .instructions import (
    Grammar,
    TokenSeq,
    Vocabulary,
    render_instructions,
    tokenize,
)

SUCCESS_THRESHOLD = 3.0
NODE_SPACING = 2.2
TERMINAL = -1
_TIE_EPS = 1e-9


class GenerationError(ValueError):
    pass


class ActionError(IndexError):
    pass


def stable_hash(*parts: Any) -> int:
    return zlib.crc32("|".join(map(str, parts)).encode("utf-8"))


def child_rng(seed: int, *names: Any) -> np.random.Generator:
    """Independent stream for one consumer of the root seed."""
    return np.random.default_rng([int(seed), *(stable_hash(n) for n in names)])


@lru_cache(maxsize=None)
def landmark_prototype(symbol: str, dim: int) -> np.ndarray:
    v = np.random.default_rng([stable_hash("landmark", symbol), dim]).normal(size=dim)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class Observation:
    node_id: int
    candidates: tuple[tuple[int, np.ndarray], ...]
    stop_feature: np.ndarray
    features: np.ndarray = field(repr=False)  # (K+1) x d_s, movement rows then stop

    @property
    def stop_index(self) -> int:
        return len(self.candidates)

    @property
    def neighbor_ids(self) -> list[int]:
        return [n for n, _ in self.candidates]


@dataclass(eq=False)
class NavGraph:
    id: str
    env_seed: int
    nodes: list[tuple[int, tuple[float, float]]]
    edges: list[tuple[int, int]]
    landmark_map: dict[int, list[str]]
    feature_dim: int = 16
    noise_scale: float = 0.5

    def __post_init__(self):
        self._pos = {n: tuple(p) for n, p in self.nodes}
        adj: dict[int, list[int]] = {n: [] for n in self._pos}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        self._adj = {n: sorted(v) for n, v in adj.items()}
        self._obs: dict[int, Observation] = {}
        self._dist: dict[int, dict[int, float]] = {}

    # ---- structure
    @property
    def node_ids(self) -> list[int]:
        return sorted(self._pos)

    def has_node(self, n: int) -> bool:
        return n in self._pos

    def _require(self, n: int) -> None:
        if n not in self._pos:
            raise KeyError(f"node {n} not in graph {self.id}")

    def neighbors(self, n: int) -> list[int]:
        self._require(n)
        return self._adj[n]

    def position(self, n: int) -> tuple[float, float]:
        self._require(n)
        return self._pos[n]

    def landmark(self, n: int) -> str:
        self._require(n)
        return self.landmark_map[n][0]

    def edge_length(self, a: int, b: int) -> float:
        (x0, y0), (x1, y1) = self.position(a), self.position(b)
        return math.hypot(x1 - x0, y1 - y0)

    def is_connected(self) -> bool:
        start = self.node_ids[0]
        seen, stack = {start}, [start]
        while stack:
            for m in self._adj[stack.pop()]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return len(seen) == len(self._pos)

    # ---- features
    def _appearance(self, viewer: int, target: int) -> np.ndarray:
        d_app = self.feature_dim - 3
        proto = landmark_prototype(self.landmark(target), d_app)
        noise = np.random.default_rng([self.env_seed, viewer, target]).normal(size=d_app) / math.sqrt(d_app)
        v = proto + self.noise_scale * noise
        return v / np.linalg.norm(v)

    def observe(self, node_id: int) -> Observation:
        if node_id in self._obs:
            return self._obs[node_id]
        self._require(node_id)
        x0, y0 = self._pos[node_id]
        rows, cands = [], []
        for nb in self._adj[node_id]:
            x1, y1 = self._pos[nb]
            dist = math.hypot(x1 - x0, y1 - y0)
            bearing = np.array([(x1 - x0) / dist, (y1 - y0) / dist])
            feat = np.concatenate([self._appearance(node_id, nb), bearing, [0.0]]) / math.sqrt(2.0)
            feat.setflags(write=False)
            cands.append((nb, feat))
            rows.append(feat)
        stop = np.concatenate([self._appearance(node_id, node_id), [0.0, 0.0, 1.0]]) / math.sqrt(2.0)
        stop.setflags(write=False)
        rows.append(stop)
        feats = np.vstack(rows)
        feats.setflags(write=False)
        obs = Observation(node_id, tuple(cands), stop, feats)
        self._obs[node_id] = obs
        return obs

    # ---- paths
    def distances_to(self, goal: int) -> dict[int, float]:
        """Shortest-path distance from every node to ``goal`` (Dijkstra)."""
        if goal in self._dist:
            return self._dist[goal]
        self._require(goal)
        dist = {goal: 0.0}
        heap = [(0.0, goal)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v in self._adj[u]:
                nd = d + self.edge_length(u, v)
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        self._dist[goal] = dist
        return dist

    def next_hop(self, current: int, goal: int) -> int:
        """Smallest-id neighbour that lies on a shortest path to ``goal``."""
        dist = self.distances_to(goal)
        here = dist[current]
        for v in self._adj[current]:
            if abs(self.edge_length(current, v) + dist[v] - here) <= _TIE_EPS * max(1.0, here):
                return v
        raise RuntimeError("no shortest-path successor; graph is disconnected")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "env_seed": self.env_seed,
            "nodes": [[n, list(p)] for n, p in self.nodes],
            "edges": [list(e) for e in self.edges],
            "landmark_map": {str(k): v for k, v in self.landmark_map.items()},
            "feature_dim": self.feature_dim,
            "noise_scale": self.noise_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NavGraph":
        return cls(
            id=d["id"],
            env_seed=int(d["env_seed"]),
            nodes=[(int(n), (float(p[0]), float(p[1]))) for n, p in d["nodes"]],
            edges=[(int(a), int(b)) for a, b in d["edges"]],
            landmark_map={int(k): list(v) for k, v in d["landmark_map"].items()},
            feature_dim=int(d["feature_dim"]),
            noise_scale=float(d["noise_scale"]),
        )


def observe(graph: NavGraph, node_id: int) -> Observation:
    return graph.observe(node_id)


def step(graph: NavGraph, current: int, action: int) -> int:
    """Apply a candidate index; returns the neighbour id, or TERMINAL for stop."""
    nbrs = graph.neighbors(current)
    if action == len(nbrs):
        return TERMINAL
    if not 0 <= action < len(nbrs):
        raise ActionError(f"action {action} out of range at node {current} ({len(nbrs)} candidates + stop)")
    return nbrs[action]


def shortest_path(graph: NavGraph, a: int, b: int) -> tuple[list[int], float]:
    graph._require(a)
    path = [a]
    while path[-1] != b:
        path.append(graph.next_hop(path[-1], b))
    return path, path_length(graph, path)


def path_length(graph: NavGraph, nodes: list[int]) -> float:
    # exactly rounded, so any ordering of the same edges gives the same float
    return math.fsum(graph.edge_length(u, v) for u, v in zip(nodes[:-1], nodes[1:]))


def expert_action(graph: NavGraph, current: int, goal: int) -> int:
    nbrs = graph.neighbors(current)
    if current == goal:
        return len(nbrs)
    return nbrs.index(graph.next_hop(current, goal))


# ------------------------------------------------------------------ episodes


@dataclass(frozen=True)
class EpisodeSpec:
    path_id: str
    graph_id: str
    start: int
    goal: int
    expert_path: tuple[int, ...]
    instructions: tuple[TokenSeq, ...]

    def with_instructions(self, instructions) -> "EpisodeSpec":
        return EpisodeSpec(self.path_id, self.graph_id, self.start, self.goal, self.expert_path, tuple(instructions))


SPLITS = ("train_seen", "val_seen", "val_unseen", "test_unseen")


@dataclass
class WorldConfig:
    num_graphs: int = 10
    nodes_per_graph: int = 12
    feature_dim: int = 16
    landmark_vocab_size: int = 12
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)  # seen, val-unseen, test-unseen graphs
    train_per_graph: int = 20
    val_seen_per_graph: int = 6
    unseen_per_graph: int = 20
    min_path_nodes: int = 3
    max_path_nodes: int = 7  # "up to seven steps"
    max_degree: int = 6
    instructions_per_episode: int = 3
    noise_scale: float = 0.5
    rare_rate_seen: float = 0.05
    rare_rate_unseen: float = 0.35
    adjective_rate: float = 0.5

    def validate(self) -> None:
        ints = ("num_graphs", "nodes_per_graph", "feature_dim", "landmark_vocab_size", "max_degree",
                "instructions_per_episode", "min_path_nodes", "max_path_nodes")
        for name in ints:
            if getattr(self, name) <= 0:
                raise GenerationError(f"{name} must be positive")
        if self.feature_dim < 5:
            raise GenerationError("feature_dim must be >= 5 (appearance + bearing + stop flag)")
        if len(self.split_ratios) != 3 or any(r < 0 for r in self.split_ratios) or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise GenerationError("split_ratios must be three non-negative fractions summing to 1")
        if not 2 <= self.min_path_nodes <= self.max_path_nodes:
            raise GenerationError("path node bounds must satisfy 2 <= min <= max")
        if self.max_degree < 4:
            raise GenerationError("max_degree must be >= 4 for lattice worlds")
        for r in (self.rare_rate_seen, self.rare_rate_unseen, self.adjective_rate):
            if not 0.0 <= r <= 1.0:
                raise GenerationError("rates must lie in [0, 1]")

    def grammar(self) -> Grammar:
        return Grammar(
            rare_rate_seen=self.rare_rate_seen,
            rare_rate_unseen=self.rare_rate_unseen,
            adjective_rate=self.adjective_rate,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise GenerationError(f"unknown world config keys: {sorted(unknown)}")
        d = dict(d)
        if "split_ratios" in d:
            d["split_ratios"] = tuple(float(x) for x in d["split_ratios"])
        return cls(**d)


@dataclass
class WorldSplit:
    seed: int
    config: WorldConfig
    graphs: dict[str, NavGraph]
    splits: dict[str, list[EpisodeSpec]]
    vocab: Vocabulary
    grammar: Grammar = field(default_factory=Grammar)

    @property
    def train_seen(self) -> list[EpisodeSpec]:
        return self.splits["train_seen"]

    @property
    def val_seen(self) -> list[EpisodeSpec]:
        return self.splits["val_seen"]

    @property
    def val_unseen(self) -> list[EpisodeSpec]:
        return self.splits["val_unseen"]

    @property
    def test_unseen(self) -> list[EpisodeSpec]:
        return self.splits["test_unseen"]

    def graph(self, episode: EpisodeSpec) -> NavGraph:
        return self.graphs[episode.graph_id]

    @property
    def seen_graph_ids(self) -> set[str]:
        return {e.graph_id for s in ("train_seen", "val_seen") for e in self.splits[s]}

    @property
    def unseen_graph_ids(self) -> set[str]:
        return {e.graph_id for s in ("val_unseen", "test_unseen") for e in self.splits[s]}

    def corpus(self, split: str) -> list[TokenSeq]:
        return [x for e in self.splits[split] for x in e.instructions]

    def to_dict(self) -> dict:
        return {
            "format": "vlnlab-world/1",
            "seed": self.seed,
            "config": asdict(self.config),
            "vocab": self.vocab.words,
            "graphs": [g.to_dict() for g in self.graphs.values()],
            "splits": {
                name: [
                    {
                        "path_id": e.path_id,
                        "graph_id": e.graph_id,
                        "start": e.start,
                        "goal": e.goal,
                        "expert_path": list(e.expert_path),
                        "instructions": [x.raw_text for x in e.instructions],
                        "tokens": [list(x.tokens) for x in e.instructions],
                    }
                    for e in eps
                ]
                for name, eps in self.splits.items()
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSplit":
        if d.get("format") != "vlnlab-world/1":
            raise ValueError("not a vlnlab world file")
        config = WorldConfig.from_dict(d["config"])
        vocab = Vocabulary.from_lines("\n".join(d["vocab"]))
        graphs = {g["id"]: NavGraph.from_dict(g) for g in d["graphs"]}
        splits = {}
        for name in SPLITS:
            splits[name] = [
                EpisodeSpec(
                    e["path_id"], e["graph_id"], int(e["start"]), int(e["goal"]), tuple(e["expert_path"]),
                    tuple(TokenSeq(tuple(t), raw) for raw, t in zip(e["instructions"], e["tokens"])),
                )
                for e in d["splits"][name]
            ]
        return cls(int(d["seed"]), config, graphs, splits, vocab, config.grammar())

    @classmethod
    def load(cls, path: str | Path) -> "WorldSplit":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- generation


def _lattice_graph(gid: str, env_seed: int, cfg: WorldConfig, symbols: list[str], rng: np.random.Generator) -> NavGraph:
    n = cfg.nodes_per_graph
    cells = [(0, 0)]
    parent: dict[tuple[int, int], tuple[int, int] | None] = {(0, 0): None}
    steps4 = ((1, 0), (-1, 0), (0, 1), (0, -1))
    while len(cells) < n:
        frontier = sorted({(c[0] + dx, c[1] + dy) for c in cells for dx, dy in steps4} - set(parent))
        cell = frontier[int(rng.integers(len(frontier)))]
        owners = sorted(c for c in cells if abs(c[0] - cell[0]) + abs(c[1] - cell[1]) == 1)
        parent[cell] = owners[int(rng.integers(len(owners)))]
        cells.append(cell)
    index = {c: i for i, c in enumerate(cells)}
    jitter = rng.normal(scale=0.25, size=(n, 2))
    nodes = [(i, (round(c[0] * NODE_SPACING + jitter[i, 0], 6), round(c[1] * NODE_SPACING + jitter[i, 1], 6)))
             for i, c in enumerate(cells)]

    edges: set[tuple[int, int]] = set()
    degree = [0] * n

    def connect(a: int, b: int) -> None:
        e = (min(a, b), max(a, b))
        if a != b and e not in edges and degree[a] < cfg.max_degree and degree[b] < cfg.max_degree:
            edges.add(e)
            degree[a] += 1
            degree[b] += 1

    for c, p in parent.items():  # spanning tree first guarantees connectivity
        if p is not None:
            connect(index[c], index[p])
    for c in cells:
        for dx, dy in ((1, 0), (0, 1)):
            o = (c[0] + dx, c[1] + dy)
            if o in index and rng.random() < 0.7:
                connect(index[c], index[o])
        for dx, dy in ((1, 1), (1, -1)):
            o = (c[0] + dx, c[1] + dy)
            if o in index and rng.random() < 0.15:
                connect(index[c], index[o])

    adj: dict[int, set[int]] = {i: set() for i in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    landmarks: dict[int, list[str]] = {}
    for i in rng.permutation(n):
        i = int(i)
        taken = {landmarks[j][0] for j in adj[i] if j in landmarks}
        free = [s for s in symbols if s not in taken] or symbols
        landmarks[i] = [free[int(rng.integers(len(free)))]]
    graph = NavGraph(gid, env_seed, nodes, sorted(edges), dict(sorted(landmarks.items())), cfg.feature_dim, cfg.noise_scale)
    if not graph.is_connected():  # pragma: no cover - guarded by the spanning tree
        raise GenerationError(f"graph {gid} is disconnected")
    return graph


def _allocate_graphs(cfg: WorldConfig) -> tuple[int, int, int]:
    seen = max(1, int(round(cfg.num_graphs * cfg.split_ratios[0])))
    val_u = int(round(cfg.num_graphs * cfg.split_ratios[1]))
    if cfg.split_ratios[1] > 0:
        val_u = max(1, val_u)
    test_u = cfg.num_graphs - seen - val_u
    if test_u < 0 or (cfg.split_ratios[2] > 0 and test_u == 0):
        raise GenerationError(f"cannot split {cfg.num_graphs} graphs with ratios {cfg.split_ratios}")
    return seen, val_u, test_u


def _candidate_pairs(graph: NavGraph, cfg: WorldConfig) -> list[tuple[int, int, list[int]]]:
    out = []
    for s in graph.node_ids:
        for g in graph.node_ids:
            if s == g:
                continue
            path, _ = shortest_path(graph, s, g)
            if cfg.min_path_nodes <= len(path) <= cfg.max_path_nodes:
                out.append((s, g, path))
    return out


def generate_world(seed: int, config: WorldConfig | None = None) -> WorldSplit:
    """Build graphs, splits, and tokenized instructions; a pure function of (seed, config)."""
    cfg = config or WorldConfig()
    cfg.validate()
    grammar = cfg.grammar()
    symbols = grammar.landmark_symbols()
    if cfg.landmark_vocab_size > len(symbols):
        raise GenerationError(f"landmark_vocab_size {cfg.landmark_vocab_size} exceeds the {len(symbols)} grammar landmarks")
    symbols = symbols[: cfg.landmark_vocab_size]
    n_seen, n_val, n_test = _allocate_graphs(cfg)
    rng = child_rng(seed, "world")

    roles = ["seen"] * n_seen + ["val_unseen"] * n_val + ["test_unseen"] * n_test
    graphs: dict[str, NavGraph] = {}
    raw: dict[str, list[tuple[str, str, int, int, list[int], list[str]]]] = {s: [] for s in SPLITS}
    for gi, role in enumerate(roles):
        gid = f"g{gi:03d}"
        env_seed = int(rng.integers(2**31))
        graph = _lattice_graph(gid, env_seed, cfg, symbols, child_rng(seed, "graph", gid))
        graphs[gid] = graph
        pairs = _candidate_pairs(graph, cfg)
        order = child_rng(seed, "pairs", gid).permutation(len(pairs))
        pairs = [pairs[i] for i in order]
        if role == "seen":
            quota = (("train_seen", cfg.train_per_graph), ("val_seen", cfg.val_seen_per_graph))
        else:
            quota = ((role, cfg.unseen_per_graph),)
        need = sum(q for _, q in quota)
        if len(pairs) < need:
            raise GenerationError(
                f"graph {gid} has only {len(pairs)} start/goal pairs with {cfg.min_path_nodes}-{cfg.max_path_nodes} "
                f"path nodes; {need} requested"
            )
        pos = 0
        for split, q in quota:
            for s, g, path in pairs[pos:pos + q]:
                pid = f"{gid}-{s}-{g}"
                texts = render_instructions(
                    path, graph, grammar, cfg.instructions_per_episode,
                    seed=int(child_rng(seed, "grammar", pid).integers(2**31)),
                    unseen=(role != "seen"),
                )
                raw[split].append((pid, gid, s, g, path, texts))
            pos += q

    vocab = Vocabulary.from_texts(t for *_, texts in raw["train_seen"] for t in texts)
    splits = {
        name: [
            EpisodeSpec(pid, gid, s, g, tuple(path), tuple(tokenize(t, vocab) for t in texts))
            for pid, gid, s, g, path, texts in rows
        ]
        for name, rows in raw.items()
    }
    return WorldSplit(seed, cfg, graphs, splits, vocab, grammar)
