"""Navigation metrics (TL, NE, SR, SPL), S/M evaluation protocols, and the ablation grid."""

from __future__ import annotations

import hashlib
import json
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .agent import AgentModel, Trajectory, rollout
from .world import SUCCESS_THRESHOLD, EpisodeSpec, NavGraph, WorldSplit, path_length, shortest_path


class CorruptLogError(ValueError):
    pass


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeResult:
    path_id: str
    nodes: tuple[int, ...]
    tl: float
    ne: float
    success: bool
    spl_term: float
    shortest: float


def spl_term(success: bool, shortest: float, tl: float) -> float:
    """``success * shortest / max(tl, shortest)``; a zero-length optimum counts as 1 on success."""
    if not success:
        return 0.0
    denom = max(tl, shortest)
    if denom == 0.0:
        return 1.0
    return shortest / denom


def score_nodes(nodes: Sequence[int], episode: EpisodeSpec, graph: NavGraph,
                threshold: float = SUCCESS_THRESHOLD, path_id: str | None = None) -> EpisodeResult:
    if not nodes or nodes[0] != episode.start:
        raise CorruptLogError(f"{episode.path_id}: trajectory does not start at the episode start")
    for u, v in zip(nodes[:-1], nodes[1:]):
        if not graph.has_node(v) or v not in graph.neighbors(u):
            raise CorruptLogError(f"{episode.path_id}: step {u}->{v} is not an edge of {graph.id}")
    tl = path_length(graph, list(nodes))
    ne = graph.distances_to(episode.goal)[nodes[-1]]
    # measured along the optimal route with the same summation as tl, so following it scores exactly 1
    _, shortest = shortest_path(graph, episode.start, episode.goal)
    success = ne < threshold
    return EpisodeResult(path_id or episode.path_id, tuple(nodes), tl, ne, success, spl_term(success, shortest, tl), shortest)


def score_episode(traj: Trajectory, episode: EpisodeSpec, graph: NavGraph, threshold: float = SUCCESS_THRESHOLD) -> EpisodeResult:
    return score_nodes(traj.nodes, episode, graph, threshold, traj.path_id)


@dataclass
class SplitReport:
    split: str
    setting: str
    tl: float
    ne: float
    sr: float
    spl: float
    episodes: int

    def row(self) -> dict:
        return asdict(self)


def reduce_results(split: str, setting: str, groups: Sequence[Sequence[EpisodeResult]]) -> SplitReport:
    """Average within each episode's group (S setting: its M runs), then across episodes."""
    if not groups:
        raise UsageError(f"split {split!r} has no episodes")
    tl = ne = sr = spl = 0.0
    for g in groups:
        k = len(g)
        tl += sum(r.tl for r in g) / k
        ne += sum(r.ne for r in g) / k
        sr += sum(1.0 for r in g if r.success) / k
        spl += sum(r.spl_term for r in g) / k
    n = len(groups)
    return SplitReport(split, setting, tl / n, ne / n, 100.0 * sr / n, 100.0 * spl / n, n)


def run_split(model: AgentModel, world: WorldSplit, split: str, setting: str) -> tuple[list[list[Trajectory]], list[list[EpisodeResult]]]:
    if setting not in ("S", "M"):
        raise UsageError(f"setting must be 'S' or 'M', got {setting!r}")
    episodes = world.splits[split]
    trajs, results = [], []
    frozen = model.lm.frozen
    model.lm.frozen = True  # read-only snapshot: lets the LM cache embeddings
    try:
        for ep in episodes:
            graph = world.graph(ep)
            if setting == "S":
                runs = [rollout(model, ep, graph, "greedy", instruction_ids=(i,)) for i in range(len(ep.instructions))]
            else:
                runs = [rollout(model, ep, graph, "greedy")]
            trajs.append(runs)
            results.append([score_episode(t, ep, graph) for t in runs])
    finally:
        model.lm.frozen = frozen
        model.lm.clear_cache()
    return trajs, results


def evaluate(model: AgentModel, world: WorldSplit, split: str, setting: str = "S") -> SplitReport:
    _, results = run_split(model, world, split, setting)
    return reduce_results(split, setting, results)


def evaluate_with_log(model: AgentModel, world: WorldSplit, split: str, setting: str = "S") -> tuple[SplitReport, list[dict]]:
    trajs, results = run_split(model, world, split, setting)
    log = []
    for runs, res in zip(trajs, results):
        for t, r in zip(runs, res):
            rec = t.to_record()
            rec.update(split=split, setting=setting, tl=r.tl, ne=r.ne, success=r.success, spl_term=r.spl_term)
            log.append(rec)
    return reduce_results(split, setting, results), log


def replay_log(log: Iterable[dict], world: WorldSplit, split: str, setting: str) -> SplitReport:
    """Recompute a report from logged node sequences alone."""
    episodes = {e.path_id: e for e in world.splits[split]}
    grouped: dict[str, list[EpisodeResult]] = {}
    for rec in log:
        ep = episodes.get(rec["path_id"])
        if ep is None:
            raise CorruptLogError(f"unknown path id {rec['path_id']!r}")
        grouped.setdefault(ep.path_id, []).append(score_nodes(rec["nodes"], ep, world.graph(ep)))
    order = [e.path_id for e in world.splits[split] if e.path_id in grouped]
    return reduce_results(split, setting, [grouped[p] for p in order])


def generalization_gap(seen: SplitReport, unseen: SplitReport) -> tuple[float, float]:
    if seen.setting != unseen.setting:
        raise UsageError(f"cannot compare settings {seen.setting!r} and {unseen.setting!r}")
    return seen.sr - unseen.sr, seen.spl - unseen.spl


# --------------------------------------------------------------- reporting

METRIC_COLS = ("tl", "ne", "sr", "spl")


def format_reports(reports: Sequence[SplitReport]) -> str:
    lines = [f"{'split':<12} {'set':>3} {'TL':>7} {'NE':>7} {'SR':>6} {'SPL':>6} {'n':>5}"]
    for r in reports:
        lines.append(f"{r.split:<12} {r.setting:>3} {r.tl:7.2f} {r.ne:7.2f} {r.sr:6.1f} {r.spl:6.1f} {r.episodes:5d}")
    return "\n".join(lines)


# ----------------------------------------------------------- ablation grid


@dataclass
class GridCell:
    encoder: str
    strategy: str
    epsilon: float
    seed: int
    reports: dict[str, dict] = field(default_factory=dict)


class CellError(RuntimeError):
    def __init__(self, coords: tuple, cause: BaseException):
        super().__init__(f"ablation cell {coords} failed: {cause}")
        self.coords = coords


def cell_key(encoder: str, strategy_label: str, seed: int) -> str:
    return f"{encoder}__{strategy_label}__seed{seed}".replace("(", "_").replace(")", "")


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


def ablation_grid(
    encoders: Sequence[str],
    strategies: Sequence,
    seeds: Sequence[int],
    run_cell: Callable[[str, object, int], dict[str, dict]],
    cell_dir: str | Path | None = None,
    cell_config: Callable[[str, object, int], dict] | None = None,
) -> dict:
    """Train+evaluate every (encoder, strategy, seed) cell and tabulate per-split metrics.

    ``run_cell`` returns ``{split: SplitReport.row()}``. With ``cell_dir``,
    finished cells are stored as JSON with a fingerprint of their config and
    reused on re-runs; unreadable or mismatched cells are re-run.
    """
    if not encoders or not strategies or not seeds:
        raise UsageError("ablation grid axes must be non-empty")
    cdir = Path(cell_dir) if cell_dir is not None else None
    if cdir is not None:
        cdir.mkdir(parents=True, exist_ok=True)
    cells: list[GridCell] = []
    reused = []
    for enc in encoders:
        for strat in strategies:
            for seed in seeds:
                key = cell_key(enc, strat.label, seed)
                fp = fingerprint(cell_config(enc, strat, seed)) if cell_config else key
                reports = None
                path = cdir / f"{key}.json" if cdir is not None else None
                if path is not None and path.exists():
                    try:
                        stored = json.loads(path.read_text())
                        if stored.get("fingerprint") == fp and stored.get("complete"):
                            reports = stored["reports"]
                            reused.append(key)
                    except (json.JSONDecodeError, KeyError, TypeError):
                        reports = None
                if reports is None:
                    try:
                        reports = run_cell(enc, strat, seed)
                    except Exception as exc:  # propagate with coordinates
                        raise CellError((enc, strat.label, seed), exc) from exc
                    if path is not None:
                        tmp = path.with_suffix(".tmp")
                        tmp.write_text(json.dumps({"fingerprint": fp, "complete": True, "reports": reports},
                                                  indent=1, sort_keys=True) + "\n")
                        tmp.replace(path)
                cells.append(GridCell(enc, strat.kind.value, strat.epsilon, seed, reports))
    return {"cells": cells, "rows": summarize_grid(cells), "reused": reused}


def summarize_grid(cells: Sequence[GridCell]) -> list[dict]:
    """One row per (encoder, strategy) with raw per-seed values and seed medians."""
    rows: dict[tuple, dict] = {}
    for c in cells:
        key = (c.encoder, c.strategy, c.epsilon)
        row = rows.setdefault(key, {"encoder": c.encoder, "strategy": c.strategy, "epsilon": c.epsilon,
                                    "seeds": [], "raw": {}, "median": {}})
        row["seeds"].append(c.seed)
        for split, rep in c.reports.items():
            for m in METRIC_COLS:
                row["raw"].setdefault(f"{split}.{m}", []).append(rep[m])
    for row in rows.values():
        row["median"] = {k: statistics.median(v) for k, v in row["raw"].items()}
    return list(rows.values())


def format_grid(rows: Sequence[dict], splits: Sequence[str]) -> str:
    head = f"{'LM':<18} {'train':<8}" + "".join(f" | {s:^27}" for s in splits)
    sub = " " * 27 + "".join(f" | {'TL':>6} {'NE':>6} {'SR':>6} {'SPL':>6}" for _ in splits)
    lines = [head, sub]
    for r in rows:
        label = r["strategy"] if r["strategy"] != "SS" else f"SS({r['epsilon']:g})"
        line = f"{r['encoder']:<18} {label:<8}"
        for s in splits:
            med = r["median"]
            line += " | " + " ".join(f"{med.get(f'{s}.{m}', float('nan')):6.1f}" for m in METRIC_COLS)
        lines.append(line)
    return "\n".join(lines)
