import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlnlab.agent import AgentConfig, Trajectory, build_agent
from vlnlab.evaluation import (
    CellError,
    CorruptLogError,
    EpisodeResult,
    SplitReport,
    UsageError,
    ablation_grid,
    evaluate,
    evaluate_with_log,
    format_grid,
    generalization_gap,
    reduce_results,
    replay_log,
    score_episode,
    score_nodes,
    spl_term,
)
from vlnlab.training import SF, TF, StrategyConfig
from vlnlab.world import EpisodeSpec, NavGraph, WorldConfig, WorldSplit, expert_action, shortest_path, step, TERMINAL

from conftest import chain_world


def chain_graph(n=5):
    return NavGraph("c", 0, [(i, (2.2 * i, 0.0)) for i in range(n)], [(i, i + 1) for i in range(n - 1)],
                    {i: ["lamp"] for i in range(n)})


def episode(s, g, graph):
    return EpisodeSpec(f"c-{s}-{g}", "c", s, g, tuple(shortest_path(graph, s, g)[0]), ())


def agent(world, seed=0):
    return build_agent("scratch_embedding", len(world.vocab), world.config.feature_dim,
                       AgentConfig(hidden=12, att_dim=6, embed_dim=8, seed=seed))


# ------------------------------------------------------------ score_episode


def test_following_expert_scores_one():
    g = chain_graph()
    ep = episode(0, 3, g)
    r = score_episode(Trajectory(ep.path_id, list(ep.expert_path)), ep, g)
    assert r.success and r.spl_term == 1.0 and r.ne == 0.0


def test_stopping_at_start_far_from_goal():
    g = chain_graph()
    ep = episode(0, 3, g)
    r = score_nodes([0], ep, g)
    assert not r.success and r.spl_term == 0.0 and r.tl == 0.0
    assert r.ne == pytest.approx(6.6)


def test_twice_shortest_gives_half():
    g = chain_graph()
    ep = episode(0, 2, g)  # shortest l = 2 hops
    r = score_nodes([0, 1, 2, 3, 2], ep, g)  # p = 4 hops = 2 l, ends on the goal
    l, p = 2 * 2.2, 4 * 2.2
    assert r.success and r.spl_term == pytest.approx(l / max(p, l), abs=1e-12) == 0.5


def test_start_equals_goal_degenerate():
    g = chain_graph()
    r = score_nodes([2], episode(2, 2, g), g)
    assert r.success and r.spl_term == 1.0 and r.shortest == 0.0
    assert spl_term(True, 0.0, 0.0) == 1.0


def test_expert_path_scores_exactly_one_on_generated_graphs():
    # forward and backward edge sums can round apart; the ratio must still be exactly 1
    from vlnlab.world import SPLITS, generate_world
    w = generate_world(0)
    for split in SPLITS:
        for ep in w.splits[split]:
            assert score_nodes(list(ep.expert_path), ep, w.graph(ep)).spl_term == 1.0


def test_invalid_trajectory_is_corrupt():
    g = chain_graph()
    with pytest.raises(CorruptLogError):
        score_nodes([0, 2], episode(0, 2, g), g)
    with pytest.raises(CorruptLogError):
        score_nodes([1], episode(0, 2, g), g)


@given(st.lists(st.tuples(st.booleans(), st.floats(0.0, 30.0), st.floats(0.0, 60.0)), min_size=1, max_size=30))
@settings(max_examples=200, deadline=None)
def test_spl_never_exceeds_sr(rows):
    results = [EpisodeResult("p", (0,), tl, 0.0 if ok else 5.0, ok, spl_term(ok, sh, tl), sh) for ok, sh, tl in rows]
    rep = reduce_results("x", "S", [[r] for r in results])
    assert rep.spl <= rep.sr
    for r in results:
        assert r.spl_term <= float(r.success)


# ------------------------------------------------------------------ reports


def test_reduce_groups_average_within_then_across():
    a = EpisodeResult("a", (0,), 1.0, 0.0, True, 1.0, 1.0)
    b = EpisodeResult("a", (0,), 3.0, 5.0, False, 0.0, 1.0)
    c = EpisodeResult("b", (0,), 2.0, 0.0, True, 0.5, 1.0)
    rep = reduce_results("s", "S", [[a, b], [c]])
    assert rep.sr == pytest.approx(75.0) and rep.spl == pytest.approx(50.0)
    assert rep.tl == pytest.approx(2.0) and rep.episodes == 2
    with pytest.raises(UsageError):
        reduce_results("s", "S", [])


def test_generalization_gap():
    r = SplitReport("val_seen", "M", 10.0, 4.0, 56.0, 50.0, 10)
    u = SplitReport("val_unseen", "M", 11.0, 5.0, 56.0, 47.0, 10)
    assert generalization_gap(r, r) == (0.0, 0.0)
    assert generalization_gap(r, u) == (0.0, 3.0)
    with pytest.raises(UsageError):
        generalization_gap(r, SplitReport("val_unseen", "S", 0, 0, 0, 0, 1))


# --------------------------------------------------------------- evaluation


def test_perfect_policy_scores_100(monkeypatch):
    w = chain_world()
    import vlnlab.evaluation as ev

    def expert_rollout(model, ep, graph, mode="greedy", instruction_ids=None, **kw):
        nodes, actions, node = [ep.start], [], ep.start
        while True:
            a = expert_action(graph, node, ep.goal)
            actions.append(a)
            nxt = step(graph, node, a)
            if nxt == TERMINAL:
                break
            node = nxt
            nodes.append(node)
        return Trajectory(ep.path_id, nodes, actions, stopped=True, instruction_ids=tuple(instruction_ids or ()))

    monkeypatch.setattr(ev, "rollout", expert_rollout)
    rep = evaluate(agent(w), w, "train_seen", "S")
    assert rep.episodes == 3 and rep.sr == 100.0 and rep.spl == 100.0


def test_identical_instructions_s_equals_m():
    w = chain_world()
    dup = {name: [e.with_instructions([e.instructions[0]] * 3) for e in eps] for name, eps in w.splits.items()}
    w2 = WorldSplit(w.seed, w.config, w.graphs, dup, w.vocab)
    m = agent(w2, seed=4)
    s_rep, s_log = evaluate_with_log(m, w2, "train_seen", "S")
    m_rep, m_log = evaluate_with_log(m, w2, "train_seen", "M")
    assert s_rep.row() | {"setting": "M"} == m_rep.row()
    for rec in m_log:
        for other in (r for r in s_log if r["path_id"] == rec["path_id"]):
            assert other["nodes"] == rec["nodes"]


def test_m_equals_one_settings_agree():
    w = chain_world()
    single = {name: [e.with_instructions(e.instructions[:1]) for e in eps] for name, eps in w.splits.items()}
    w1 = WorldSplit(w.seed, w.config, w.graphs, single, w.vocab)
    m = agent(w1, seed=1)
    a, b = evaluate(m, w1, "train_seen", "S"), evaluate(m, w1, "train_seen", "M")
    assert (a.tl, a.ne, a.sr, a.spl) == (b.tl, b.ne, b.sr, b.spl)


def test_log_replay_matches(tmp_path):
    w = chain_world()
    m = agent(w, seed=2)
    for setting in ("S", "M"):
        rep, log = evaluate_with_log(m, w, "train_seen", setting)
        path = tmp_path / f"{setting}.jsonl"
        path.write_text("".join(json.dumps(r) + "\n" for r in log))
        records = [json.loads(line) for line in path.read_text().splitlines()]
        again = replay_log(records, w, "train_seen", setting)
        for k in ("tl", "ne", "sr", "spl"):
            assert abs(getattr(again, k) - getattr(rep, k)) <= 1e-9


def test_replay_rejects_unknown_episode():
    w = chain_world()
    with pytest.raises(CorruptLogError):
        replay_log([{"path_id": "nope", "nodes": [0]}], w, "train_seen", "S")


# -------------------------------------------------------------- ablation grid


def fake_cell(enc, strat, seed):
    sr = {"scratch_embedding": 40.0, "causal_lm": 45.0, "masked_lm": 50.0}[enc] + strat.epsilon + seed
    return {"val_unseen": {"tl": 1.0, "ne": 2.0, "sr": sr, "spl": sr / 2}}


def test_grid_covers_cross_product():
    encs = ["scratch_embedding", "causal_lm", "masked_lm"]
    strats = [TF, SF, StrategyConfig("SS", 0.5)]
    out = ablation_grid(encs, strats, [0], fake_cell)
    assert len(out["rows"]) == 9
    one = {(r["encoder"], r["strategy"]) for r in out["rows"]}
    three = ablation_grid(encs, strats, [0, 1, 2], fake_cell)
    assert {(r["encoder"], r["strategy"]) for r in three["rows"]} == one
    row = three["rows"][0]
    assert row["raw"]["val_unseen.sr"] == [41.0, 42.0, 43.0] and row["median"]["val_unseen.sr"] == 42.0
    assert len(format_grid(three["rows"], ["val_unseen"]).splitlines()) == 2 + 9


def test_single_cell_grid_is_one_run():
    calls = []
    out = ablation_grid(["scratch_embedding"], [TF], [0], lambda *a: calls.append(a) or fake_cell(*a))
    assert len(calls) == 1 and len(out["rows"]) == 1


def test_grid_resumes_and_reruns_corrupt_cells(tmp_path):
    calls = []

    def run(*a):
        calls.append(a[0])
        return fake_cell(*a)

    encs, strats = ["scratch_embedding", "causal_lm"], [TF]
    ablation_grid(encs, strats, [0], run, cell_dir=tmp_path, cell_config=lambda e, s, k: {"e": e})
    assert len(calls) == 2
    files = sorted(tmp_path.glob("*.json"))
    files[0].write_text('{"fingerprint": "trunc')
    out = ablation_grid(encs, strats, [0], run, cell_dir=tmp_path, cell_config=lambda e, s, k: {"e": e})
    assert len(calls) == 3 and len(out["reused"]) == 1
    # a changed config invalidates stored cells
    ablation_grid(encs, strats, [0], run, cell_dir=tmp_path, cell_config=lambda e, s, k: {"e": e, "v": 2})
    assert len(calls) == 5


def test_grid_errors_carry_coordinates():
    def boom(enc, strat, seed):
        raise FloatingPointError("nan")

    with pytest.raises(CellError) as info:
        ablation_grid(["masked_lm"], [SF], [3], boom)
    assert info.value.coords == ("masked_lm", "SF", 3)
    with pytest.raises(UsageError):
        ablation_grid([], [SF], [0], boom)
