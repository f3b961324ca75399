"""``vlnlab`` command line: genworld, pretrain, train, eval, ablate, stats.

Every command writes into ``--out`` using the layout::

    out/config.json      resolved configuration actually used
    out/world.json       generated world (genworld)
    out/corpus/          raw instruction text per split (genworld)
    out/checkpoints/     LM and agent checkpoints
    out/logs/            perplexity curves, training logs, trajectory logs
    out/reports/         metric reports and tables

Exit codes: 0 success, 2 configuration/usage error, 3 input/output error,
4 numeric abort during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import autodiff as ad
from .agent import AgentModel
from .evaluation import (
    CorruptLogError,
    UsageError,
    ablation_grid,
    evaluate_with_log,
    format_grid,
    format_reports,
    replay_log,
)
from .experiment import (
    ENCODERS,
    ExperimentConfig,
    build_model,
    cell_config,
    pretrained_lm,
    run_cell,
)
from .instructions import Vocabulary, overlap_table, split_words, tokenize
from .lm import EncoderKind, LMModel, TrainingError
from .training import ConfigError, NumericAbort, StrategyConfig, TrainConfig, train
from .world import SPLITS, GenerationError, WorldSplit, generate_world

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ helpers


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _layout(out: Path) -> dict[str, Path]:
    dirs = {name: out / name for name in ("checkpoints", "logs", "reports")}
    for d in (out, *dirs.values()):
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise CLIError(f"cannot read config {path}: {exc}", EXIT_IO) from exc
        except json.JSONDecodeError as exc:
            raise CLIError(f"config {path} is not valid JSON: {exc}", EXIT_CONFIG) from exc
        cfg.update(data)
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for key, section, name in getattr(args, "_overrides", ()):
        value = getattr(args, key, None)
        if value is None:
            continue
        if section is None:
            overrides[name] = value
        else:
            overrides.setdefault(section, {})[name] = value
    if overrides:
        cfg.update(overrides)  # flags win over the file
    return cfg


def _save_config(out: Path, cfg: ExperimentConfig) -> None:
    (out / "config.json").write_text(cfg.dumps())


def _load_world(path: str) -> WorldSplit:
    try:
        return WorldSplit.load(path)
    except FileNotFoundError as exc:
        raise CLIError(f"world file not found: {path}", EXIT_IO) from exc
    except (KeyError, ValueError) as exc:
        raise CLIError(f"world file {path} is malformed: {exc}", EXIT_IO) from exc


def full_vocab_overlap(world: WorldSplit, ns=(1, 2, 3, 4)) -> dict[int, dict[str, float]]:
    """Overlap of every split against train, over a vocabulary of all words so unseen words stay distinct."""
    texts = {s: [x.raw_text for e in world.splits[s] for x in e.instructions] for s in SPLITS}
    vocab = Vocabulary.from_texts(t for ts in texts.values() for t in ts)
    corpora = {s: [tokenize(t, vocab) for t in ts] for s, ts in texts.items()}
    return overlap_table(corpora["train_seen"], {s: corpora[s] for s in SPLITS if s != "train_seen"}, ns)


def format_overlap(table: dict[int, dict[str, float]]) -> str:
    splits = list(next(iter(table.values())))
    lines = [f"{'n-gram(s)':<10}" + "".join(f" {s:>12}" for s in splits)]
    for n, row in table.items():
        lines.append(f"{n:<10}" + "".join(f" {row[s]:12.1f}" for s in splits))
    return "\n".join(lines)


def world_stats(world: WorldSplit) -> dict:
    sizes = {s: len(world.splits[s]) for s in SPLITS}
    lengths = [len(split_words(x.raw_text)) for e in world.train_seen for x in e.instructions]
    return {
        "graphs": len(world.graphs),
        "episodes": sizes,
        "vocab_size": len(world.vocab),
        "mean_instruction_words": sum(lengths) / len(lengths),
        "overlap_vs_train": {str(n): row for n, row in full_vocab_overlap(world).items()},
    }


def _print_stats(stats: dict) -> None:
    print("split sizes: " + ", ".join(f"{k}={v}" for k, v in stats["episodes"].items()))
    print(f"graphs={stats['graphs']} vocab={stats['vocab_size']} mean words={stats['mean_instruction_words']:.1f}")
    print("n-gram overlap with train_seen (%):")
    print(format_overlap({int(n): row for n, row in stats["overlap_vs_train"].items()}))


# ----------------------------------------------------------------- commands


def cmd_genworld(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        world = generate_world(cfg.seed, cfg.world)
    except GenerationError as exc:
        raise CLIError(f"infeasible world config: {exc}", EXIT_CONFIG) from exc
    _save_config(out, cfg)
    world.save(out / "world.json")
    corpus = out / "corpus"
    corpus.mkdir(exist_ok=True)
    for s in SPLITS:
        (corpus / f"{s}.txt").write_text("".join(f"{e.path_id}\t{x.raw_text}\n" for e in world.splits[s] for x in e.instructions))
    (corpus / "vocab.txt").write_text(world.vocab.to_lines())
    stats = world_stats(world)
    _layout(out)
    (out / "reports" / "stats.json").write_text(_dump(stats))
    _print_stats(stats)
    return EXIT_OK


def cmd_stats(args) -> int:
    world = _load_world(args.world)
    stats = world_stats(world)
    if args.out:
        out = Path(args.out)
        dirs = _layout(out)
        _save_config(out, _load_config(args))
        (dirs["reports"] / "stats.json").write_text(_dump(stats))
    _print_stats(stats)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    kind = args.kind
    if kind == EncoderKind.SCRATCH.value:
        raise CLIError("scratch_embedding has nothing to pretrain", EXIT_CONFIG)
    world = _load_world(args.world)
    out = Path(args.out)
    dirs = _layout(out)
    cfg.encoder = kind
    _save_config(out, cfg)
    try:
        lm, curve = pretrained_lm(world, kind, cfg, cfg.seed)
    except TrainingError as exc:
        raise CLIError(str(exc), EXIT_NUMERIC) from exc
    lm.save(dirs["checkpoints"] / f"lm_{kind}.ckpt")
    (dirs["logs"] / f"pretrain_{kind}.json").write_text(_dump({"kind": kind, "perplexity": curve}))
    print(f"{kind}: perplexity {curve[0]:.2f} -> {curve[-1]:.2f} over {len(curve)} epochs")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    world = _load_world(args.world)
    out = Path(args.out)
    dirs = _layout(out)
    lm = None
    if cfg.encoder != EncoderKind.SCRATCH.value:
        if not args.lm:
            raise CLIError(f"--lm checkpoint required for encoder {cfg.encoder}", EXIT_CONFIG)
        try:
            lm = LMModel.load(args.lm)
        except FileNotFoundError as exc:
            raise CLIError(f"LM checkpoint not found: {args.lm}", EXIT_IO) from exc
        except ad.CheckpointError as exc:
            raise CLIError(str(exc), EXIT_IO) from exc
        if lm.kind.value != cfg.encoder:
            raise CLIError(f"LM checkpoint is {lm.kind.value}, encoder is {cfg.encoder}", EXIT_CONFIG)
    _save_config(out, cfg)
    model = build_model(world, cfg.encoder, cfg, cfg.seed, lm)
    tcfg = TrainConfig(**dict(cfg.train.__dict__, seed=cfg.seed))
    try:
        _, log = train(model, world, cfg.strategy.build(), tcfg, out_dir=out, resume=args.resume)
    except NumericAbort as exc:
        raise CLIError(f"numeric abort on episode {exc.path_id}: {exc}", EXIT_NUMERIC) from exc
    (dirs["logs"] / "train.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in log))
    model.save(dirs["checkpoints"] / "agent.ckpt")
    for r in log:
        print(f"epoch {r['epoch']:3d} stage {r['stage']} loss {r['train_loss']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    world = _load_world(args.world)
    try:
        model = AgentModel.load(args.agent)
    except FileNotFoundError as exc:
        raise CLIError(f"agent checkpoint not found: {args.agent}", EXIT_IO) from exc
    except ad.CheckpointError as exc:
        raise CLIError(str(exc), EXIT_IO) from exc
    splits = list(cfg.eval.splits)
    if "test_unseen" in splits and not cfg.eval.include_test:
        raise CLIError("test_unseen is only evaluated with --include-test", EXIT_CONFIG)
    if cfg.eval.include_test and "test_unseen" not in splits:
        splits.append("test_unseen")
    for s in splits:
        if s not in SPLITS:
            raise CLIError(f"unknown split {s!r}", EXIT_CONFIG)
    settings = ("S", "M") if cfg.eval.setting == "both" else (cfg.eval.setting,)
    out = Path(args.out)
    dirs = _layout(out)
    _save_config(out, cfg)
    reports = []
    for setting in settings:
        for split in splits:
            rep, log = evaluate_with_log(model, world, split, setting)
            log_path = dirs["logs"] / f"eval_{split}_{setting}.jsonl"
            log_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in log))
            replayed = replay_log([json.loads(line) for line in log_path.read_text().splitlines()], world, split, setting)
            if any(abs(getattr(replayed, k) - getattr(rep, k)) > 1e-9 for k in ("tl", "ne", "sr", "spl")):
                raise CLIError(f"log replay disagrees with the live report for {split}/{setting}", EXIT_IO)
            (dirs["reports"] / f"{split}_{setting}.json").write_text(_dump(rep.row()))
            reports.append(rep)
    table = format_reports(reports)
    (dirs["reports"] / "summary.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    world = _load_world(args.world)
    out = Path(args.out)
    dirs = _layout(out)
    _save_config(out, cfg)
    strategies = [StrategyConfig(s, cfg.strategy.epsilon) for s in cfg.ablate.strategies]
    lm_cache = dirs["checkpoints"] / "lm"

    def run(enc, strat, seed):
        print(f"cell {enc} {strat.label} seed={seed}", flush=True)
        return run_cell(world, enc, strat, seed, cfg, lm_cache=lm_cache)

    try:
        grid = ablation_grid(cfg.ablate.encoders, strategies, cfg.ablate.seeds, run,
                             cell_dir=out / "cells", cell_config=lambda e, s, k: cell_config(cfg, e, s, k))
    except Exception as exc:
        cause = exc.__cause__
        if isinstance(cause, (NumericAbort, TrainingError)):
            raise CLIError(str(exc), EXIT_NUMERIC) from exc
        raise
    rows = grid["rows"]
    (dirs["reports"] / "grid.json").write_text(_dump(rows))
    table = format_grid(rows, list(cfg.ablate.splits))
    (dirs["reports"] / "grid.txt").write_text(table + "\n")
    if grid["reused"]:
        print(f"reused {len(grid['reused'])} finished cell(s)")
    print(table)
    return EXIT_OK


# ------------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None, help="root seed (default 0)")
    p.add_argument("--config", default=None, help="JSON config; flags override its values")
    p.add_argument("--out", required=out_required, help="output directory")


def _override(p, flag, section, name, **kw):
    dest = f"ov_{section or 'top'}_{name}"
    p.add_argument(flag, dest=dest, default=None, **kw)
    p.set_defaults(_overrides=p.get_default("_overrides") + ((dest, section, name),))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlnlab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text, out_required=True):
        p = sub.add_parser(name, help=help_text)
        _common(p, out_required)
        p.set_defaults(func=fn, _overrides=())
        return p

    p = command("genworld", cmd_genworld, "generate a synthetic world and print its statistics")
    _override(p, "--num-graphs", "world", "num_graphs", type=int)
    _override(p, "--nodes-per-graph", "world", "nodes_per_graph", type=int)
    _override(p, "--rare-rate-unseen", "world", "rare_rate_unseen", type=float)

    p = command("stats", cmd_stats, "print split sizes and the n-gram overlap table", out_required=False)
    p.add_argument("--world", required=True)

    p = command("pretrain", cmd_pretrain, "pretrain a causal or masked toy LM on training instructions")
    p.add_argument("--world", required=True)
    p.add_argument("--kind", required=True, choices=ENCODERS)
    _override(p, "--epochs", "pretrain", "epochs", type=int)

    p = command("train", cmd_train, "train an agent (both stages)")
    p.add_argument("--world", required=True)
    p.add_argument("--lm", default=None, help="LM checkpoint (required unless --encoder scratch_embedding)")
    p.add_argument("--resume", action="store_true", help="continue from checkpoints/last.* in --out")
    _override(p, "--encoder", None, "encoder", choices=ENCODERS)
    _override(p, "--strategy", "strategy", "kind", choices=("TF", "SF", "SS"))
    _override(p, "--epsilon", "strategy", "epsilon", type=float)
    _override(p, "--stage1-epochs", "train", "stage1_epochs", type=int)
    _override(p, "--stage2-epochs", "train", "stage2_epochs", type=int)
    _override(p, "--setting", "train", "setting", choices=("S", "M"))

    p = command("eval", cmd_eval, "evaluate an agent checkpoint")
    p.add_argument("--world", required=True)
    p.add_argument("--agent", required=True)
    _override(p, "--setting", "eval", "setting", choices=("S", "M", "both"))
    _override(p, "--splits", "eval", "splits", nargs="+")
    _override(p, "--include-test", "eval", "include_test", action="store_const", const=True)

    p = command("ablate", cmd_ablate, "run the encoder x strategy x seed grid (resumable)")
    p.add_argument("--world", required=True)
    _override(p, "--encoders", "ablate", "encoders", nargs="+", choices=ENCODERS)
    _override(p, "--strategies", "ablate", "strategies", nargs="+", choices=("TF", "SF", "SS"))
    _override(p, "--seeds", "ablate", "seeds", nargs="+", type=int)
    _override(p, "--epsilon", "strategy", "epsilon", type=float)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, UsageError, GenerationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericAbort as exc:
        print(f"numeric abort on episode {exc.path_id}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CorruptLogError, ad.CheckpointError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
