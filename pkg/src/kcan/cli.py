"""Command-line entry point: ``kcan <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 failed check.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ABLATIONS, ConfigError, TrainConfig, load_config, parse_config
from .graph import DataError, NegativeSamplingError, load_dataset
from .kagcn import AttentionCache
from .params import GradCheckError, grad_check, load_snapshot, save_snapshot
from .predictor import Scorer
from .synth import SynthConfig, bayes_auc, generate, write_dataset
from .trainer import TrainingError, run_ablation, stream, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4
PHASE_EXPLAIN = 4
SWEEP_VALUES = {
    "l2": (1e-1, 1e-2, 1e-3, 1e-4, 1e-5),
    "neighbors": (5, 10, 20, 30),
}

log = logging.getLogger("kcan")


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args) -> TrainConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "ablation", None):
        changes["ablation"] = args.ablation
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    return cfg.replace(**changes) if changes else cfg


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need_data(args):
    if not args.data_dir:
        raise UsageError("--data-dir is required")
    return Path(args.data_dir)


def cmd_synth(args) -> int:
    cfg = SynthConfig(args.users, args.items, args.attributes, args.pref_prob, args.noise,
                      args.seed if args.seed is not None else 0)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = write_dataset(generate(cfg), _out_dir(args))
    print(f"wrote {out}  bayes_auc={bayes_auc(cfg):.4f}")
    return EXIT_OK


def _save_run(out: Path, result, graph, cfg: TrainConfig):
    meta = {"config": cfg.to_text(), "config_hash": cfg.hash(), "id_map_hash": graph.id_map_hash()}
    extra = {"attention": result.cache.weights, "attention_epoch": np.array(result.cache.epoch)}
    save_snapshot(out / "snapshot.npz", result.store, meta, extra)
    result.trace.to_csv(out / "loss_trace.csv")
    (out / "config.txt").write_text(f"# config_hash = {cfg.hash()}\n" + cfg.to_text(), encoding="utf-8")
    graph.export_id_map(out / "id_map.tsv")


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    inter, split, graph = load_dataset(_need_data(args), cfg.seed)
    result = train(cfg, graph, split, dump_dir=out,
                   callback=lambda e, s, c, tr: log.info("epoch %d %s", e, tr.rows[-2:]))
    _save_run(out, result, graph, cfg)
    print(f"trained {cfg.epochs} epochs  config={cfg.hash()}  snapshot={out / 'snapshot.npz'}")
    return EXIT_OK


def _restore(args):
    if not args.snapshot:
        raise UsageError("--snapshot is required")
    path = Path(args.snapshot)
    if not path.exists():
        raise DataError(f"snapshot not found: {path}")
    try:
        store, meta, extra = load_snapshot(path)
    except (ValueError, KeyError, OSError) as exc:
        raise DataError(f"unreadable snapshot {path}: {exc}") from exc
    cfg = parse_config(meta["config"])
    inter, split, graph = load_dataset(_need_data(args), cfg.seed)
    if meta.get("id_map_hash") != graph.id_map_hash():
        raise DataError("snapshot was trained on a different dataset (id map mismatch)")
    weights = extra.get("attention")
    if weights is None or len(weights) != len(graph.triples):
        raise DataError("snapshot lacks an attention cache matching the dataset")
    cache = AttentionCache(graph.indptr, graph.relations, graph.tails, weights, int(extra.get("attention_epoch", 0)))
    return cfg, store, inter, split, graph, cache


def cmd_eval(args) -> int:
    from .evaluate import evaluate

    cfg, store, inter, split, graph, cache = _restore(args)
    trace_path = Path(args.snapshot).with_name("loss_trace.csv")
    trace = None
    if trace_path.exists():
        from .trainer import LossTrace

        trace = LossTrace.from_csv(trace_path)
    report = evaluate(Scorer(store, graph, cache, cfg), split, graph, cfg, trace=trace, inter=inter)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    inter, split, graph = load_dataset(_need_data(args), cfg.seed)
    reports = run_ablation(cfg, graph, split, inter)
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variant", f"hit@{cfg.top_k}", f"ndcg@{cfg.top_k}", "auc", "config_hash"])
        for variant, rep in reports.items():
            writer.writerow([variant, rep.hit, rep.ndcg, rep.auc, rep.config_hash])
            print(f"{variant}\tauc={rep.auc:.4f}\thit={rep.hit:.4f}\tndcg={rep.ndcg:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import composed_loss_evaluator, toy_config, toy_problem

    seed = args.seed if args.seed is not None else 0
    base = load_config(args.config) if args.config else toy_config()
    cfg = base.replace(seed=seed, ablation=args.ablation or base.ablation)
    _, split, graph = toy_problem(seed)
    store, evaluate = composed_loss_evaluator(graph, split, cfg, seed)
    try:
        worst = grad_check(evaluate, store, probe_count=args.probes, rng=stream(seed, 5))
    except GradCheckError as exc:
        raise CheckFailed(str(exc)) from exc
    line = f"max_rel_err={worst:.3e}  tol={GRADCHECK_TOL:g}  config={cfg.hash()}"
    print(line)
    if args.out:
        Path(args.out).write_text(line + "\n", encoding="utf-8")
    if worst > GRADCHECK_TOL:
        raise CheckFailed(f"gradient check failed: {worst:.3e} > {GRADCHECK_TOL:g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .evaluate import evaluate

    if args.sweep_param not in SWEEP_VALUES:
        raise UsageError(f"--sweep-param must be one of {sorted(SWEEP_VALUES)}")
    cfg = _config(args)
    inter, split, graph = load_dataset(_need_data(args), cfg.seed)
    values = SWEEP_VALUES[args.sweep_param]
    if args.values:
        cast = float if args.sweep_param == "l2" else int
        values = tuple(cast(v) for v in args.values.split(","))
    out_path = Path(args.out) if args.out else None
    rows = []
    for value in values:
        run_cfg = cfg.replace(**{args.sweep_param: value})
        result = train(run_cfg, graph, split)
        rep = evaluate(result.scorer(graph), split, graph, run_cfg, inter=inter)
        rows.append([value, rep.hit, rep.ndcg, rep.auc, run_cfg.hash()])
        print(f"{args.sweep_param}={value}\tauc={rep.auc:.4f}\thit={rep.hit:.4f}\tndcg={rep.ndcg:.4f}")
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with out_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([args.sweep_param, f"hit@{cfg.top_k}", f"ndcg@{cfg.top_k}", "auc", "config_hash"])
            writer.writerows(rows)
    return EXIT_OK


def explain_records(scorer: Scorer, graph, target_entities, seed: int, config_hash: str):
    """One dict per sampled edge of each target's subgraph."""
    records = []
    for k, (u, i) in enumerate(target_entities):
        score, trace = scorer.explain((u, i), stream(seed, PHASE_EXPLAIN, k))
        batch = trace.batch
        per_layer = []
        for mask, alpha in trace.alphas:
            full = np.full(len(batch.edge_id), np.nan)
            full[mask] = alpha
            per_layer.append(full)
        target = [graph.entity_names[u], graph.entity_names[i]]
        for e, eid in enumerate(batch.edge_id):
            h, r, t = (int(x) for x in graph.triples[eid])
            layers = [None if np.isnan(a[e]) else float(a[e]) for a in per_layer]
            records.append({
                "target": target,
                "score": score,
                "head": graph.entity_names[h],
                "relation": graph.relation_names[r],
                "tail": graph.entity_names[t],
                "hop": int(batch.edge_hop[e]),
                "pi": float(trace.alpha1[e]),
                "alpha": layers[0] if layers else None,
                "alpha_by_layer": layers,
                "config_hash": config_hash,
            })
    return records


def _resolve_targets(inter, graph, specs):
    out = []
    for spec in specs:
        if "," not in spec:
            raise UsageError(f"--target expects USER,ITEM, got {spec!r}")
        user, item = spec.split(",", 1)
        if user not in inter.user_ids or item not in inter.item_ids:
            raise DataError(f"unknown target {spec!r}")
        out.append((int(graph.user_entity[inter.user_ids[user]]), int(graph.item_entity[inter.item_ids[item]])))
    return out


def cmd_explain(args) -> int:
    if not args.target:
        raise UsageError("at least one --target USER,ITEM is required")
    cfg, store, inter, split, graph, cache = _restore(args)
    targets = _resolve_targets(inter, graph, args.target)
    records = explain_records(Scorer(store, graph, cache, cfg), graph, targets, cfg.seed, cfg.hash())
    lines = "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in records)
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kcan", description="Knowledge-graph conditional attention recommender.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, func, help_text, data=True, config=True):
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if data:
            p.add_argument("--data-dir")
        if config:
            p.add_argument("--config")
        return p

    p = command("synth", cmd_synth, "write a planted-preference dataset", data=False, config=False)
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=100)
    p.add_argument("--attributes", type=int, default=2)
    p.add_argument("--pref-prob", type=float, default=0.9)
    p.add_argument("--noise", type=float, default=0.1)

    for name, func, text in (("train", cmd_train, "train and save a snapshot"),
                             ("ablate", cmd_ablate, "train and evaluate every ablation variant"),
                             ("sweep", cmd_sweep, "metric vs. l2 weight or neighbor count")):
        p = command(name, func, text)
        p.add_argument("--ablation", choices=ABLATIONS)
        p.add_argument("--epochs", type=int)
        if name == "sweep":
            p.add_argument("--sweep-param", required=True, choices=sorted(SWEEP_VALUES))
            p.add_argument("--values", help="comma-separated override of the sweep grid")

    p = command("eval", cmd_eval, "evaluate a snapshot", config=False)
    p.add_argument("--snapshot")

    p = command("gradcheck", cmd_gradcheck, "finite-difference check of the composed loss", data=False)
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--probes", type=int, default=40)

    p = command("explain", cmd_explain, "export per-edge attention for targets", config=False)
    p.add_argument("--snapshot")
    p.add_argument("--target", action="append", help="USER,ITEM raw ids; repeatable")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(levelname)s %(message)s")
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"kcan: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, NegativeSamplingError, FileNotFoundError) as exc:
        print(f"kcan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (CheckFailed, TrainingError) as exc:
        print(f"kcan: {exc}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
