"""Command-line surface tying the modules into reproducible runs.

Every command resolves a RunConfig (built-in defaults, optional JSON config
file via --config or the TABLEROUTE_CONFIG env var, then CLI overrides),
writes its outputs into the run directory next to a resolved config
snapshot, and exits 0 on success, 2 on config errors, 1 on runtime errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import analysis, engine
from .corpus import load_corpus, split_by_dataset, stratified_split
from .errors import ConfigError, TableRouteError, UndefinedRateError
from .gate import load_checkpoint, save_checkpoint
from .ingest import ingest as run_ingest
from .paths import KNOWN_DATASETS, TRAINING_DATASETS
from .runconfig import RunConfig, backends_from_corpus, load_runconfig
from .synthetic import make_raw_records
from .trainer import train

log = logging.getLogger("tableroute")

CONFIG_ENV_VAR = "TABLEROUTE_CONFIG"
SNAPSHOT_NAME = "config.snapshot.json"


def _write_snapshot(cfg: RunConfig, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / SNAPSHOT_NAME).write_text(cfg.snapshot_json(), encoding="utf-8")


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR) or None
    overrides: dict = {}
    if getattr(args, "corpus", None):
        overrides["corpus_dir"] = args.corpus
    if getattr(args, "run_dir", None):
        overrides["run_dir"] = args.run_dir
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "resource_weight", None) is not None:
        overrides["train"] = {"resource_weight": args.resource_weight}
    if getattr(args, "lambdas", None):
        overrides["sweep"] = {
            "resource_weights": [float(x) for x in args.lambdas.split(",") if x.strip()]
        }
    return load_runconfig(config_path, overrides)


def _require_corpus(cfg: RunConfig):
    if not cfg.corpus_dir:
        raise ConfigError("no corpus_dir configured (pass --corpus or set it in the config)",
                          key="corpus_dir")
    return load_corpus(cfg.corpus_dir)


def _split(cfg: RunConfig, examples):
    val_fraction = float(cfg["train"]["val_fraction"])
    return stratified_split(examples, val_fraction, cfg.seed)


def _history_csv(history) -> str:
    lines = ["step,lr,loss_total,loss_task,loss_resource,grad_norm"]
    for h in history:
        lines.append(
            f"{h.step},{h.lr!r},{h.loss_total!r},{h.loss_task!r},"
            f"{h.loss_resource!r},{h.grad_norm!r}"
        )
    return "\n".join(lines) + "\n"


def cmd_make_synthetic(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    tags = KNOWN_DATASETS if args.all_tags else TRAINING_DATASETS
    records = make_raw_records(args.n, seed=cfg.seed, tags=tags)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
    print(f"wrote {len(records)} raw records to {out}")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    raw_path = Path(args.raw)
    if not raw_path.exists():
        raise ConfigError(f"raw corpus not found: {raw_path}")
    raws = [json.loads(line) for line in raw_path.read_text(encoding="utf-8").splitlines() if line.strip()]

    labels_text = {str(r.get("id")): int(r.get("path_labels", [0, 0, 0])[0]) for r in raws}
    labels_image = {str(r.get("id")): int(r.get("path_labels", [0, 0, 0])[1]) for r in raws}
    labels_fusion = {str(r.get("id")): int(r.get("path_labels", [0, 0, 0])[2]) for r in raws}
    tags = sorted({str(r.get("dataset")) for r in raws if r.get("dataset")})

    from .runconfig import build_agent, build_backends

    backends = build_backends(cfg, labels_text, labels_image, tags=tags)
    agent = build_agent(cfg, labels_fusion)
    result = run_ingest(
        raws, backends, agent, args.out, skip_threshold=float(cfg["ingest"]["skip_threshold"])
    )
    print(f"ingested {len(result.examples)} examples into {args.out} "
          f"({len(result.skipped)} skipped)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    run_dir = Path(cfg.run_dir)
    _write_snapshot(cfg, run_dir)
    examples = _require_corpus(cfg)
    train_set, val_set = _split(cfg, examples)
    result = train(train_set, val_set, cfg.train_config(), cfg.cost_vector())
    (run_dir / "history.csv").write_text(_history_csv(result.history), encoding="utf-8")
    metadata = {"seed": str(cfg.seed), "resource_weight": str(cfg["train"]["resource_weight"])}
    if result.val_metrics:
        metadata["val_routing_accuracy"] = repr(result.val_metrics.routing_accuracy)
        (run_dir / "val_metrics.json").write_text(
            json.dumps(
                {
                    "routing_accuracy": result.val_metrics.routing_accuracy,
                    "expected_cost": result.val_metrics.expected_cost,
                    "path_distribution": list(result.val_metrics.path_distribution),
                    "n_examples": result.val_metrics.n_examples,
                },
                indent=2,
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
    save_checkpoint(run_dir / "gate.ckpt", result.params, result.optimizer_state, metadata)
    acc = result.val_metrics.routing_accuracy if result.val_metrics else float("nan")
    print(f"trained {result.total_steps} steps; best val routing accuracy {acc:.4f}; "
          f"checkpoint at {run_dir / 'gate.ckpt'}")
    return 0


def _load_gate(args: argparse.Namespace):
    ckpt = getattr(args, "checkpoint", None)
    if not ckpt:
        raise ConfigError("pass --checkpoint <gate.ckpt>")
    if not Path(ckpt).exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    params, _, meta = load_checkpoint(ckpt)
    return params, meta


def _find_example(examples, example_id: str):
    for ex in examples:
        if ex.id == example_id:
            return ex
    raise ConfigError(f"example id {example_id!r} not in corpus")


def cmd_route(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    examples = _require_corpus(cfg)
    params, _ = _load_gate(args)
    ex = _find_example(examples, args.id)
    decision = engine.route(params, ex.embeddings, cfg.cost_vector(),
                            cfg.engine_config().gate_temperature)
    print(json.dumps({
        "path": decision.path,
        "probabilities": [float(p) for p in decision.probabilities],
    }))
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    examples = _require_corpus(cfg)
    params, _ = _load_gate(args)
    ex = _find_example(examples, args.id)
    backends, agent = backends_from_corpus(cfg, examples)
    record = engine.infer(
        ex, params, backends, agent, cfg.cost_vector(), cfg.engine_config(),
        mode=engine.MODE_NON_ADAPTIVE if args.non_adaptive else engine.MODE_ADAPTIVE,
    )
    print(json.dumps({
        "example_id": record.example_id,
        "chosen_path": record.chosen_path,
        "t_phase1": record.t_phase1,
        "t_phase2": record.t_phase2,
        "t_phase3": record.t_phase3,
        "parallel_latency": record.parallel_latency,
        "final_answer": record.final_answer,
        "output_tokens": record.output_tokens,
        "fusion_role": record.fusion_role,
        "degraded": record.degraded,
    }))
    return 0


def cmd_profile_cost(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    run_dir = Path(cfg.run_dir)
    _write_snapshot(cfg, run_dir)
    examples = _require_corpus(cfg)
    backends, agent = backends_from_corpus(cfg, examples)
    per_dataset = int(cfg["profile"]["samples_per_dataset"])
    testbed = []
    for dataset, group in sorted(split_by_dataset(examples).items()):
        testbed.extend(sorted(group, key=lambda e: e.id)[:per_dataset])
    costs, measurements = engine.measure_all_costs(
        testbed, backends, agent,
        warmup_runs=int(cfg["profile"]["warmup_runs"]),
        timed_runs=int(cfg["profile"]["timed_runs"]),
        api_overhead_s=cfg.engine_config().fusion_api_overhead_s,
    )
    lines = ["path,avg_latency_s,avg_tps,cost"]
    for m in measurements:
        lines.append(f"{m.path},{m.avg_latency_seconds!r},{m.avg_tps!r},{m.cost!r}")
    (run_dir / "costs.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"measured path costs {tuple(round(c, 4) for c in costs.costs)} "
          f"over {len(testbed)} samples; CSV at {run_dir / 'costs.csv'}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    run_dir = Path(cfg.run_dir)
    _write_snapshot(cfg, run_dir)
    examples = _require_corpus(cfg)
    params, _ = _load_gate(args)
    backends, agent = backends_from_corpus(cfg, examples)
    report = engine.run_efficiency_bench(
        examples, params, backends, agent, cfg.cost_vector(),
        cfg.bench_config(), cfg.engine_config(),
    )
    engine.write_bench_csv(report, run_dir / "bench.csv")
    for msg in report.warnings:
        log.warning(msg)
    print(f"bench complete: {len(report.rows)} rows; CSV at {run_dir / 'bench.csv'}")
    return 0


def cmd_sweep_lambda(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    run_dir = Path(cfg.run_dir)
    _write_snapshot(cfg, run_dir)
    examples = _require_corpus(cfg)
    train_set, val_set = _split(cfg, examples)
    rows = analysis.lambda_sweep(
        train_set, val_set,
        [float(w) for w in cfg["sweep"]["resource_weights"]],
        cfg.train_config(), cfg.cost_vector(),
    )
    analysis.write_path_distribution_csv(rows, run_dir / "path_distribution.csv")
    analysis.write_alignment_csv(rows, run_dir / "alignment_performance.csv")
    print(f"swept {len(rows)} resource weights; CSVs in {run_dir}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    run_dir = Path(cfg.run_dir)
    _write_snapshot(cfg, run_dir)
    examples = _require_corpus(cfg)
    params, _ = _load_gate(args)
    records = analysis.outcome_records(params, examples, cfg.cost_vector())
    partition = analysis.case_partition(records)
    try:
        synergy = analysis.synergy_success_rate(records)
        synergy_repr = repr(synergy)
    except UndefinedRateError:
        synergy_repr = "undefined"
    lines = [
        "metric,value",
        f"complementarity_rate,{analysis.complementarity_rate(records)!r}",
        f"synergy_success_rate,{synergy_repr}",
        f"heuristic_alignment,{analysis.heuristic_alignment(records)!r}",
        f"both_correct_pct,{partition.both_correct!r}",
        f"only_text_pct,{partition.only_text!r}",
        f"only_image_pct,{partition.only_image!r}",
        f"both_wrong_rescued_pct,{partition.both_wrong_rescued!r}",
        f"both_wrong_unsolved_pct,{partition.both_wrong_unsolved!r}",
    ]
    (run_dir / "analysis.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"analysis of {len(records)} records written to {run_dir / 'analysis.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tableroute",
        description="Cost-aware adaptive routing over table-reasoning paths.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus=True, run_dir=True, checkpoint=False):
        p.add_argument("--config", help=f"JSON run config (or ${CONFIG_ENV_VAR})")
        if corpus:
            p.add_argument("--corpus", help="corpus directory")
        if run_dir:
            p.add_argument("--run-dir", dest="run_dir", help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", help="gate checkpoint file")
        p.add_argument("--seed", type=int, help="override config seed")

    p = sub.add_parser("make-synthetic", help="generate a raw synthetic corpus")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--n", type=int, default=2500, help="number of records")
    p.add_argument("--all-tags", action="store_true",
                   help="use all dataset tags, not just the training mixture")
    common(p, corpus=False, run_dir=False)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("ingest", help="embed + score a raw corpus into a corpus dir")
    p.add_argument("--raw", required=True, help="raw JSONL records")
    p.add_argument("--out", required=True, help="corpus directory to write")
    common(p, corpus=False, run_dir=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train the gate on a corpus")
    common(p)
    p.add_argument("--resource-weight", dest="resource_weight", type=float,
                   help="override the resource loss weight")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("route", help="route one example, print path + probabilities")
    common(p, run_dir=False, checkpoint=True)
    p.add_argument("--id", required=True, help="example id")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("infer", help="run one full inference with latency accounting")
    common(p, run_dir=False, checkpoint=True)
    p.add_argument("--id", required=True, help="example id")
    p.add_argument("--non-adaptive", action="store_true", help="bypass the gate (always fusion)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("profile-cost", help="measure per-path costs on a testbed")
    common(p)
    p.set_defaults(func=cmd_profile_cost)

    p = sub.add_parser("bench", help="efficiency benchmark, adaptive vs non-adaptive")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-lambda", help="train across resource weights and report")
    common(p)
    p.add_argument("--lambdas", help="comma-separated resource weights")
    p.set_defaults(func=cmd_sweep_lambda)

    p = sub.add_parser("analyze", help="policy diagnostics for a trained gate")
    common(p, checkpoint=True)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        key = f" (key: {e.key})" if e.key else ""
        print(f"config error: {e}{key}", file=sys.stderr)
        return 2
    except TableRouteError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
