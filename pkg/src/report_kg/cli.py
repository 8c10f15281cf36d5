"""Command-line entry point.

One binary, nine subcommands: generate, build-graph, train, evaluate,
classify, distill, benchmark, plot-data, export-graph.  Exit codes: 0 on
success, 1 on usage errors, 2 on data or validation errors, 3 on numeric
failures.  Results go to stdout or files; progress and the effective config
go to stderr.  Given the same seed, output files are byte-identical across
runs (timings are logged, never written into result files).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULTS, build_config, format_config, train_config, vkd_config
from .corpus import (PRESETS, GeneratorSpec, generate_corpus, read_corpus,
                     spec_from_json, split_corpus, write_corpus)
from .embeddings import EmbeddingTable, bundled_embeddings_path
from .errors import DataError, NumericError
from .extract import Report
from .graph import AblationConfig, export_dot, graph_to_json
from .metrics import evaluate, format_eval_report, macro_auc, prf1
from .ontology import bundled_ontology_path, load_ontology
from .train import (ClassifierModel, TrainConfig, benchmark_inference,
                    build_graphs, predict_proba, predict_report, train)
from .vkd import (MODES, VkdModel, make_image_features, predict_image_proba,
                  train_vkd)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(message: str):
    print(message, file=sys.stderr)


def _load_ontology(args):
    path = args.ontology if args.ontology else bundled_ontology_path()
    return load_ontology(path)


def _load_embeddings(args):
    path = args.embeddings if args.embeddings else bundled_embeddings_path()
    return EmbeddingTable.load(path)


def _add_data_options(p, embeddings=True):
    p.add_argument("--ontology", metavar="F",
                   help="ontology file (default: bundled sample)")
    if embeddings:
        p.add_argument("--embeddings", metavar="F",
                       help="embedding table (default: bundled sample)")


def _ablation_from_flags(args) -> AblationConfig:
    return AblationConfig(use_global=not args.no_global,
                          use_sentence=not args.no_sentence,
                          use_concept_edges=not args.no_concept_edges)


def _add_ablation_flags(p):
    p.add_argument("--no-global", action="store_true",
                   help="drop the global node")
    p.add_argument("--no-sentence", action="store_true",
                   help="drop sentence nodes")
    p.add_argument("--no-concept-edges", action="store_true",
                   help="drop concept-concept relation edges")


def _write_metrics(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\ttrain_loss\tval_macro_auc\n")
        for r in records:
            fh.write(f"{r.epoch}\t{r.train_loss!r}\t{r.val_macro_auc!r}\n")


def _echo_config(cfg: dict, out_dir: Path):
    text = format_config(cfg)
    _log("effective configuration:")
    for line in text.strip().splitlines():
        _log(f"  {line}")
    (out_dir / "config.txt").write_text(text, encoding="utf-8")


# -- subcommands ---------------------------------------------------------------


def cmd_generate(args) -> int:
    from dataclasses import replace

    ontology = _load_ontology(args)
    if args.spec:
        spec = spec_from_json(Path(args.spec).read_text(encoding="utf-8"))
    else:
        n = args.n_reports if args.n_reports is not None else 200
        spec = PRESETS[args.preset](n, seed=args.seed if args.seed is not None else 0)
    updates = {}
    if args.n_reports is not None:
        updates["n_reports"] = args.n_reports
    if args.languages:
        updates["languages"] = tuple(args.languages.split(","))
    if args.seed is not None:
        updates["seed"] = args.seed
    if updates:
        spec = replace(spec, **updates)
    corpus = generate_corpus(ontology, spec)
    write_corpus(corpus, args.out)
    _log(f"wrote {len(corpus)} reports to {args.out}")
    return 0


def cmd_build_graph(args) -> int:
    ontology = _load_ontology(args)
    emb = _load_embeddings(args)
    corpus = read_corpus(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    graphs = build_graphs(ontology, emb, corpus, _ablation_from_flags(args))
    for report, g in zip(corpus, graphs):
        (out_dir / f"{report.id}.json").write_text(graph_to_json(g),
                                                   encoding="utf-8")
        dot = export_dot(g, ontology, omit_global_edges=args.omit_global_edges,
                         lang=report.language)
        (out_dir / f"{report.id}.dot").write_text(dot, encoding="utf-8")
    _log(f"wrote {len(corpus)} graph pairs (.json/.dot) to {out_dir}")
    return 0


def _split_from_config(corpus, cfg):
    ratios = (cfg["train_ratio"], cfg["val_ratio"], cfg["test_ratio"])
    return split_corpus(corpus, ratios, seed=cfg["seed"])


def cmd_train(args) -> int:
    cfg = build_config(args.config, args.set or [])
    if args.seed is not None:
        cfg["seed"] = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out_dir)

    ontology = _load_ontology(args)
    emb = _load_embeddings(args)
    corpus = read_corpus(args.corpus)
    tr, va, te = _split_from_config(corpus, cfg)
    _log(f"splits: train {len(tr)}, val {len(va)}, test {len(te)}")

    result = train(train_config(cfg), ontology, emb, tr, va, log=_log)
    _write_metrics(out_dir / "metrics.tsv", result.records)
    result.model.save(out_dir / "model.ckpt", {"seed": cfg["seed"]})

    summary = {
        "param_count": result.param_count,
        "best_epoch": result.best_epoch,
        "best_val_macro_auc": result.best_val_auc,
        "epochs_run": len(result.records),
        "stopped_early": result.stopped_early,
        "n_train": len(tr), "n_val": len(va), "n_test": len(te),
    }
    if len(te):
        test_graphs = build_graphs(ontology, emb, te, result.model.ablation,
                                   cfg["workers"])
        summary["test_macro_auc"] = macro_auc(
            predict_proba(result.model, test_graphs), te.label_matrix())
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True), encoding="utf-8")
    _log(f"best epoch {result.best_epoch} "
         f"(val macro-AUC {result.best_val_auc:.4f}); artifacts in {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    ontology = _load_ontology(args)
    emb = _load_embeddings(args)
    corpus = read_corpus(args.corpus)
    model, _ = ClassifierModel.load(args.checkpoint)
    graphs = build_graphs(ontology, emb, corpus, model.ablation)
    scores = predict_proba(model, graphs)
    report = evaluate(scores, corpus.label_matrix(), threshold=args.threshold)
    print(format_eval_report(report))
    for j, auc in enumerate(report.per_label_auc):
        print(f"record\tlabel_auc\t{j}\t{'' if auc is None else repr(auc)}")
    print(f"record\tmacro_auc\t{report.macro_auc!r}")
    print(f"record\tprecision\t{report.precision!r}")
    print(f"record\trecall\t{report.recall!r}")
    print(f"record\tf1\t{report.f1!r}")
    return 0


def cmd_classify(args) -> int:
    ontology = _load_ontology(args)
    emb = _load_embeddings(args)
    model, _ = ClassifierModel.load(args.checkpoint)
    if args.corpus:
        reports = list(read_corpus(args.corpus))
    else:
        reports = [Report(id="stdin", language=args.lang, text=args.text)]
    for report in reports:
        pred = predict_report(model, ontology, emb, report)
        values = " ".join(f"{p:.6f}" for p in pred.probabilities)
        print(f"{report.id}\t{values}")
    return 0


def cmd_distill(args) -> int:
    cfg = build_config(args.config, args.set or [])
    if args.seed is not None:
        cfg["seed"] = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out_dir)

    ontology = _load_ontology(args)
    emb = _load_embeddings(args)
    corpus = read_corpus(args.corpus)
    tr, va, te = _split_from_config(corpus, cfg)

    def images(part):
        return make_image_features(part.label_matrix(), part.ids(),
                                   seed=cfg["seed"], dim=cfg["image_dim"],
                                   noise=cfg["image_noise"])

    result = train_vkd(vkd_config(cfg), args.mode, ontology, emb, tr, va,
                       images(tr), images(va), log=_log)
    _write_metrics(out_dir / f"{args.mode}_metrics.tsv", result.records)
    result.model.save(out_dir / f"{args.mode}_model.ckpt",
                      {"mode": args.mode, "seed": cfg["seed"]})

    scores = predict_image_proba(result.model, images(te))
    labels = te.label_matrix()
    p, r, f1 = prf1(scores.ravel(), labels.ravel())
    summary = {
        "mode": args.mode,
        "test_macro_auc": macro_auc(scores, labels),
        "precision": p, "recall": r, "f1": f1,
        "best_val_macro_auc": result.best_val_auc,
        "best_epoch": result.best_epoch,
    }
    (out_dir / f"{args.mode}_summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True), encoding="utf-8")

    print(_comparison_block(out_dir))
    return 0


def _comparison_block(out_dir: Path) -> str:
    lines = [f"{'mode':<14}{'auc':>8}{'precision':>11}{'recall':>8}{'f1':>8}"]
    for mode in MODES:
        path = out_dir / f"{mode}_summary.json"
        if not path.exists():
            continue
        s = json.loads(path.read_text(encoding="utf-8"))
        lines.append(f"{mode:<14}{s['test_macro_auc']:>8.4f}"
                     f"{s['precision']:>11.4f}{s['recall']:>8.4f}"
                     f"{s['f1']:>8.4f}")
    return "\n".join(lines)


def cmd_benchmark(args) -> int:
    ontology = _load_ontology(args)
    emb = _load_embeddings(args)
    corpus = read_corpus(args.corpus)
    model, _ = ClassifierModel.load(args.checkpoint)
    rate = benchmark_inference(model, ontology, emb, corpus,
                               repetitions=args.repetitions)
    print(f"samples_per_second\t{rate:.3f}")
    return 0


def cmd_plot_data(args) -> int:
    rows = []
    for run in args.runs:
        path = Path(run) / "summary.json"
        summary = json.loads(path.read_text(encoding="utf-8"))
        auc = summary.get("test_macro_auc", summary.get("best_val_macro_auc"))
        rows.append((summary["param_count"], auc, run))
    rows.sort()
    print("param_count\tmacro_auc\trun")
    for count, auc, run in rows:
        print(f"{count}\t{auc!r}\t{run}")
    return 0


def cmd_export_graph(args) -> int:
    ontology = _load_ontology(args)
    emb = _load_embeddings(args)
    corpus = read_corpus(args.corpus)
    report = corpus.by_id(args.report_id)
    graphs = build_graphs(ontology, emb,
                          type(corpus)(reports=(report,)),
                          _ablation_from_flags(args))
    g = graphs[0]
    if args.format == "dot":
        text = export_dot(g, ontology, omit_global_edges=args.omit_global_edges,
                          lang=report.language)
    else:
        text = graph_to_json(g)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    return 0


# -- parser wiring --------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="report-kg",
                     description="Ontology-grounded report graphs with "
                                 "graph-attention classification and "
                                 "cross-modal distillation.")
    parser.add_argument("--version", action="version",
                        version=f"report-kg {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("generate", help="render a synthetic labelled corpus")
    _add_data_options(p, embeddings=False)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--spec", metavar="F", help="generator spec JSON file")
    group.add_argument("--preset", choices=sorted(PRESETS),
                       default="single-concept",
                       help="built-in generator spec (default: single-concept)")
    p.add_argument("--n-reports", type=int, metavar="N",
                   help="number of base reports (default 200 for presets)",
                   default=None)
    p.add_argument("--languages", metavar="L1,L2",
                   help="comma-separated language codes, e.g. en,es")
    p.add_argument("--seed", type=int, metavar="N", default=None)
    p.add_argument("--out", metavar="F", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("build-graph", help="export graphs for every report")
    _add_data_options(p)
    p.add_argument("--corpus", metavar="F", required=True)
    p.add_argument("--out", metavar="DIR", required=True)
    _add_ablation_flags(p)
    p.add_argument("--omit-global-edges", action="store_true",
                   help="hide global-concept fan-out in DOT output")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="train the report classifier")
    _add_data_options(p)
    p.add_argument("--config", metavar="F", help="key=value config file")
    p.add_argument("--corpus", metavar="F", required=True)
    p.add_argument("--seed", type=int, metavar="N", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a corpus")
    _add_data_options(p)
    p.add_argument("--checkpoint", metavar="F", required=True)
    p.add_argument("--corpus", metavar="F", required=True)
    p.add_argument("--threshold", type=float, default=0.5, metavar="T")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("classify", help="probabilities for single reports")
    _add_data_options(p)
    p.add_argument("--checkpoint", metavar="F", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--corpus", metavar="F")
    group.add_argument("--text", metavar="STR")
    p.add_argument("--lang", default="en", metavar="L")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("distill", help="train the image branch, optionally "
                                       "with report distillation")
    _add_data_options(p)
    p.add_argument("--config", metavar="F")
    p.add_argument("--corpus", metavar="F", required=True)
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--seed", type=int, metavar="N", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", metavar="DIR", required=True)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("benchmark", help="measure end-to-end inference rate")
    _add_data_options(p)
    p.add_argument("--checkpoint", metavar="F", required=True)
    p.add_argument("--corpus", metavar="F", required=True)
    p.add_argument("--repetitions", type=int, default=3, metavar="N")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("plot-data", help="tabulate (param_count, macro_auc) "
                                         "rows from training runs")
    p.add_argument("--runs", nargs="+", metavar="DIR", required=True)
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("export-graph", help="export one report's graph")
    _add_data_options(p)
    p.add_argument("--corpus", metavar="F", required=True)
    p.add_argument("--report-id", metavar="ID", required=True)
    p.add_argument("--format", choices=("dot", "json"), default="dot")
    _add_ablation_flags(p)
    p.add_argument("--omit-global-edges", action="store_true")
    p.add_argument("--out", metavar="F")
    p.set_defaults(func=cmd_export_graph)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 1
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
