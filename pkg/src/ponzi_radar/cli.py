"""Command-line surface: one subcommand per pipeline stage.

    synth    generate a labeled synthetic transaction log
    validate check a log for dangling refs, double spends, negative fees
    cluster  dump the multi-input clustering (optionally expand seed labels)
    features per-cluster feature table
    dataset  assemble a labeled dataset from a log plus a labels file
    train    fit a forest or bayes model and save it
    cv       stratified cross-validation report
    apply    score a dataset with a frozen model
    rank     feature relevance rankings plus the consensus table

Exit codes: 0 success, 1 usage error, 2 data error. All randomness derives
from --seed; machine-readable outputs never contain wall-clock timestamps.
Set PONZI_RADAR_LOG=debug|info|warning for logging verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import random
import sys
from typing import IO

from . import chain, clustering, dataset as ds, evaluate, features, learn, rank, synth
from .errors import PonziRadarError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out_stream(path: str | None) -> IO[str]:
    if path is None or path == "-":
        return sys.stdout
    return open(path, "w", encoding="utf-8", newline="")


def _open_in(path: str) -> IO[str]:
    if path == "-":
        return sys.stdin
    return open(path, "r", encoding="utf-8")


def _close(fp: IO[str]) -> None:
    if fp not in (sys.stdout, sys.stdin):
        fp.close()


def _load_log(path: str) -> chain.TxLog:
    with _open_in(path) as fp:
        return chain.parse_tx_log(fp)


def _cost(text: str) -> learn.CostMatrix:
    return learn.CostMatrix.parse(text)


def _cmd_synth(args) -> int:
    params = synth.SynthParams(
        n_ponzi=args.ponzi,
        n_background=args.background,
        seed=args.seed,
        hard_mode=args.hard,
    )
    log, labels = synth.generate(params)
    out = _out_stream(args.out)
    chain.write_tx_log(log, out)
    _close(out)
    with open(args.labels, "w", encoding="utf-8", newline="") as fp:
        synth.write_labels(labels, fp)
    logger.info("generated %d transactions, %d labeled clusters", len(log), len(labels))
    return EXIT_OK


def _cmd_validate(args) -> int:
    log = _load_log(args.log)
    report = chain.validate_tx_log(log)
    print(f"transactions: {len(log)}")
    print(f"dangling references: {len(report.dangling)}")
    for item in report.dangling:
        print(f"  {item.txid} input {item.input_index} -> "
              f"{item.prev.txid}:{item.prev.index}")
    print(f"double spends: {len(report.double_spends)}")
    for spend in report.double_spends:
        print(f"  {spend.prev.txid}:{spend.prev.index} spent by "
              + ", ".join(spend.spenders))
    print(f"negative fees: {len(report.negative_fees)}")
    for txid, fee in report.negative_fees:
        print(f"  {txid}: {fee}")
    print(f"ok: {str(report.ok).lower()}")
    return EXIT_OK if report.ok else EXIT_DATA


def _cmd_cluster(args) -> int:
    log = _load_log(args.log)
    clusters = clustering.build_clusters(log)
    out = _out_stream(args.out)
    clustering.write_clusters(clusters, out)
    _close(out)
    if args.seeds:
        with _open_in(args.seeds) as fp:
            seeds = clustering.read_seeds(fp)
        expansion = clustering.expand_seeds(clusters, seeds)
        for label in sorted(expansion.by_label):
            sizes = [len(clusters.members[i]) for i in expansion.by_label[label]]
            print(f"{label}: clusters {list(expansion.by_label[label])} sizes {sizes}")
        for label, addr in expansion.unresolved:
            print(f"unresolved: {label} {addr}")
        for idx, labels in expansion.collisions:
            print(f"collision: cluster {idx} shared by {', '.join(labels)}")
    return EXIT_OK


def _cmd_features(args) -> int:
    log = _load_log(args.log)
    clusters = clustering.build_clusters(log)
    table = features.cluster_feature_table(log, clusters)
    out = _out_stream(args.out)
    ds.write_features_csv(dict(enumerate(table)), out)
    _close(out)
    return EXIT_OK


def _ponzi_cluster_map(index_of: dict[str, int], labels: dict[str, str]) -> dict[int, str]:
    ponzi: dict[int, str] = {}
    for addr, label in labels.items():
        if label != ds.LABEL_PONZI:
            continue
        ci = index_of.get(addr)
        if ci is None:
            logger.warning("label seed address not in log: %s", addr)
            continue
        ponzi[ci] = f"{ponzi[ci]}+{addr}" if ci in ponzi else addr
    return ponzi


def _cmd_dataset(args) -> int:
    with _open_in(args.labels) as fp:
        labels = synth.read_labels(fp)
    if args.log:
        log = _load_log(args.log)
        clusters = clustering.build_clusters(log)
        table = dict(enumerate(features.cluster_feature_table(log, clusters)))
        index_of = clusters.index_of
    elif args.features and args.clusters:
        with _open_in(args.features) as fp:
            table = ds.read_features_csv(fp)
        with _open_in(args.clusters) as fp:
            index_of = clustering.read_clusters(fp)
    else:
        raise PonziRadarError("dataset needs --log, or both --features and --clusters")
    ponzi = _ponzi_cluster_map(index_of, labels)
    if args.sample is not None:
        candidates = sorted(set(table) - set(ponzi))
        if args.sample > len(candidates):
            raise PonziRadarError(
                f"cannot sample {args.sample} background clusters "
                f"from {len(candidates)}"
            )
        keep = set(random.Random(args.seed).sample(candidates, args.sample))
        table = {ci: fv for ci, fv in table.items() if ci in ponzi or ci in keep}
    built = ds.assemble(table, ponzi)
    out = _out_stream(args.out)
    ds.write_csv(built, out)
    _close(out)
    logger.info("dataset: %d P, %d nP", built.n_ponzi, built.n_other)
    return EXIT_OK


def _learner_spec(args) -> learn.LearnerSpec:
    reweight = _cost(args.reweight_cost) if getattr(args, "reweight_cost", None) else None
    return learn.LearnerSpec(kind=args.learner, n_trees=args.trees, reweight=reweight)


def _cmd_train(args) -> int:
    with _open_in(args.dataset) as fp:
        data = ds.read_csv(fp)
    model = learn.train_model(data, _learner_spec(args), args.seed, threads=args.threads)
    out = _out_stream(args.out)
    learn.save_model(model, out)
    _close(out)
    return EXIT_OK


def _setting(args, extra: str = "") -> str:
    parts = [
        args.learner,
        f"t{args.trees}" if args.learner == "forest" else "",
        f"cm{args.cost.replace(':', '_')}",
        f"r{args.ratio:g}" if getattr(args, "ratio", 0) else "r0",
        f"k{args.k}" if hasattr(args, "k") else "",
        f"seed{args.seed}",
        extra,
    ]
    return "-".join(p for p in parts if p)


def _cmd_cv(args) -> int:
    with _open_in(args.dataset) as fp:
        data = ds.read_csv(fp)
    cost = _cost(args.cost)
    result = evaluate.cross_validate(
        data,
        _learner_spec(args),
        cost,
        k=args.k,
        seed=args.seed,
        sampling_ratio=args.ratio if args.ratio else None,
        threads=args.threads,
    )
    rows = [evaluate.report_row(_setting(args), result.confusion, result.metrics)]
    for i, fold in enumerate(result.folds):
        fold_metrics = evaluate.metrics_from_confusion(fold.confusion)
        if len(set(fold.labels)) == 2:
            fold_metrics = evaluate.MetricsReport(
                fold_metrics.accuracy, fold_metrics.recall, fold_metrics.specificity,
                fold_metrics.precision, fold_metrics.f_measure, fold_metrics.g_mean,
                evaluate.roc_auc(fold.scores, fold.labels),
            )
        rows.append(evaluate.report_row(
            _setting(args, f"fold{i}"), fold.confusion, fold_metrics))
    out = _out_stream(args.out)
    evaluate.write_report_csv(rows, out)
    _close(out)
    if args.out and args.out != "-":
        print(evaluate.format_report_table(rows[:1]))
    return EXIT_OK


def _cmd_apply(args) -> int:
    with _open_in(args.model) as fp:
        model = learn.load_model(fp)
    with _open_in(args.dataset) as fp:
        data = ds.read_csv(fp)
    cost = _cost(args.cost)
    result = evaluate.apply_model(model, cost, data)
    out = _out_stream(args.out)
    out.write("id,label,score,predicted\n")
    for pr in result.predictions:
        out.write(f"{pr.id},{pr.label},{format(pr.score, '.17g')},{pr.predicted}\n")
    _close(out)
    cm = result.confusion
    print(f"tp={cm.tp} fn={cm.fn} fp={cm.fp} tn={cm.tn}")
    if result.metrics is not None:
        row = evaluate.report_row(f"apply-cm{args.cost.replace(':', '_')}",
                                  cm, result.metrics)
        print(evaluate.format_report_table([row]))
    return EXIT_OK


def _cmd_rank(args) -> int:
    with _open_in(args.dataset) as fp:
        data = ds.read_csv(fp)
    rankings = rank.all_rankings(
        data, bins=args.bins, relieff_k=args.relieff_k, seed=args.seed
    )
    consensus = rank.consensus_rank(rankings, top_n=args.top)
    out = _out_stream(args.out)
    out.write("method,feature,score,rank\n")
    for ranking in rankings:
        for pos, (name, score) in enumerate(ranking.entries, start=1):
            out.write(f"{ranking.method},{name},{format(score, '.17g')},{pos}\n")
    for pos, (name, votes, _) in enumerate(consensus, start=1):
        out.write(f"consensus,{name},{votes},{pos}\n")
    _close(out)
    print(f"consensus (top {args.top} occurrences across {len(rankings)} rankings):")
    for name, votes, mean_rank in consensus[: args.top]:
        print(f"  {name}: in top-{args.top} of {votes}/{len(rankings)}, "
              f"mean rank {mean_rank:.1f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ponzi-radar", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic log")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--ponzi", type=int, default=30)
    p.add_argument("--background", type=int, default=6000)
    p.add_argument("--hard", action="store_true", help="overlap the class distributions")
    p.add_argument("--labels", default="labels.csv", help="labels output path")
    p.add_argument("-o", "--out", default=None, help="log output path (default stdout)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("validate", help="validate a transaction log")
    p.add_argument("log")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("cluster", help="multi-input address clustering")
    p.add_argument("log")
    p.add_argument("--seeds", default=None, help="label,address CSV to expand")
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("features", help="per-cluster feature table")
    p.add_argument("log")
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("dataset", help="assemble a labeled dataset")
    p.add_argument("--log", default=None, help="transaction log path")
    p.add_argument("--features", default=None, help="precomputed feature table")
    p.add_argument("--clusters", default=None, help="cluster dump for --features")
    p.add_argument("--labels", required=True)
    p.add_argument("--sample", type=int, default=None,
                   help="subsample this many background clusters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("train", help="train and save a model")
    p.add_argument("dataset")
    p.add_argument("--learner", choices=["forest", "bayes"], default="forest")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--reweight-cost", default=None,
                   help="fn:fp, train with cost-proportional instance weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    p.add_argument("dataset")
    p.add_argument("--learner", choices=["forest", "bayes"], default="forest")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--cost", default="1:1", help="false-negative:false-positive costs")
    p.add_argument("--ratio", type=float, default=0,
                   help="undersampling ratio for training folds (0 = off)")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--reweight-cost", default=None)
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("apply", help="apply a frozen model to a dataset")
    p.add_argument("dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--cost", default="1:1")
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=_cmd_apply)

    p = sub.add_parser("rank", help="feature relevance rankings")
    p.add_argument("dataset")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--top", type=int, default=8)
    p.add_argument("--relieff-k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=_cmd_rank)

    return parser


def _configure_logging() -> None:
    level = os.environ.get("PONZI_RADAR_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PonziRadarError, OSError, ValueError) as exc:
        print(f"ponzi-radar: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
