"""Command-line surface: featurize, train, detect, synth, eval, sweep.

Every subcommand is deterministic under its --seed and writes a manifest
next to its output (the exact parameters, the model file's SHA-256 when one
is involved, and library versions), so any run can be reproduced from the
manifest alone. Report-producing commands render matplotlib figures to PNG
files alongside the delimited output.

Exit codes: 0 success, 2 usage (bad flags, mismatched shapes), 3 data
quality, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__

logger = logging.getLogger("groupscan")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(path, command: str, args: argparse.Namespace,
                    model_path=None, extra: dict | None = None) -> None:
    import numpy
    import pandas
    import scipy

    params = {
        key: (str(value) if isinstance(value, Path) else value)
        for key, value in vars(args).items()
        if key not in ("func", "command") and not callable(value)
    }
    doc = {
        "command": command,
        "parameters": params,
        "model_sha256": None if model_path is None else _file_sha256(model_path),
        "versions": {
            "groupscan": __version__,
            "python": sys.version.split()[0],
            "numpy": numpy.__version__,
            "scipy": scipy.__version__,
            "pandas": pandas.__version__,
        },
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _sibling(out_path, suffix: str) -> Path:
    return Path(out_path).with_suffix(suffix)


# ---------------------------------------------------------------------------
# subcommands


def cmd_featurize(args) -> int:
    from .data import save_csv
    from .flowfeat import flows_to_batch, ingest_flows

    flows = ingest_flows(args.flows, strict=args.strict)
    with open(args.flows, "r", encoding="utf-8") as fh:
        n_lines = sum(1 for line in fh if line.strip())
    skipped = n_lines - len(flows)

    if flows:
        batch = flows_to_batch(flows, n_packets=args.n_packets,
                               first_direction=args.first_direction)
        save_csv(batch, args.out_csv)
    else:
        names = [f"p{i + 1}" for i in range(2 * args.n_packets)] + ["flow_id"]
        with open(args.out_csv, "w", encoding="utf-8") as fh:
            fh.write(",".join(names) + "\n")
    print(f"featurized {len(flows)} flows ({skipped} malformed lines skipped) "
          f"-> {args.out_csv}")
    _write_manifest(_sibling(args.out_csv, ".manifest.json"), "featurize", args)
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import load_csv
    from .gmm import EMConfig
    from .nullmodel import save_model, train_null

    batch = load_csv(args.train_csv)
    config = EMConfig(max_components=args.max_components,
                      restarts=args.restarts, seed=args.seed)
    mi_samples = 10**5 if args.fast else args.mi_samples
    model = train_null(batch, config, mi_samples=mi_samples)
    save_model(model, args.model_out)

    for j, name in enumerate(batch.feature_names):
        print(f"{name}: {model.univariate[j].n_components} component(s)")
    if model.dimension > 1:
        import numpy as np
        off = model.mi[~np.eye(model.dimension, dtype=bool)]
        print(f"pairwise MI: max {off.max():.4f}, mean {off.mean():.4f}")
    print(f"model ({model.dimension} features, {model.n_train} training rows) "
          f"-> {args.model_out}")
    _write_manifest(_sibling(args.model_out, ".manifest.json"), "train", args,
                    model_path=args.model_out)
    return EXIT_OK


METHOD_TAGS = {
    "proposed": "proposed",
    "independence": "independence_tests",
    "single_bn": "single_bayes_net",
    "gmm": "gmm_likelihood",
}


def _detect_report(args, model, test):
    from .baselines import BaselineKind, detect_with_baseline, gmm_likelihood_rank
    from .data import load_csv
    from .gmm import EMConfig
    from .search import DetectionReport, SearchConfig, detect_all

    if args.method == "gmm":
        if args.train_csv is None:
            raise ValueError("method 'gmm' needs --train-csv (it refits on raw data)")
        train = load_csv(args.train_csv)
        ranking = gmm_likelihood_rank(
            train, test, EMConfig(max_components=args.max_components,
                                  restarts=args.restarts, seed=args.seed))
        return DetectionReport(clusters=(), ranked_samples=tuple(ranking))

    config = SearchConfig(
        k_max=args.k_max,
        beam_width=args.beam_width,
        max_clusters=args.max_clusters,
        min_cluster_size=args.min_cluster_size,
        score_threshold=args.score_threshold,
        alpha=args.alpha,
        recalibrate=not args.no_recalibrate,
    )
    if args.method == "proposed":
        return detect_all(model, test, config)
    return detect_with_baseline(BaselineKind(METHOD_TAGS[args.method]),
                                model, test, config)


def cmd_detect(args) -> int:
    import pandas as pd

    from .data import load_csv
    from .nullmodel import load_model
    from .plots import plot_detection
    from .search import save_report

    model = load_model(args.model)
    test = load_csv(args.test_csv)
    test.require_finite()
    report = _detect_report(args, model, test)
    save_report(report, args.report_out)

    membership = {}
    for c_idx, cluster in enumerate(report.clusters):
        for i in cluster.samples:
            membership[i] = c_idx
    rows = {
        "rank": range(len(report.ranked_samples)),
        "sample": list(report.ranked_samples),
        "cluster": [membership.get(i, -1) for i in report.ranked_samples],
    }
    if test.ids is not None:
        rows["flow_id"] = [test.ids[i] for i in report.ranked_samples]
    if test.labels is not None:
        rows["label"] = [test.labels[i] for i in report.ranked_samples]
    pd.DataFrame(rows).to_csv(_sibling(args.report_out, ".csv"), index=False)
    plot_detection(test, report, _sibling(args.report_out, ".png"))

    print(f"{len(report.clusters)} cluster(s) over {test.n_samples} samples")
    for c_idx, cluster in enumerate(report.clusters):
        feats = ", ".join(test.feature_names[j] for j in cluster.features)
        print(f"  cluster {c_idx}: {len(cluster.samples)} samples on [{feats}], "
              f"log score {cluster.log_score:.2f}")
    print(f"report -> {args.report_out}")
    _write_manifest(_sibling(args.report_out, ".manifest.json"), "detect", args,
                    model_path=args.model)
    return EXIT_OK


def _load_spec(path):
    from .errors import DataQualityError
    from .synthgen import SyntheticSpec

    if path is None:
        return SyntheticSpec()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        for key in ("cluster_fractions", "informative_features"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return SyntheticSpec(**doc)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise DataQualityError(f"cannot read spec {path}: {exc}") from exc


def cmd_synth(args) -> int:
    from dataclasses import asdict, replace

    from .data import save_csv
    from .synthgen import generate

    spec = _load_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = generate(spec)
    save_csv(train, out / "train.csv")
    save_csv(test, out / "test.csv")
    print(f"train: {train.n_samples} rows, test: {test.n_samples} rows "
          f"({sum(spec.cluster_sizes)} anomalous) -> {out}")
    _write_manifest(out / "manifest.json", "synth", args,
                    extra={"spec": asdict(spec)})
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np
    import pandas as pd

    from .data import load_csv
    from .errors import DataQualityError
    from .evalkit import roc_auc, top_k_precision
    from .plots import plot_roc
    from .search import load_report
    from .synthgen import is_anomalous

    test = load_csv(args.test_csv)
    if test.labels is None:
        raise DataQualityError(f"{args.test_csv} has no label column")
    truth = is_anomalous(test.labels)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rankings = {}
    rows = []
    for path in args.reports:
        name = Path(path).stem
        report = load_report(path)
        ranking = np.asarray(report.ranked_samples)
        if not np.array_equal(np.sort(ranking), np.arange(test.n_samples)):
            raise DataQualityError(
                f"report {path} ranks {ranking.size} samples; the test batch "
                f"has {test.n_samples}")
        rankings[name] = ranking
        rows.append({
            "report": name,
            "auc": roc_auc(ranking, truth),
            f"top_{args.top_k}_precision": top_k_precision(ranking, truth,
                                                           k=args.top_k),
        })

    table = pd.DataFrame(rows)
    table.to_csv(out / "metrics.csv", index=False)
    plot_roc(rankings, truth, out / "roc.png")
    print(table.to_string(index=False))
    print(f"metrics -> {out / 'metrics.csv'}")
    _write_manifest(out / "manifest.json", "eval", args)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .data import load_csv
    from .errors import DataQualityError
    from .evalkit import METHODS, run_sweep, write_curve_data
    from .gmm import EMConfig
    from .plots import plot_auc_curves
    from .search import SearchConfig

    methods = []
    for method in args.methods:
        tag = METHOD_TAGS.get(method, method)
        if tag not in METHODS:
            raise ValueError(
                f"unknown method {method!r}; pick from {sorted(METHOD_TAGS)}")
        methods.append(tag)
    if args.data is not None:
        source = load_csv(args.data)
        if source.labels is None:
            raise DataQualityError(f"{args.data} has no label column")
    else:
        source = _load_spec(args.spec)

    result = run_sweep(
        source,
        methods=tuple(methods),
        k_max_values=tuple(args.k_max_values),
        seeds=range(args.seeds),
        search_config=SearchConfig(beam_width=args.beam_width,
                                   max_clusters=args.max_clusters),
        em_config=EMConfig(max_components=args.max_components,
                           restarts=args.restarts),
        mi_samples=10**5 if args.fast else args.mi_samples,
        top_k=args.top_k,
    )

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result.records_frame().to_csv(out / "records.csv", index=False)
    aggregate = result.aggregate_frame()
    aggregate.to_csv(out / "aggregate.csv", index=False)
    write_curve_data(result, out)
    plot_auc_curves(result, out / "auc_curves.png")
    print(aggregate.to_string(index=False))
    print(f"sweep results -> {out}")
    _write_manifest(out / "manifest.json", "sweep", args)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupscan",
        description="Group anomaly detection on Gaussian-mixture nulls.")
    parser.add_argument("--version", action="version",
                        version=f"groupscan {__version__}")
    parser.add_argument("--threads", type=int, default=1,
                        help="cap BLAS/OpenMP worker threads (default 1)")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="debug-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="JSONL flows -> feature CSV")
    p.add_argument("flows", help="input JSONL, one flow per line")
    p.add_argument("out_csv", help="output CSV path")
    p.add_argument("--n-packets", type=int, default=10,
                   help="packets per flow to keep (2N feature slots)")
    p.add_argument("--first-direction", choices=("cs", "sc"), default="cs",
                   help="direction assigned to slot 1")
    p.add_argument("--strict", action="store_true",
                   help="fail on the first malformed row instead of skipping")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="fit the null model from clean data")
    p.add_argument("train_csv", help="training CSV (label column ignored)")
    p.add_argument("model_out", help="output model JSON path")
    p.add_argument("--max-components", type=int, default=10,
                   help="mixture order cap per feature (default 10)")
    p.add_argument("--restarts", type=int, default=5,
                   help="EM restarts per order (default 5)")
    p.add_argument("--mi-samples", type=int, default=10**6,
                   help="Monte-Carlo draws per MI estimate (default 1e6)")
    p.add_argument("--fast", action="store_true",
                   help="drop MI sampling to 1e5 draws")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="scan a batch for anomalous clusters")
    p.add_argument("model", help="trained model JSON")
    p.add_argument("test_csv", help="batch to scan")
    p.add_argument("report_out",
                   help="report JSON path; ranking CSV and overview PNG are "
                        "written alongside")
    p.add_argument("--method", default="proposed",
                   choices=("proposed", "independence", "single_bn", "gmm"))
    p.add_argument("--k-max", type=int, default=6,
                   help="deepest feature-subset order (default 6)")
    p.add_argument("--beam-width", type=int, default=500,
                   help="beam width per order (default 500)")
    p.add_argument("--max-clusters", type=int, default=None)
    p.add_argument("--min-cluster-size", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.05,
                   help="membership boundary level (default 0.05)")
    p.add_argument("--score-threshold", type=float, default=None,
                   help="stop when the best log score exceeds this")
    p.add_argument("--no-recalibrate", action="store_true",
                   help="skip robust batch re-standardization")
    p.add_argument("--train-csv", default=None,
                   help="raw training CSV (required by --method gmm)")
    p.add_argument("--max-components", type=int, default=10,
                   help="mixture order cap for --method gmm")
    p.add_argument("--restarts", type=int, default=5,
                   help="EM restarts for --method gmm")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("out_dir", help="directory for train.csv / test.csv")
    p.add_argument("--spec", default=None,
                   help="JSON file of generator parameters (defaults used "
                        "when omitted)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the spec's seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score detection reports against labels")
    p.add_argument("test_csv", help="labeled test CSV")
    p.add_argument("out_dir", help="directory for metrics.csv / roc.png")
    p.add_argument("--report", dest="reports", action="append", required=True,
                   help="report JSON to score (repeatable)")
    p.add_argument("--top-k", type=int, default=100)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep",
                       help="methods x max-order evaluation grid over seeds")
    p.add_argument("out_dir", help="directory for tables, curve data, figures")
    p.add_argument("--spec", default=None,
                   help="synthetic generator spec JSON (defaults when omitted)")
    p.add_argument("--data", default=None,
                   help="labeled CSV to resplit instead of synthetic data")
    p.add_argument("--methods", nargs="+",
                   default=["proposed", "independence", "single_bn", "gmm"])
    p.add_argument("--k-max-values", type=int, nargs="+", default=[2, 3, 6])
    p.add_argument("--seeds", type=int, default=10,
                   help="number of trials per cell (default 10)")
    p.add_argument("--beam-width", type=int, default=500)
    p.add_argument("--max-clusters", type=int, default=10,
                   help="extraction cap per run; the ranking tail covers the "
                        "rest of the batch (default 10)")
    p.add_argument("--max-components", type=int, default=10)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--mi-samples", type=int, default=10**6)
    p.add_argument("--fast", action="store_true",
                   help="drop MI sampling to 1e5 draws")
    p.add_argument("--top-k", type=int, default=100)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    threads = str(max(1, args.threads))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")

    from .errors import DataQualityError, GroupScanError, NumericalError

    if args.command == "sweep" and args.spec is not None and args.data is not None:
        parser.error("--spec and --data are mutually exclusive")
    try:
        return args.func(args)
    except DataQualityError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERICAL
    except GroupScanError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
