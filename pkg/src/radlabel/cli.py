"""Command-line surface: gen, label, train, predict, eval, bench.

Config precedence is CLI flag > --config file > built-in defaults, and every
artifact carries the effective configuration it was produced with (embedded
for JSON outputs, a .run.json sidecar for JSONL outputs). Exit codes:
0 success, 2 usage/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import rules as rules_mod
from . import trainer as trainer_mod
from .errors import InputError, NumericalError, RadlabelError
from .ioutil import atomic_write_text, read_jsonl, write_jsonl
from .net.kernels import active_backend
from .net.params import DropoutConfig, ModelDims


def _jsonify(value):
    """JSON-safe copy: numpy scalars to python, infinities to None."""
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonify(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _write_json(path: str | None, payload: dict) -> None:
    text = json.dumps(_jsonify(payload), indent=2, ensure_ascii=False) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(path, text)


def _write_sidecar(out_path: str, effective: dict) -> None:
    _write_json(str(out_path) + ".run.json", effective)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    if not Path(path).exists():
        raise InputError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return data


def _pick(cli_value, config: dict, key: str, default):
    """CLI flag > config file > default."""
    if cli_value is not None:
        return cli_value
    if key in config:
        return config[key]
    return default


def _default_parallel(args_parallel, config) -> int:
    return int(_pick(args_parallel, config, "parallel", os.cpu_count() or 1))


# ---------------------------------------------------------------------------
# Teacher-labeling worker (module level so it pickles for multiprocessing)
# ---------------------------------------------------------------------------

_WORKER_STATE: dict = {}


def _label_worker_init(lexicon_path: str, rules_path: str) -> None:
    _WORKER_STATE["lexicon"] = rules_mod.load_lexicon(lexicon_path)
    _WORKER_STATE["rules"] = rules_mod.load_negation_rules(rules_path)


def _label_worker(record: dict) -> dict:
    report = corpus_mod.Report(**record)
    return rules_mod.label_record(
        report, _WORKER_STATE["lexicon"], _WORKER_STATE["rules"]
    )


def _predict_worker_init(checkpoint_path: str, threshold: float) -> None:
    _WORKER_STATE["checkpoint"] = trainer_mod.Checkpoint.load(checkpoint_path)
    _WORKER_STATE["threshold"] = threshold


def _predict_worker(records: list[dict]) -> list[dict]:
    checkpoint = _WORKER_STATE["checkpoint"]
    reports = [corpus_mod.Report(**r) for r in records]
    scored = trainer_mod.label_corpus(
        checkpoint, reports, threshold=_WORKER_STATE["threshold"], sort="none"
    )
    return [s.to_record() for s in scored]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen(args, config: dict) -> int:
    spec_path = _pick(args.spec, config, "synthetic_spec", None)
    if spec_path is None:
        spec_path = str(Path(str(rules_mod.default_lexicon_path())).parent / "synthetic_spec.json")
    if not Path(spec_path).exists():
        raise InputError(f"synthetic spec not found: {spec_path}")
    with open(spec_path, "r", encoding="utf-8") as handle:
        try:
            spec_data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise InputError(f"{spec_path}: invalid JSON: {exc}") from exc
    seed = _pick(args.seed, config, "seed", None)
    if seed is not None:
        spec_data["seed"] = int(seed)
    spec = corpus_mod.SyntheticSpec.from_dict(spec_data)
    reports = corpus_mod.generate_synthetic(spec)
    write_jsonl(args.out, (r.to_record() for r in reports))
    _write_sidecar(args.out, {
        "command": "gen",
        "spec_path": str(spec_path),
        "seed": spec.seed,
        "n_reports": spec.n_reports,
    })
    return 0


def cmd_label(args, config: dict) -> int:
    lexicon_path = str(_pick(args.lexicon, config, "lexicon", rules_mod.default_lexicon_path()))
    rules_path = str(_pick(args.rules, config, "rules", rules_mod.default_negation_rules_path()))
    parallel = _default_parallel(args.parallel, config)
    reports = corpus_mod.load_corpus(args.corpus, format=args.format)
    if not reports:
        raise InputError(f"corpus {args.corpus} is empty")
    records = [r.to_record() for r in reports]

    if parallel > 1 and len(records) > 1:
        with ProcessPoolExecutor(
            max_workers=parallel,
            initializer=_label_worker_init,
            initargs=(lexicon_path, rules_path),
        ) as pool:
            chunk = max(1, len(records) // (parallel * 4))
            labeled = list(pool.map(_label_worker, records, chunksize=chunk))
    else:
        _label_worker_init(lexicon_path, rules_path)
        labeled = [_label_worker(r) for r in records]

    write_jsonl(args.out, labeled)
    _write_sidecar(args.out, {
        "command": "label",
        "corpus": str(args.corpus),
        "lexicon": lexicon_path,
        "rules": rules_path,
        "parallel": parallel,
    })
    return 0


def _train_config_from_args(args, config: dict) -> trainer_mod.TrainConfig:
    section = config.get("train", {})
    defaults = trainer_mod.TrainConfig()

    def pick(flag, key, default):
        return _pick(flag, section, key, default)

    dims = ModelDims(
        vocab_size=int(pick(args.vocab_size, "vocab_size", defaults.dims.vocab_size)),
        embed_dim=int(pick(args.embed_dim, "embed_dim", defaults.dims.embed_dim)),
        hidden_units=int(pick(args.hidden_units, "hidden_units", defaults.dims.hidden_units)),
        max_len=int(pick(args.max_len, "max_len", defaults.dims.max_len)),
    )
    seed = int(_pick(args.seed, config, "seed", defaults.seed))
    dropout = DropoutConfig(
        spatial_rate=float(pick(args.spatial_dropout, "spatial_dropout", defaults.dropout.spatial_rate)),
        recurrent_rate=float(pick(args.recurrent_dropout, "recurrent_dropout", defaults.dropout.recurrent_rate)),
        seed=seed,
    )
    return trainer_mod.TrainConfig(
        batch_size=int(pick(args.batch_size, "batch_size", defaults.batch_size)),
        max_epochs=int(pick(args.max_epochs, "max_epochs", defaults.max_epochs)),
        patience=int(pick(args.patience, "patience", defaults.patience)),
        validation_fraction=float(
            pick(args.validation_fraction, "validation_fraction", defaults.validation_fraction)
        ),
        lr=float(pick(args.lr, "lr", defaults.lr)),
        beta1=float(pick(args.beta1, "beta1", defaults.beta1)),
        beta2=float(pick(args.beta2, "beta2", defaults.beta2)),
        eps=float(pick(args.eps, "eps", defaults.eps)),
        grad_clip=pick(args.grad_clip, "grad_clip", defaults.grad_clip),
        seed=seed,
        dropout=dropout,
        dims=dims,
    )


def load_rule_labels(path: str | Path) -> dict[str, list[int]]:
    labels: dict[str, list[int]] = {}
    for lineno, record in read_jsonl(path):
        if "id" not in record or "sentence_labels" not in record:
            raise InputError(f"{path}: line {lineno}: not a rule-label record")
        labels[record["id"]] = list(record["sentence_labels"])
    if not labels:
        raise InputError(f"{path}: no rule labels")
    return labels


def cmd_train(args, config: dict) -> int:
    train_config = _train_config_from_args(args, config)
    reports = corpus_mod.load_corpus(args.corpus, format=args.format)
    if not reports:
        raise InputError(f"corpus {args.corpus} is empty")
    rule_labels = load_rule_labels(args.rule_labels)

    vocab = trainer_mod.build_training_vocabulary(reports, train_config)
    dataset = trainer_mod.make_training_set(
        reports,
        rule_labels,
        vocab,
        train_config.dims.max_len,
        train_config.seed,
        train_config.validation_fraction,
    )
    log = (lambda msg: print(msg, file=sys.stderr)) if not args.quiet else None
    checkpoint, history = trainer_mod.train(
        dataset.train, dataset.val, train_config, vocab, log=log
    )
    checkpoint.save(args.out)
    if args.history:
        atomic_write_text(args.history, history.to_csv())
    if not args.quiet:
        best = history.rows[history.best_epoch - 1]
        print(
            f"trained {len(history.rows)} epochs (backend={active_backend()}); "
            f"best epoch {history.best_epoch}: val_loss={best.val_loss:.4f} "
            f"val_acc={best.val_accuracy:.4f}",
            file=sys.stderr,
        )
    return 0


_SORT_ALIASES = {"uncertainty": "uncertainty_desc", "score": "score_desc"}


def cmd_predict(args, config: dict) -> int:
    threshold = float(_pick(args.threshold, config, "threshold", 0.5))
    sort = _SORT_ALIASES.get(args.sort, args.sort)
    parallel = _default_parallel(args.parallel, config)
    reports = corpus_mod.load_corpus(args.corpus, format=args.format)
    if not reports:
        raise InputError(f"corpus {args.corpus} is empty")

    if parallel > 1 and len(reports) > parallel:
        records = [r.to_record() for r in reports]
        slabs = [records[i::parallel] for i in range(parallel)]
        with ProcessPoolExecutor(
            max_workers=parallel,
            initializer=_predict_worker_init,
            initargs=(args.checkpoint, threshold),
        ) as pool:
            slab_results = list(pool.map(_predict_worker, slabs))
        by_id = {rec["id"]: rec for slab in slab_results for rec in slab}
        scored_records = [by_id[r.id] for r in reports]
        scored = [
            trainer_mod.LabeledScore(
                report_id=rec["id"],
                score=rec["score"],
                hard_label=rec["hard_label"],
                sentence_scores=rec["sentence_scores"],
            )
            for rec in scored_records
        ]
        scored = trainer_mod.sort_labeled(scored, sort)
    else:
        checkpoint = trainer_mod.Checkpoint.load(args.checkpoint)
        scored = trainer_mod.label_corpus(checkpoint, reports, threshold, sort)

    write_jsonl(args.out, (s.to_record() for s in scored))
    _write_sidecar(args.out, {
        "command": "predict",
        "checkpoint": str(args.checkpoint),
        "corpus": str(args.corpus),
        "threshold": threshold,
        "sort": sort,
        "parallel": parallel,
    })
    return 0


def _read_predictions(path: str | Path) -> dict[str, float]:
    scores: dict[str, float] = {}
    for lineno, record in read_jsonl(path):
        if "id" not in record or "score" not in record:
            raise InputError(f"{path}: line {lineno}: not a prediction record")
        scores[record["id"]] = float(record["score"])
    if not scores:
        raise InputError(f"{path}: no predictions")
    return scores


def cmd_eval(args, config: dict) -> int:
    threshold = float(_pick(args.threshold, config, "threshold", 0.5))
    predictions = _read_predictions(args.predictions)
    reports = corpus_mod.load_corpus(args.gold, format=args.format)
    gold: dict[str, int] = {}
    missing_gold = [r.id for r in reports if r.gold_label is None]
    if missing_gold:
        raise InputError(
            f"{args.gold}: reports without gold_label: {missing_gold[:10]}"
        )
    for report in reports:
        gold[report.id] = int(report.gold_label)

    missing = sorted(set(gold) - set(predictions))
    if missing:
        raise InputError(f"predictions missing for ids: {missing[:10]}")

    pairs = [(predictions[i], gold[i]) for i in sorted(gold)]
    conf = metrics_mod.confusion(pairs, threshold)
    sensitivity, specificity = metrics_mod.sens_spec(conf)
    curve = metrics_mod.roc(pairs)
    calib = metrics_mod.calibration(pairs, n_bins=args.bins)

    payload: dict = {
        "confusion": {"tp": conf.tp, "fp": conf.fp, "tn": conf.tn, "fn": conf.fn},
        "sensitivity": sensitivity,
        "specificity": specificity,
        "auc": curve.auc,
        "ece": calib["ece"],
        "calibration_bins": calib["bins"],
        "roc_points": [
            {"threshold": t, "tpr": tpr, "fpr": fpr} for t, tpr, fpr in curve.points
        ],
        "effective_config": {
            "command": "eval",
            "predictions": str(args.predictions),
            "gold": str(args.gold),
            "threshold": threshold,
            "bins": args.bins,
        },
    }
    if args.rule_labels:
        rule_report_labels = {
            record["id"]: int(record["report_label"])
            for _, record in read_jsonl(args.rule_labels)
        }
        payload["comparison"] = metrics_mod.compare_operating_point(
            predictions, rule_report_labels, gold
        )
    _write_json(args.out, payload)
    if args.roc_csv:
        atomic_write_text(args.roc_csv, curve.to_csv())
    return 0


def cmd_bench(args, config: dict) -> int:
    reports = corpus_mod.load_corpus(args.corpus, format=args.format)
    if not reports:
        raise InputError(f"corpus {args.corpus} is empty")
    parallel = _default_parallel(args.parallel, config)

    if args.labeler == "rules":
        lexicon = rules_mod.load_lexicon(
            _pick(args.lexicon, config, "lexicon", rules_mod.default_lexicon_path())
        )
        rules = rules_mod.load_negation_rules(
            _pick(args.rules, config, "rules", rules_mod.default_negation_rules_path())
        )

        def run() -> None:
            for report in reports:
                rules_mod.label_report(report, lexicon, rules)

    else:
        if not args.checkpoint:
            raise InputError("--labeler model requires --checkpoint")
        checkpoint = trainer_mod.Checkpoint.load(args.checkpoint)

        def run() -> None:
            trainer_mod.label_corpus(checkpoint, reports, sort="none")

    result = metrics_mod.bench_throughput(
        run, len(reports), repetitions=args.reps, parallelism=1
    )
    result["labeler"] = args.labeler
    result["kernel_backend"] = active_backend() if args.labeler == "model" else None
    result["effective_config"] = {
        "command": "bench",
        "corpus": str(args.corpus),
        "labeler": args.labeler,
        "repetitions": args.reps,
        "parallel": parallel,
    }
    _write_json(args.out, result)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global RNG seed")
    common.add_argument("--parallel", type=int, default=None, help="worker processes")
    common.add_argument("--json-errors", action="store_true", help="machine-readable errors on stderr")
    common.add_argument("--config", default=None, help="JSON config file")

    parser = argparse.ArgumentParser(
        prog="radlabel",
        description="Rule-based report labeling distilled into a soft-label BiLSTM.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--spec", default=None, help="synthetic spec JSON (default: packaged)")
    p.add_argument("--out", required=True, help="output corpus JSONL")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("label", parents=[common], help="run the rule-based teacher")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=("jsonl", "openi_xml"), default="jsonl")
    p.add_argument("--lexicon", default=None, help="lexicon TSV (default: packaged)")
    p.add_argument("--rules", default=None, help="negation rules TSV (default: packaged)")
    p.add_argument("--out", required=True, help="output rule-label JSONL")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", parents=[common], help="distill the teacher into the BiLSTM")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=("jsonl", "openi_xml"), default="jsonl")
    p.add_argument("--rule-labels", required=True, help="teacher labels JSONL")
    p.add_argument("--out", required=True, help="output checkpoint (.rlck)")
    p.add_argument("--history", default=None, help="per-epoch history CSV")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--validation-fraction", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta2", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--spatial-dropout", type=float, default=None)
    p.add_argument("--recurrent-dropout", type=float, default=None)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--hidden-units", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="score reports with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=("jsonl", "openi_xml"), default="jsonl")
    p.add_argument("--out", required=True, help="output predictions JSONL")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument(
        "--sort",
        choices=("none", "uncertainty_desc", "score_desc", "uncertainty", "score"),
        default="none",
    )
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="evaluate predictions against gold labels")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True, help="corpus JSONL with gold_label")
    p.add_argument("--format", choices=("jsonl", "openi_xml"), default="jsonl")
    p.add_argument("--rule-labels", default=None, help="teacher labels for operating-point comparison")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", default=None, help="metrics JSON (default: stdout)")
    p.add_argument("--roc-csv", default=None, help="ROC points CSV for plotting")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="throughput benchmark")
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", choices=("jsonl", "openi_xml"), default="jsonl")
    p.add_argument("--labeler", choices=("rules", "model"), required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--rules", default=None)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", default=None, help="bench JSON (default: stdout)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config_file(args.config)
        return args.func(args, config)
    except InputError as exc:
        _report_error(args, exc)
        return 2
    except NumericalError as exc:
        _report_error(args, exc)
        return 3
    except (FileNotFoundError, PermissionError) as exc:
        _report_error(args, InputError(str(exc)))
        return 2


def _report_error(args, exc: RadlabelError) -> None:
    if getattr(args, "json_errors", False):
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
    else:
        print(f"radlabel: error: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
