"""Command-line surface tying the library into runnable workflows.

Commands: ``mask``, ``train``, ``eval``, ``gradcheck``, ``split``.
Outputs are JSON (or JSONL for streams), UTF-8. Every run emits a
manifest holding the resolved configuration, seed, and input/output
paths; with a file output the manifest lands next to it, otherwise it
is embedded in the printed JSON.

Exit codes: 0 success, 2 input or validation failure, 3 runtime
numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .data import (
    Corpus,
    Prediction,
    SyntheticSpec,
    evaluate,
    generate_synthetic,
    kfold_split,
    load_corpus,
    load_predictions,
)
from .errors import ConfigError, ContractError, CorpusValidationError, EagatError, TrainingError
from .model import (
    ModelConfig,
    gradient_audit,
    init_state,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .segmentation import Clause, Document, build_multimask, segment

CONFIG_KEY_ALIASES = {
    "loss_weights.e": "loss_weight_e",
    "loss_weights.c": "loss_weight_c",
    "loss_weights.pair": "loss_weight_pair",
    "loss_weights.sort": "loss_weight_sort",
}


def load_config_file(path: str) -> dict[str, str]:
    """Parse a flat ``key = value`` configuration file ('#' comments)."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'; got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[CONFIG_KEY_ALIASES.get(key, key)] = value
    return values


def resolve_config(args: argparse.Namespace) -> ModelConfig:
    """Merge config file values with command-line overrides (flags win)."""
    values: dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for override in getattr(args, "set", None) or []:
        if "=" not in override:
            raise ConfigError(f"--set expects key=value; got {override!r}")
        key, value = (part.strip() for part in override.split("=", 1))
        values[CONFIG_KEY_ALIASES.get(key, key)] = value
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "steps", None) is not None:
        values["steps"] = str(args.steps)
    return ModelConfig.from_dict(values)


def _manifest(command: str, args: argparse.Namespace, config: ModelConfig | None, outputs: list[str]) -> dict:
    return {
        "command": command,
        "argv": sys.argv[1:],
        "config": config.to_dict() if config is not None else None,
        "seed": config.seed if config is not None else getattr(args, "seed", None),
        "corpus": getattr(args, "corpus", None) or getattr(args, "input", None),
        "outputs": outputs,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "artifact_version": __version__,
    }


def _emit(payload: dict, out_path: str | None) -> None:
    text = json.dumps(payload, indent=2)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _write_manifest(manifest: dict, anchor_path: str) -> str:
    path = anchor_path + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# Commands


def cmd_mask(args: argparse.Namespace) -> int:
    if args.text:
        documents = [segment(args.text)]
    else:
        documents = load_corpus(args.input).documents
    results = []
    for doc in documents:
        mask = build_multimask(doc)
        results.append(
            {
                "doc_id": doc.doc_id,
                "sentence_ids": doc.sentence_ids,
                "mask": mask.entries.tolist(),
            }
        )
    payload: dict = {"documents": results}
    if not args.out:
        payload["manifest"] = _manifest("mask", args, None, [])
    _emit(payload, args.out)
    if args.out:
        _write_manifest(_manifest("mask", args, None, [args.out]), args.out)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    corpus = load_corpus(args.corpus)
    state = init_state(config, corpus.vocabulary)
    log_path = args.log or (args.out + ".losslog.jsonl")
    with open(log_path, "w", encoding="utf-8") as log:

        def on_step(step_index: int, report) -> None:
            entry = {"step": step_index, **report.to_dict()}
            log.write(json.dumps(entry) + "\n")

        reports = train(corpus.documents, state, config, on_step=on_step)
    save_checkpoint(args.out, state, config)
    manifest = _manifest("train", args, config, [args.out, log_path])
    _write_manifest(manifest, args.out)
    summary = {
        "steps": len(reports),
        "final": reports[-1].to_dict() if reports else None,
        "checkpoint": args.out,
        "loss_log": log_path,
    }
    print(json.dumps(summary, indent=2))
    return 0


def _eval_subset(documents, state, config) -> dict:
    predictions = {}
    for doc in documents:
        emotions, causes, pairs = predict(doc, state, config)
        predictions[doc.doc_id] = Prediction(emotions=emotions, causes=causes, pairs=pairs)
    return evaluate(predictions, documents).to_dict()


def cmd_eval(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    if args.predictions:
        predictions = load_predictions(args.predictions)
        result = evaluate(predictions, corpus.documents).to_dict()
        payload: dict = {"result": result}
    elif args.folds:
        if not args.checkpoint:
            raise ContractError("eval over folds requires --checkpoint")
        state, config = load_checkpoint(args.checkpoint)
        by_id = corpus.by_id()
        fold_results = []
        fold_files = sorted(
            f for f in os.listdir(args.folds) if f.startswith("fold_") and f.endswith(".json")
        )
        if not fold_files:
            raise ContractError(f"no fold_*.json files in {args.folds}")
        for name in fold_files:
            with open(os.path.join(args.folds, name), "r", encoding="utf-8") as fh:
                fold = json.load(fh)
            documents = []
            for doc_id in fold["doc_ids"]:
                if doc_id not in by_id:
                    raise ContractError(f"fold file {name} references unknown doc_id {doc_id!r}")
                documents.append(by_id[doc_id])
            fold_results.append({"fold": name, "result": _eval_subset(documents, state, config)})
        payload = {
            "folds": fold_results,
            "aggregate": {
                "emotion_f1": agg_metric(fold_results, ("emotion", "f1")),
                "cause_f1": agg_metric(fold_results, ("cause", "f1")),
                "pair_f1": agg_metric(fold_results, ("pair", "f1")),
                "avg_f1": agg_metric(fold_results, ("avg_f1",)),
            },
        }
    else:
        if not args.checkpoint:
            raise ContractError("eval requires --checkpoint unless --predictions is given")
        state, config = load_checkpoint(args.checkpoint)
        payload = {"result": _eval_subset(corpus.documents, state, config)}
    if not args.out:
        payload["manifest"] = _manifest("eval", args, None, [])
    _emit(payload, args.out)
    if args.out:
        _write_manifest(_manifest("eval", args, None, [args.out]), args.out)
    return 0


def agg_metric(fold_results: list[dict], path: tuple[str, ...]) -> dict:
    values = []
    for record in fold_results:
        node = record["result"]
        for key in path:
            node = node[key]
        values.append(node)
    return {"mean": float(np.mean(values)), "std": float(np.std(values))}


def _gradcheck_document(size: int, seed: int) -> Document:
    if size == 1:
        return Document(doc_id="gradcheck-1", clauses=[Clause(text=["w0"], sentence_id=1)])
    spec = SyntheticSpec(
        clauses=(size, size),
        sentences=(min(2, size), min(2, size)),
        pairs=(1, 1),
        tokens_per_clause=3,
        filler_vocab=8,
    )
    return generate_synthetic(1, seed, spec).documents[0]


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.doc_size > 8:
        raise ContractError(f"--doc-size must be <= 8 for tractability; got {args.doc_size}")
    config = resolve_config(args)
    if args.disable_stop_gradient:
        config.stop_gradient_enabled = False
    doc = _gradcheck_document(args.doc_size, config.seed)
    from .data import build_vocabulary

    state = init_state(config, build_vocabulary([doc]))
    report = gradient_audit(doc, state, config, max_coords_per_group=args.max_coords)
    payload = report.to_dict()
    payload["doc_id"] = doc.doc_id
    if config.stop_gradient_enabled:
        payload["note"] = "earlier-layer sort gradients must be exactly zero"
    else:
        payload["note"] = (
            "stop gradient disabled: the zero check is expected to fail; "
            "leakage into earlier layers is the expected contrast"
        )
    if not args.out:
        payload["manifest"] = _manifest("gradcheck", args, config, [])
    _emit(payload, args.out)
    if args.out:
        _write_manifest(_manifest("gradcheck", args, config, [args.out]), args.out)
    return 0 if report.passed else 1


def cmd_split(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    split, statistics = kfold_split(corpus, args.k, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    outputs = []
    for index, fold in enumerate(split.folds):
        path = os.path.join(args.out_dir, f"fold_{index}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"fold_index": index, "seed": split.seed, "doc_ids": fold}, fh, indent=2)
            fh.write("\n")
        outputs.append(path)
    stats_payload = {
        "k": args.k,
        "seed": args.seed,
        "corpus_size": len(corpus),
        "folds": [s.to_dict() for s in statistics],
    }
    stats_path = args.out or os.path.join(args.out_dir, "statistics.json")
    _emit(stats_payload, stats_path)
    outputs.append(stats_path)
    _write_manifest(_manifest("split", args, None, outputs), stats_path)
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eagat",
        description="Clause-graph encoder for emotion-cause pair extraction: "
        "masks, training, evaluation, gradient checks, fold splits.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_mask = sub.add_parser("mask", help="emit clause-relationship mask matrices")
    group = p_mask.add_mutually_exclusive_group(required=True)
    group.add_argument("--input", help="JSONL corpus path")
    group.add_argument("--text", help="raw text to segment")
    p_mask.add_argument("--out", help="write JSON here instead of stdout")
    p_mask.set_defaults(func=cmd_mask)

    p_train = sub.add_parser("train", help="train a model and write a checkpoint")
    p_train.add_argument("--corpus", required=True)
    p_train.add_argument("--config", help="flat key = value configuration file")
    p_train.add_argument("--seed", type=int, help="override the configured seed")
    p_train.add_argument("--steps", type=int, help="override the configured step count")
    p_train.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p_train.add_argument("--out", required=True, help="checkpoint path")
    p_train.add_argument("--log", help="loss log JSONL path (default: <out>.losslog.jsonl)")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a checkpoint or a predictions file")
    p_eval.add_argument("--corpus", required=True)
    p_eval.add_argument("--checkpoint")
    p_eval.add_argument("--predictions", help="score this JSONL file instead of running the model")
    p_eval.add_argument("--folds", help="directory of fold_*.json files for per-fold aggregation")
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="finite-difference audit of the gradients")
    p_grad.add_argument("--config")
    p_grad.add_argument("--seed", type=int)
    p_grad.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_grad.add_argument("--doc-size", type=int, default=5, dest="doc_size")
    p_grad.add_argument("--max-coords", type=int, default=40, dest="max_coords")
    p_grad.add_argument("--disable-stop-gradient", action="store_true")
    p_grad.add_argument("--out")
    p_grad.set_defaults(func=cmd_gradcheck)

    p_split = sub.add_parser("split", help="random k-fold split with distribution statistics")
    p_split.add_argument("--corpus", required=True)
    p_split.add_argument("--k", type=int, required=True)
    p_split.add_argument("--seed", type=int, required=True)
    p_split.add_argument("--out-dir", required=True, dest="out_dir")
    p_split.add_argument("--out", help="statistics JSON path (default: <out-dir>/statistics.json)")
    p_split.set_defaults(func=cmd_split)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (CorpusValidationError, ConfigError, ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EagatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
