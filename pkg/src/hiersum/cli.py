"""Command-line entry points: build-vocab, pretrain, finetune, label, evaluate."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, parse_assignments
from .encoder import ModelConfig, init_params
from .optim import AdamState
from .pretrain import Stage, TrainState, pretrain_run
from .rouge import oracle_greedy, rouge_all
from .summarizer import (LabeledDocument, best_k, classify_batch, evaluate_labels, finetune,
                         rank_and_select)
from .text import (BpeMerges, Vocab, bpe_train, build_vocab, encode_sentences, read_corpus,
                   segment_document, segment_labels, tokenize, write_jsonl)

log = logging.getLogger("hiersum")


class CommandError(RuntimeError):
    pass


# -- shared helpers ------------------------------------------------------------------
def _require_file(path: str, what: str) -> Path:
    if not path:
        raise ConfigError(f"{what} path is not set")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return p


def _load_text_model(cfg: ExperimentConfig) -> tuple[Vocab, BpeMerges]:
    return Vocab.load(cfg.vocab), BpeMerges.load(cfg.merges)


def encode_records(path, vocab: Vocab, merges: BpeMerges):
    from .text import encode_text
    docs = []
    for rec in read_corpus(path):
        docs.extend(encode_text(rec["text"], vocab, merges))
    return docs


def labeled_documents(path, vocab: Vocab, merges: BpeMerges) -> list[LabeledDocument]:
    """Read a labelled corpus (``text``, ``labels``, optional ``summary``) into chunks."""
    out = []
    for rec in read_corpus(path):
        words = tokenize(rec["text"])
        labels = rec.get("labels")
        if labels is None or len(labels) != len(words):
            raise CommandError(f"{path}: record {rec['id']} has {len(words)} sentences but "
                               f"{'no' if labels is None else len(labels)} labels")
        reference = [w for s in tokenize(rec.get("summary", "")) for w in s]
        ids = encode_sentences(words, vocab, merges)
        for doc, labs, toks in zip(segment_document(ids), segment_labels(labels, ids),
                                   segment_labels(words, ids)):
            out.append(LabeledDocument(doc, [bool(x) for x in labs], reference, toks))
    return out


class JsonlLog:
    def __init__(self, path: Path, append: bool = False):
        self.fh = open(path, "a" if append else "w", encoding="utf-8")

    def __call__(self, record: dict) -> None:
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()


def state_to_dict(state: TrainState) -> dict:
    d = dataclasses.asdict(state)
    d.pop("adam")
    return d


def state_from_dict(d: dict, adam: AdamState) -> TrainState:
    return TrainState(adam=adam, **d)


def _rng_record(seed: int) -> dict:
    return {"kind": "numpy-seedsequence", "entropy": [seed],
            "streams": "default_rng([seed, purpose, stage, counter])"}


# -- commands -------------------------------------------------------------------------
def cmd_build_vocab(args, cfg: ExperimentConfig) -> int:
    corpus = _require_file(args.corpus, "corpus")
    if args.num_merges < 0:
        raise ConfigError("--num-merges must be >= 0")
    counts: Counter = Counter()
    for rec in read_corpus(corpus):
        for field in ("text", "summary"):
            for sent in tokenize(rec.get(field, "")):
                counts.update(sent)
    merges = bpe_train(counts, args.num_merges)
    vocab = build_vocab(counts, merges)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    merges.save(out / "merges.txt")
    vocab.save(out / "vocab.txt")
    print(f"vocab size {len(vocab)} ({len(merges)} merges) -> {out}")
    return 0


def cmd_pretrain(args, cfg: ExperimentConfig) -> int:
    _require_file(cfg.vocab, "vocab")
    _require_file(cfg.merges, "merges")
    stages_cfg = cfg.stages()
    if not stages_cfg:
        raise ConfigError("stage_corpora is empty: at least one pre-training stage is required")
    for name, path in stages_cfg:
        _require_file(path, f"corpus for stage {name!r}")
    if cfg.pretrain_valid:
        _require_file(cfg.pretrain_valid, "pretrain_valid")
    resume = _require_file(args.checkpoint, "checkpoint") if args.checkpoint else None

    vocab, merges = _load_text_model(cfg)
    model_cfg = cfg.model_config(len(vocab))
    valid = encode_records(cfg.pretrain_valid, vocab, merges) if cfg.pretrain_valid else []
    stages = []
    for name, path in stages_cfg:
        docs = encode_records(path, vocab, merges)
        if not docs:
            raise CommandError(f"stage {name!r}: corpus {path} has no documents")
        stages.append(Stage(name, docs, valid))
    params, state = None, None
    if resume is not None:
        ckpt = load_checkpoint(resume, model_cfg)
        params = ckpt.params
        state = state_from_dict(ckpt.extra["train_state"], ckpt.adam)
        if state.finished:
            print("checkpoint is from a finished run; nothing to do")
            return 0

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logger = JsonlLog(out / "pretrain_log.jsonl", append=resume is not None)

    def save(path: Path, p, st: TrainState) -> None:
        save_checkpoint(path, Checkpoint(model_cfg, p, st.adam, _rng_record(cfg.seed),
                                         st.stage_step, {"train_state": state_to_dict(st),
                                                         "kind": "pretrain"}))

    def stage_end(index, p, st) -> None:
        path = out / f"pretrain_{index + 1}_{stages[index].name}.ckpt"
        save(path, p, st)
        print(f"stage {stages[index].name} done -> {path}")

    try:
        result = pretrain_run(stages, model_cfg, cfg.pretrain_config(), params, state,
                              on_record=logger, on_stage_end=stage_end,
                              stop_after_steps=args.stop_after_steps)
    finally:
        logger.close()
    if not result.state.finished:
        path = out / "pretrain_last.ckpt"
        save(path, result.params, result.state)
        print(f"interrupted after {args.stop_after_steps} steps -> {path}")
    return 0


def cmd_finetune(args, cfg: ExperimentConfig) -> int:
    _require_file(cfg.vocab, "vocab")
    _require_file(cfg.merges, "merges")
    train_path = _require_file(cfg.finetune_corpus, "finetune_corpus")
    valid_path = _require_file(cfg.finetune_valid, "finetune_valid") if cfg.finetune_valid else None
    init = _require_file(args.checkpoint, "checkpoint") if args.checkpoint else None

    vocab, merges = _load_text_model(cfg)
    model_cfg = cfg.model_config(len(vocab))
    if init is not None:
        params = load_checkpoint(init, model_cfg).params
    else:
        params = init_params(model_cfg, np.random.default_rng([cfg.seed, 0]))
    train = labeled_documents(train_path, vocab, merges)
    valid = labeled_documents(valid_path, vocab, merges) if valid_path else []

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    logger = JsonlLog(out / "finetune_log.jsonl")

    def epoch_end(epoch, p) -> None:
        if valid:
            metrics = evaluate_labels(valid, p, model_cfg)
            logger({"epoch": epoch, "stage": "finetune", "val_nll": metrics["nll"],
                    "val_accuracy": metrics["accuracy"]})

    try:
        params = finetune(params, train, model_cfg, cfg.finetune_config(), logger, epoch_end)
    finally:
        logger.close()
    path = out / "finetune.ckpt"
    save_checkpoint(path, Checkpoint(model_cfg, params, AdamState(), _rng_record(cfg.seed), 0,
                                     {"kind": "finetune", "init": "pretrained" if init else "random"}))
    print(f"fine-tuned ({'pretrained' if init else 'random'} init) -> {path}")
    return 0


def cmd_label(args, cfg: ExperimentConfig) -> int:
    corpus = _require_file(args.corpus, "corpus")
    out_path = Path(args.out) if args.out else Path(cfg.out_dir) / "labeled.jsonl"
    records, skipped = [], 0
    for rec in read_corpus(corpus):
        summary = rec.get("summary")
        if not summary:
            skipped += 1
            continue
        sentences = tokenize(rec["text"])
        reference = [w for s in tokenize(summary) for w in s]
        chosen, score = oracle_greedy(sentences, reference, cfg.max_selected)
        picked = set(chosen)
        records.append({"doc_id": rec["id"], "labels": [i in picked for i in range(len(sentences))],
                        "oracle_score": score, "text": rec["text"], "summary": summary})
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(out_path, records)
    if skipped:
        print(f"warning: skipped {skipped} record(s) without a summary", file=sys.stderr)
    print(f"labelled {len(records)} document(s) -> {out_path}")
    return 0


@dataclass
class EvalRecord:
    doc_id: object
    sentence_tokens: list[list[str]]
    reference: list[str]
    probs: np.ndarray
    doc: object = None


def score_records(records: Sequence[EvalRecord], k: int) -> tuple[dict, list[dict]]:
    """Corpus-mean ROUGE F1 of the top-K selections and of Lead-K."""
    model = {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
    lead = dict(model)
    summaries = []
    for rec in records:
        chosen = rank_and_select(rec.probs, k).chosen
        cand = [w for i in chosen for w in rec.sentence_tokens[i]]
        lead_cand = [w for s in rec.sentence_tokens[:k] for w in s]
        for key, val in rouge_all(cand, rec.reference).items():
            model[key] += val
        for key, val in rouge_all(lead_cand, rec.reference).items():
            lead[key] += val
        summaries.append({"doc_id": rec.doc_id, "chosen_indices": chosen,
                          "summary_text": " ".join(cand)})
    n = max(1, len(records))
    return ({"model": {k_: v / n for k_, v in model.items()},
             "lead": {k_: v / n for k_, v in lead.items()}}, summaries)


def eval_records(path, vocab, merges, params, model_cfg: ModelConfig) -> list[EvalRecord]:
    out = []
    for rec in read_corpus(path):
        if not rec.get("summary"):
            continue
        words = [s for s in tokenize(rec["text"]) if s]
        if not words:
            continue
        docs = segment_document(encode_sentences(words, vocab, merges))
        probs = np.concatenate(classify_batch(docs, params, model_cfg))
        out.append(EvalRecord(rec["id"], words, [w for s in tokenize(rec["summary"]) for w in s], probs))
    return out


def cmd_evaluate(args, cfg: ExperimentConfig) -> int:
    _require_file(cfg.vocab, "vocab")
    _require_file(cfg.merges, "merges")
    corpus = _require_file(args.corpus, "corpus")
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    tune = args.k == "tune"
    if not tune:
        try:
            k = int(args.k)
        except ValueError:
            raise ConfigError(f"--k must be an integer or 'tune', got {args.k!r}") from None
        if k < 1:
            raise ConfigError("--k must be >= 1")
    valid_path = args.valid_corpus or cfg.finetune_valid
    if tune:
        _require_file(valid_path, "validation corpus for K tuning")

    vocab, merges = _load_text_model(cfg)
    model_cfg = cfg.model_config(len(vocab))
    params = load_checkpoint(ckpt_path, model_cfg).params
    k_scores = None
    if tune:
        valid = eval_records(valid_path, vocab, merges, params, model_cfg)
        k, k_scores = best_k([r.probs for r in valid], valid, cfg.k_values())
    records = eval_records(corpus, vocab, merges, params, model_cfg)
    metrics, summaries = score_records(records, k)
    report = {"documents": len(records), "k": k, "k_tuned": tune, **metrics}
    if k_scores is not None:
        report["k_scores"] = {str(key): val for key, val in k_scores.items()}
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    write_jsonl(out / "summaries.jsonl", summaries)
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


# -- argument parsing -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="flat key = value config file")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--out-dir")
    shared.add_argument("--checkpoint")
    shared.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")

    parser = argparse.ArgumentParser(prog="hiersum", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("build-vocab", parents=[shared], help="learn BPE merges and a vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--num-merges", type=int, default=1000)
    p.set_defaults(func=cmd_build_vocab)

    p = subs.add_parser("pretrain", parents=[shared], help="masked-sentence pre-training stages")
    p.add_argument("--stop-after-steps", type=int, default=None,
                   help="interrupt after this many optimizer steps and save pretrain_last.ckpt")
    p.set_defaults(func=cmd_pretrain)

    p = subs.add_parser("finetune", parents=[shared], help="train the sentence labeller")
    p.set_defaults(func=cmd_finetune)

    p = subs.add_parser("label", parents=[shared], help="create oracle sentence labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_label)

    p = subs.add_parser("evaluate", parents=[shared], help="ROUGE of top-K summaries and Lead-K")
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", default="3", help="an integer, or 'tune' to pick K on a validation corpus")
    p.add_argument("--valid-corpus")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = parse_assignments(args.set)
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.out_dir is not None:
            overrides["out_dir"] = args.out_dir
        cfg = load_config(args.config, overrides)
        return args.func(args, cfg)
    except (ConfigError, CheckpointError, CommandError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
