"""Acceptance suite: one test per criterion, each at its stated tolerance.

A summary line per criterion is printed at the end of the pytest run
(see ``conftest.py``).  Criterion 9 needs user-supplied news data and is
skipped unless ``HIERSUM_LEAD3_CORPUS`` points at a JSONL file with
``text`` and ``summary`` fields.
"""
import json
import math
import os
import time
import zlib
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from hiersum.cli import EvalRecord, main, score_records
from hiersum.encoder import ModelConfig, copy_params, init_params
from hiersum.pretrain import (KEPT, MASKED, REPLACED, PretrainConfig, Stage, apply_masking,
                              decode_stepwise, decoder_forward, pretrain_loss, pretrain_run,
                              select_and_mask)
from hiersum.rouge import (lcs_length, oracle_exhaustive, oracle_greedy, oracle_labels_greedy,
                           rouge_l, rouge_n)
from hiersum.summarizer import FinetuneConfig, LabeledDocument, evaluate_labels, finetune
from hiersum.synthetic import keyword_corpus, templated_corpus
from hiersum.tensor import Tensor
from hiersum.text import BOS, EOS, Document, decode_document, read_corpus, tokenize

import test_tensor
from corpora import experiment
from gradcheck import TOL, check
from test_pretrain import shakespeare_setup
from test_rouge import lcs_recursive


def crit(n, title):
    return pytest.mark.criterion(n, title)


def detail(record_property, text):
    record_property("detail", text)


# 1 ---------------------------------------------------------------------------------------
@crit(1, "gradient suite: every op and the full tiny pretrain_loss graph vs finite differences")
def test_gradient_suite(record_property):
    start = time.perf_counter()
    worst_ops = {}
    for case in test_tensor.CASES:
        rng = np.random.default_rng(zlib.crc32(case.__name__.encode()))
        worst = 0.0
        for _ in range(30):
            loss_fn, tensors = case(rng)
            worst = max(worst, check(loss_fn, tensors))
        worst_ops[case.__name__[5:]] = worst

    cfg = ModelConfig(vocab_size=20)
    rng = np.random.default_rng(2024)
    worst_graph = 0.0
    for _ in range(30):
        p = init_params(cfg, rng)
        for t in p.values():
            t.requires_grad = True
        n = int(rng.integers(1, 6))
        doc = Document([list(rng.integers(5, 20, size=rng.integers(1, 6))) + [EOS] for _ in range(n)])
        m = select_and_mask(doc, rng, [[6, 7, EOS]])
        names = [k for k in sorted(p) if k != "cls.w"]
        used = sorted({t for s in m.doc.sentences + m.targets for t in s})
        coords = []
        for k in names:
            if k == "embed.w":
                coords.append([(int(rng.choice(used)), int(rng.integers(cfg.hidden)))])
            else:
                coords.append([tuple(int(rng.integers(s)) for s in p[k].shape)])
        worst_graph = max(worst_graph, check(lambda: pretrain_loss(m, p, cfg), [p[k] for k in names], coords))
    elapsed = time.perf_counter() - start
    worst_op = max(worst_ops.values())
    detail(record_property, f"max rel err ops {worst_op:.1e}, full graph {worst_graph:.1e}, {elapsed:.0f}s")
    assert worst_op < TOL, worst_ops
    assert worst_graph < TOL
    assert elapsed < 120


# 2 ---------------------------------------------------------------------------------------
@crit(2, "masking distribution 0.15 / 0.80-0.10-0.10 (+-0.01) and the worked example")
def test_masking_distribution(record_property):
    rng = np.random.default_rng(7)
    doc = Document([[5 + i, EOS] for i in range(20)])
    pool = [[30, 31, EOS]]
    picks = np.zeros(20)
    tags = Counter()
    trials = 10_000
    for _ in range(trials):
        m = select_and_mask(doc, rng, pool)
        assert len(m.selected) == 3
        picks[m.selected] += 1
        tags.update(m.tags)
    freq = picks / trials
    total = sum(tags.values())
    tf = {t: tags[t] / total for t in (MASKED, KEPT, REPLACED)}
    detail(record_property, f"selection {freq.min():.4f}..{freq.max():.4f}, "
                            f"transforms {tf[MASKED]:.4f}/{tf[KEPT]:.4f}/{tf[REPLACED]:.4f}")
    assert np.all(np.abs(freq - 0.15) <= 0.01)
    for t, target in ((MASKED, 0.8), (KEPT, 0.1), (REPLACED, 0.1)):
        assert abs(tf[t] - target) <= 0.01

    doc, birds, vocab = shakespeare_setup()
    masked = decode_document(apply_masking(doc, [1], [MASKED]).doc, vocab)
    replaced = decode_document(apply_masking(doc, [1], [REPLACED], {1: birds + [EOS]}).doc, vocab)
    assert masked == ("William Shakespeare is a poet . [MASK] [MASK] [MASK] [MASK] [MASK] "
                      "He is regarded as the greatest writer .")
    assert replaced == "William Shakespeare is a poet . Birds can fly . He is regarded as the greatest writer ."


# 3 ---------------------------------------------------------------------------------------
@crit(3, "tiny model memorises a 32-document corpus: validation ppl < 1.5 within 2,000 steps, < 10 min")
def test_memorization(record_property):
    corpus = templated_corpus(32, np.random.default_rng(0))
    cfg = ModelConfig(vocab_size=len(corpus.vocab))
    train = PretrainConfig(base_lr=2e-3, warmup_steps=200, batch_size=8, max_steps=2000,
                           max_epochs=10**6, eval_every=25, patience=10**6, seed=0)
    start = time.perf_counter()
    res = pretrain_run([Stage("synthetic", corpus.docs)], cfg, train)
    elapsed = time.perf_counter() - start
    evals = [(r["step"], r["val_ppl"]) for r in res.history if r["val_ppl"] is not None]
    first = next((s for s, p in evals if p < 1.5), None)
    detail(record_property, f"ppl at step {evals[-1][0]}: {evals[-1][1]:.3f}; "
                            f"first < 1.5 at step {first}; {elapsed:.0f}s")
    assert evals[-1][0] == 2000
    assert first is not None and first <= 2000
    assert evals[-1][1] < 1.5
    assert elapsed < 600


# 4 ---------------------------------------------------------------------------------------
PRE_STEPS, FT_STEPS = 300, 250


@crit(4, "pretrained init: held-out label NLL <= random init in >= 4/5 seeds; accuracy >= 95%")
def test_pretraining_helps(record_property):
    wins, rows = 0, []
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        pre = keyword_corpus(128, rng)
        tr = keyword_corpus(32, rng, vocab=pre.vocab)
        te = keyword_corpus(100, rng, vocab=pre.vocab)
        cfg = ModelConfig(vocab_size=len(pre.vocab))
        pre_cfg = PretrainConfig(base_lr=2e-3, warmup_steps=100, batch_size=8, max_steps=PRE_STEPS,
                                 max_epochs=10**6, eval_every=10**6, patience=10**6, seed=seed)
        pretrained = pretrain_run([Stage("unlabelled", pre.docs)], cfg, pre_cfg).params
        random_init = init_params(cfg, np.random.default_rng([seed, 0]))
        train = [LabeledDocument(d, l) for d, l in zip(tr.docs, tr.labels)]
        test = [LabeledDocument(d, l) for d, l in zip(te.docs, te.labels)]
        ft = FinetuneConfig(base_lr=1e-3, warmup_steps=20, batch_size=8, epochs=10**6,
                            max_steps=FT_STEPS, seed=seed)
        m_pre = evaluate_labels(test, finetune(pretrained, train, cfg, ft), cfg)
        m_rand = evaluate_labels(test, finetune(random_init, train, cfg, ft), cfg)
        wins += m_pre["nll"] <= m_rand["nll"]
        rows.append((m_pre, m_rand))
    acc = [r[0]["accuracy"] for r in rows]
    detail(record_property, f"wins {wins}/5; nll pre/rand "
           + " ".join(f"{a['nll']:.3f}/{b['nll']:.3f}" for a, b in rows)
           + f"; min pretrained acc {min(acc):.3f}")
    assert wins >= 4
    assert min(acc) >= 0.95


# 5 ---------------------------------------------------------------------------------------
@crit(5, "ROUGE hand cases to 1e-12; LCS DP equals recursive oracle on 1,000 lists")
def test_rouge_correctness(record_property):
    c, r = "the cat sat".split(), "the cat ate".split()
    for s, want in ((rouge_n(c, r, 1), 2 / 3), (rouge_n(c, r, 2), 1 / 2),
                    (rouge_l("a b c d".split(), "a c b d".split()), 3 / 4)):
        for v in (s.precision, s.recall, s.f1):
            assert abs(v - want) <= 1e-12
    same = rouge_l(list("xyz"), list("xyz"))
    assert (same.precision, same.recall, same.f1) == (1.0, 1.0, 1.0)
    empty = rouge_l([], list("xyz"))
    assert (empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0)
    disjoint = rouge_n(list("ab"), list("cd"), 1)
    assert disjoint.f1 == 0.0
    rng = np.random.default_rng(11)
    mismatches = 0
    for _ in range(1000):
        a = list(rng.integers(0, 6, size=rng.integers(0, 14)))
        b = list(rng.integers(0, 6, size=rng.integers(0, 14)))
        mismatches += lcs_length(a, b) != lcs_recursive(a, b)
    detail(record_property, f"LCS mismatches {mismatches}/1000")
    assert mismatches == 0


# 6 ---------------------------------------------------------------------------------------
@crit(6, "oracle: exhaustive >= greedy always; greedy >= 0.9 x exhaustive in >= 95% of 500 docs")
def test_oracle_labeling(record_property):
    rng = np.random.default_rng(12)
    close, violations = 0, 0
    for _ in range(500):
        sents = [[f"w{x}" for x in rng.integers(0, 25, size=rng.integers(4, 11))] for _ in range(6)]
        ref = [f"w{x}" for x in rng.integers(0, 25, size=rng.integers(8, 20))]
        _, g = oracle_greedy(sents, ref, 3)
        _, e = oracle_exhaustive(sents, ref, 3)
        violations += e < g
        close += g >= 0.9 * e
    sents = [["a", "b", "c"], ["the", "cat", "sat"], ["x", "y"]]
    identity = oracle_labels_greedy(sents, ["the", "cat", "sat"])
    detail(record_property, f"greedy within 90% in {close}/500; violations {violations}")
    assert violations == 0
    assert close >= 475
    assert identity == [False, True, False]


# 7 ---------------------------------------------------------------------------------------
@crit(7, "decoder: full logits equal step-by-step exactly; perturbing t leaves < t unchanged (100 trials)")
def test_decoder_causality(record_property):
    cfg = ModelConfig(vocab_size=40)
    rng = np.random.default_rng(13)
    p = init_params(cfg, rng)
    for _ in range(100):
        n = int(rng.integers(2, 16))
        toks = [BOS] + [int(x) for x in rng.integers(5, 40, size=n - 1)]
        ctx = Tensor(rng.normal(size=cfg.hidden))
        full = decoder_forward(np.array([toks]), ctx.reshape(1, -1), p, cfg, lengths=[n]).data[0]
        assert np.array_equal(decode_stepwise(toks, ctx, p, cfg), full)
        t = int(rng.integers(1, n))
        changed = list(toks)
        changed[t] = 5 + (changed[t] - 4) % 35
        after = decoder_forward(np.array([changed]), ctx.reshape(1, -1), p, cfg, lengths=[n]).data[0]
        assert np.array_equal(after[:t], full[:t])
    detail(record_property, "100/100 trials exact")


# 8 ---------------------------------------------------------------------------------------
@crit(8, "reproducibility: identical runs give byte-identical checkpoints and reports; resume matches")
def test_reproducibility(tmp_path, record_property):
    cfg = experiment(tmp_path / "data")
    test = tmp_path / "data" / "test.jsonl"
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["pretrain", "--config", str(cfg), "--out-dir", str(out)]) == 0
        assert main(["finetune", "--config", str(cfg), "--out-dir", str(out),
                     "--checkpoint", str(out / "pretrain_2_indomain.ckpt")]) == 0
        assert main(["evaluate", "--config", str(cfg), "--out-dir", str(out), "--corpus", str(test),
                     "--checkpoint", str(out / "finetune.ckpt"), "--k", "tune"]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    a, b = outputs
    assert a.keys() == b.keys() and "metrics.json" in a
    differing = [k for k in a if a[k] != b[k]]

    resumed = tmp_path / "resumed"
    assert main(["pretrain", "--config", str(cfg), "--out-dir", str(resumed), "--stop-after-steps", "3"]) == 0
    assert main(["pretrain", "--config", str(cfg), "--out-dir", str(resumed),
                 "--checkpoint", str(resumed / "pretrain_last.ckpt")]) == 0
    same_curve = (resumed / "pretrain_log.jsonl").read_bytes() == a["pretrain_log.jsonl"]
    same_ckpt = all((resumed / k).read_bytes() == a[k] for k in ("pretrain_1_open.ckpt", "pretrain_2_indomain.ckpt"))
    detail(record_property, f"{len(a)} files compared, {len(differing)} differ; resume curve identical: {same_curve}")
    assert not differing, differing
    assert same_curve and same_ckpt


# 9 ---------------------------------------------------------------------------------------
LEAD3_REFERENCE = {"rouge1": 40.34, "rouge2": 17.70, "rougeL": 36.57}


@crit(9, "optional: Lead-3 on user-supplied news data within +-1.5 ROUGE of the published row")
def test_lead3_on_user_data(record_property):
    path = os.environ.get("HIERSUM_LEAD3_CORPUS")
    if not path:
        pytest.skip("set HIERSUM_LEAD3_CORPUS to a JSONL test split with text and summary fields")
    records = []
    for rec in read_corpus(Path(path)):
        if not rec.get("summary"):
            continue
        sents = [s for s in tokenize(rec["text"]) if s]
        if not sents:
            continue
        probs = np.array([1.0 if i < 3 else 0.0 for i in range(len(sents))])
        ref = [w for s in tokenize(rec["summary"]) for w in s]
        records.append(EvalRecord(rec["id"], sents, ref, probs))
    report, _ = score_records(records, 3)
    lead = {k: 100 * v for k, v in report["lead"].items()}
    detail(record_property, f"{len(records)} docs: " + "/".join(f"{lead[k]:.2f}" for k in LEAD3_REFERENCE))
    for key, want in LEAD3_REFERENCE.items():
        assert abs(lead[key] - want) <= 1.5, (key, lead[key])
