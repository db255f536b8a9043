# %% [markdown]
# # Masked-sentence pre-training on a toy corpus
#
# The document encoder is trained by hiding whole sentences and asking a
# small decoder to regenerate them from the surrounding context. This demo
# shows the masking transform on a three-sentence document, then trains the
# tiny model for a few hundred steps on synthetic text.

# %%
from collections import Counter

import numpy as np

from hiersum.encoder import ModelConfig
from hiersum.pretrain import (KEPT, MASKED, REPLACED, PretrainConfig, Stage, apply_masking,
                              pretrain_run, select_and_mask, selection_count)
from hiersum.synthetic import templated_corpus
from hiersum.text import (EOS, bpe_train, build_vocab, decode_document, encode_sentences,
                          segment_document, tokenize)

# %% [markdown]
# ## The transform
#
# About 15% of the sentences are chosen. Each chosen sentence is masked
# (80%), left alone (10%) or swapped for a sentence from elsewhere (10%).

# %%
text = "Ada wrote the first program. She worked with Babbage. Her notes survive today."
sentences = tokenize(text, lowercase=False)
counts = Counter(w for s in sentences + tokenize("Rivers flow downhill.", lowercase=False) for w in s)
merges = bpe_train(counts, 1000)
vocab = build_vocab(counts, merges)
(doc,) = segment_document(encode_sentences(sentences, vocab, merges))
other = encode_sentences(tokenize("Rivers flow downhill.", lowercase=False), vocab, merges)[0] + [EOS]

print("original :", decode_document(doc, vocab))
print("masked   :", decode_document(apply_masking(doc, [1], [MASKED]).doc, vocab))
print("kept     :", decode_document(apply_masking(doc, [1], [KEPT]).doc, vocab))
print("replaced :", decode_document(apply_masking(doc, [1], [REPLACED], {1: other}).doc, vocab))
print("sentences chosen for n = 3, 10, 20:", [selection_count(n) for n in (3, 10, 20)])

# %% [markdown]
# Sampling is driven by an explicit generator, so the same seed always gives
# the same transform.

# %%
tags = Counter()
rng = np.random.default_rng(0)
big = segment_document([[7, 8]] * 20)[0]
for _ in range(2000):
    tags.update(select_and_mask(big, rng, [[9, EOS]]).tags)
total = sum(tags.values())
print({k: round(v / total, 3) for k, v in tags.items()})

# %% [markdown]
# ## Training
#
# Each synthetic document repeats one subject and object in every sentence,
# with the verb fixed by sentence position. A hidden sentence is therefore
# recoverable from its neighbours, and validation perplexity should fall
# towards 1.

# %%
corpus = templated_corpus(16, np.random.default_rng(0))
cfg = ModelConfig(vocab_size=len(corpus.vocab))
train = PretrainConfig(base_lr=2e-3, warmup_steps=100, batch_size=8, max_steps=400,
                       max_epochs=10**6, eval_every=25, patience=10**6, seed=0)
result = pretrain_run([Stage("toy", corpus.docs)], cfg, train)
for rec in result.history:
    if rec["val_ppl"] is not None:
        print(f"step {rec['step']:4d}  validation perplexity {rec['val_ppl']:.3f}")
