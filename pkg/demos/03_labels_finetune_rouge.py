# %% [markdown]
# # From oracle labels to summaries
#
# Extractive summarization here is sentence labelling: the model marks the
# sentences to keep. Training labels come from a ROUGE-maximising search
# against a reference summary, and summaries are scored with ROUGE F1.

# %%
import numpy as np

from hiersum.encoder import ModelConfig, init_params
from hiersum.pretrain import PretrainConfig, Stage, pretrain_run
from hiersum.rouge import oracle_exhaustive, oracle_greedy, rouge_all
from hiersum.summarizer import FinetuneConfig, LabeledDocument, evaluate_labels, finetune, rank_and_select
from hiersum.synthetic import keyword_corpus
from hiersum.text import tokenize

# %% [markdown]
# ## ROUGE and the labelling oracle

# %%
print(rouge_all("the cat sat".split(), "the cat ate".split()))

article = ("The storm closed the coastal road on Monday. Crews cleared fallen trees overnight. "
           "Schools reopened on Wednesday. The road reopened on Tuesday after repairs.")
summary = "The storm closed the coastal road. It reopened on Tuesday."
sents = tokenize(article)
ref = [w for s in tokenize(summary) for w in s]
print("greedy    :", oracle_greedy(sents, ref))
print("exhaustive:", oracle_exhaustive(sents, ref))

# %% [markdown]
# ## Does pre-training help the labeller?
#
# The planted-keyword task labels a sentence True when it contains `*`.
# Pre-training sees the same kind of documents without labels. With a short
# fine-tuning budget the pretrained start usually ends with lower held-out
# loss than a random start.

# %%
rng = np.random.default_rng(100)
unlabelled = keyword_corpus(128, rng)
train_set = keyword_corpus(32, rng, vocab=unlabelled.vocab)
test_set = keyword_corpus(100, rng, vocab=unlabelled.vocab)
cfg = ModelConfig(vocab_size=len(unlabelled.vocab))

pre = pretrain_run([Stage("unlabelled", unlabelled.docs)], cfg,
                   PretrainConfig(base_lr=2e-3, warmup_steps=100, max_steps=300, max_epochs=10**6,
                                  eval_every=10**6, patience=10**6)).params
train = [LabeledDocument(d, l) for d, l in zip(train_set.docs, train_set.labels)]
test = [LabeledDocument(d, l) for d, l in zip(test_set.docs, test_set.labels)]
ft = FinetuneConfig(base_lr=1e-3, warmup_steps=20, batch_size=8, epochs=10**6, max_steps=250)
for name, start in (("pretrained", pre), ("random", init_params(cfg, np.random.default_rng([0, 0])))):
    tuned = finetune(start, train, cfg, ft)
    print(name, evaluate_labels(test, tuned, cfg))

# %% [markdown]
# ## Choosing sentences
#
# The top-K sentences by probability are returned in document order. Ties go
# to the earlier sentence.

# %%
print(rank_and_select([0.9, 0.1, 0.8, 0.8], 2))
