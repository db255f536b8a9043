# %% [markdown]
# # Autodiff and attention, by hand
#
# Everything in `hiersum` runs on a small reverse-mode engine over float64
# numpy arrays. This walk-through builds a few graphs, checks them against
# finite differences and looks inside one attention layer.

# %%
import numpy as np

from hiersum import tensor as T
from hiersum.encoder import ModelConfig, init_params, multi_head_attention, sub
from hiersum.tensor import Tensor

rng = np.random.default_rng(0)

# %% [markdown]
# A tensor that should receive gradients is created with `requires_grad=True`.
# Calling `backward()` on a scalar fills `.grad` on every leaf it depends on.

# %%
x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
loss = (x * x).sum()
loss.backward()
print("d/dx sum(x^2) == 2x:", np.allclose(x.grad, 2 * x.data))

# %% [markdown]
# Gradients accumulate across calls until reset, which is what lets a
# training loop sum contributions from several losses.

# %%
(x.sum()).backward()
print("after a second backward, grad == 2x + 1:", np.allclose(x.grad, 2 * x.data + 1))
T.zero_grads([x])

# %% [markdown]
# A central finite difference is the reference for every operation.

# %%
w = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
g = Tensor(np.ones(5), requires_grad=True)
b = Tensor(np.zeros(5), requires_grad=True)
targets = [0, 3, 1]


def objective():
    return T.nll_loss(T.layer_norm(T.relu(x @ w), g, b), targets)


objective().backward()
h, i, j = 1e-5, 2, 3
w.data[i, j] += h
up = objective().item()
w.data[i, j] -= 2 * h
down = objective().item()
w.data[i, j] += h
print(f"analytic {w.grad[i, j]:.10f}  numeric {(up - down) / (2 * h):.10f}")

# %% [markdown]
# ## One attention layer
#
# With a single key, softmax puts all weight on it, so every query receives
# the same projected value.

# %%
cfg = ModelConfig(vocab_size=10)
params = init_params(cfg, rng)
attn = sub(params, "sent.0.attn")
value = Tensor(rng.normal(size=(1, cfg.hidden)))
queries = Tensor(rng.normal(size=(3, cfg.hidden)))
out = multi_head_attention(queries, value, value, None, attn, cfg.heads).data
print("rows identical:", np.allclose(out, out[0]))

# %% [markdown]
# A causal mask lets position t attend only to positions up to t, which is
# how the sentence decoder stays autoregressive.

# %%
seq = Tensor(rng.normal(size=(5, cfg.hidden)))
causal = np.tril(np.ones((5, 5), dtype=bool))
before = multi_head_attention(seq, seq, seq, causal, attn, cfg.heads).data
seq.data[4] += 10.0
after = multi_head_attention(seq, seq, seq, causal, attn, cfg.heads).data
print("positions 0-3 unchanged after editing position 4:", np.array_equal(before[:4], after[:4]))
