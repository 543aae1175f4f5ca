import time

import numpy as np

import audiodct.autograd as ag
from audiodct.adapter import AdapterDims, adapter_forward, init_adapter
from audiodct.backbone import (
    ContextAssembly, EmbeddingSegment, InferenceSession, LMConfig, LMParams,
    TokenSegment, freeze, lm_forward, sequence_loss,
)

rng = np.random.default_rng(0)


def fd_check(build_loss, leaves, h=1e-5, samples=40):
    """build_loss() -> scalar Node using current leaf values."""
    loss = build_loss()
    ag.backward(loss)
    worst = 0.0
    for leaf in leaves:
        g = leaf.grad
        flat = leaf.value.ravel()
        idx = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            lp = float(build_loss().value[0, 0])
            flat[i] = orig - h
            lm_ = float(build_loss().value[0, 0])
            flat[i] = orig
            fd = (lp - lm_) / (2 * h)
            an = g.ravel()[i]
            rel = abs(an - fd) / max(abs(an), abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst


# 1) full path: adapter -> frozen LM -> cross entropy
config = LMConfig(layers=2, heads=2, dim=16, ff_dim=32, max_context=64, vocab_size=13, dtype="float64")
params = LMParams.init_random(config, rng)
freeze(params)
dims = AdapterDims(in_dim=6, model_dim=16, hidden=10)
adapter = init_adapter(rng, dims, dtype=np.float64)
X = rng.normal(size=(6, 7))
targets = [3, 5, 2, 9, 2]

def loss_fn():
    seg = EmbeddingSegment(adapter_forward(X, adapter))
    assembly = ContextAssembly([TokenSegment((1, 4)), seg, TokenSegment((6, 5))])
    logits = lm_forward(params, assembly, targets[:-1])
    return ag.cross_entropy(logits, targets)

t0 = time.time()
worst = fd_check(loss_fn, adapter.all_nodes(), samples=25)
print(f"full-path FD rel err: {worst:.3e}  ({time.time()-t0:.1f}s)")

# also gradient into an injected leaf segment
Xleaf = ag.parameter(rng.normal(size=(16, 4)))
def loss_fn2():
    assembly = ContextAssembly([TokenSegment((1,)), EmbeddingSegment(Xleaf), TokenSegment((6,))])
    logits = lm_forward(params, assembly, targets[:-1])
    return ag.cross_entropy(logits, targets)
worst = fd_check(loss_fn2, [Xleaf], samples=20)
print(f"embedding-leaf FD rel err: {worst:.3e}")

# 2) inference path vs graph path consistency
assembly = ContextAssembly([TokenSegment((1, 4)), EmbeddingSegment(rng.normal(size=(16, 5))), TokenSegment((6, 5))])
g_logits = lm_forward(params, assembly, [3, 5, 2]).value
sess = InferenceSession(params, assembly)
rows = [sess.last_logits]
for t in [3, 5, 2]:
    rows.append(sess.step(t))
i_logits = np.stack(rows)
print("graph-vs-session max diff:", np.abs(g_logits - i_logits).max())

# 3) speed benchmark at the default size
config32 = LMConfig(vocab_size=360, dtype="float32")
params32 = LMParams.init_random(config32, np.random.default_rng(1))
freeze(params32)
ad32 = init_adapter(np.random.default_rng(2), AdapterDims(32, 128), dtype=np.float32)
Xb = rng.normal(size=(32, 40)).astype(np.float32)
tgt = list(rng.integers(8, 360, size=24))

def train_loss():
    seg = EmbeddingSegment(adapter_forward(Xb, ad32))
    asm = ContextAssembly([TokenSegment((1, 4)), seg, TokenSegment((6, 5))])
    return ag.cross_entropy(lm_forward(params32, asm, tgt[:-1]), tgt)

# warmup
for _ in range(3):
    l = train_loss(); ag.backward(l)
n = 20
t0 = time.time()
for _ in range(n):
    for node in ad32.all_nodes():
        node.zero_grad()
    l = train_loss()
    ag.backward(l)
per = (time.time() - t0) / n
print(f"fwd+bwd per item (seq~{9+8+24}): {per*1000:.1f} ms -> batch4 iter ~{per*4*1000:.0f} ms")

# pretrain-style item (text only, seq ~40)
ids = [1] + list(rng.integers(8, 360, size=38)) + [2]
def pre_loss():
    return sequence_loss(params32, ids, 20)
for _ in range(3):
    l = pre_loss(); ag.backward(l)
t0 = time.time()
for _ in range(n):
    for node in params32.all_nodes():
        node.zero_grad()
    l = pre_loss()
    ag.backward(l)
print("frozen text item fwd+bwd:", (time.time()-t0)/n*1000, "ms")

# unfrozen pretrain step cost
params_u = LMParams.init_random(config32, np.random.default_rng(1))
def pre_loss_u():
    return sequence_loss(params_u, ids, 20)
for _ in range(3):
    l = pre_loss_u(); ag.backward(l)
t0 = time.time()
for _ in range(n):
    for node in params_u.all_nodes():
        node.zero_grad()
    l = pre_loss_u()
    ag.backward(l)
print("unfrozen text item fwd+bwd:", (time.time()-t0)/n*1000, "ms")

# generation speed
sess_t0 = time.time()
from audiodct.backbone import generate_sample
g = np.random.default_rng(3)
asm = ContextAssembly([TokenSegment(tuple([1] + list(rng.integers(8, 360, size=12)) + [6, 5]))])
for _ in range(5):
    out = generate_sample(params32, asm, 0.7, 40, g)
print("sampled", len(out), "tokens;", (time.time()-sess_t0)/5*1000, "ms per 40-token generation")
