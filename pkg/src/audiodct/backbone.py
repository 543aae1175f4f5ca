"""Decoder-only transformer used as the frozen backbone.

Pre-norm blocks, learned positional embeddings, and the output projection
tied to the token embedding table. Contexts are ordered segments of token ids
and injected continuous embeddings; the causal mask covers the concatenated
sequence, and gradients flow into injected segments even when every model
parameter is frozen.

Two execution paths share the same weights: a graph path used by training
losses, and an incremental numpy path with per-layer key/value caches used by
sampling and beam search. A consistency test keeps them aligned.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Node
from .tokenizer import EOS_ID

_MASK_FILL = -1e9


class ContextError(Exception):
    pass


@dataclass(frozen=True)
class LMConfig:
    layers: int = 4
    heads: int = 4
    dim: int = 128
    ff_dim: int = 512
    max_context: int = 256
    vocab_size: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError("model dim must divide evenly across heads")
        if self.vocab_size <= 0:
            raise ValueError("vocab_size must be set")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self) -> dict:
        return {
            "layers": self.layers, "heads": self.heads, "dim": self.dim,
            "ff_dim": self.ff_dim, "max_context": self.max_context,
            "vocab_size": self.vocab_size, "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LMConfig":
        return cls(**d)


@dataclass(frozen=True)
class TokenSegment:
    ids: tuple

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class EmbeddingSegment:
    """Injected continuous content, (dim x n). Holds a Node during training
    so gradients can reach the adapter, or a plain matrix at inference."""

    matrix: object

    def __len__(self):
        value = self.matrix.value if isinstance(self.matrix, Node) else self.matrix
        return value.shape[1]

    @property
    def value(self) -> np.ndarray:
        return self.matrix.value if isinstance(self.matrix, Node) else np.asarray(self.matrix)


@dataclass
class ContextAssembly:
    segments: list = field(default_factory=list)

    def __len__(self):
        return sum(len(s) for s in self.segments)

    def token_ids(self) -> list[int]:
        """Ids of the token segments, in order (embedding segments skipped)."""
        out = []
        for seg in self.segments:
            if isinstance(seg, TokenSegment):
                out.extend(seg.ids)
        return out


def param_names(config: LMConfig) -> list[str]:
    """Declared parameter order; checkpoints and hashes follow it exactly."""
    names = ["tok_emb", "pos_emb"]
    for i in range(config.layers):
        names += [
            f"l{i}.ln1_g", f"l{i}.ln1_b",
            f"l{i}.wq", f"l{i}.bq", f"l{i}.wk", f"l{i}.bk",
            f"l{i}.wv", f"l{i}.bv", f"l{i}.wo", f"l{i}.bo",
            f"l{i}.ln2_g", f"l{i}.ln2_b",
            f"l{i}.wf1", f"l{i}.bf1", f"l{i}.wf2", f"l{i}.bf2",
        ]
    names += ["lnf_g", "lnf_b"]
    return names


class LMParams:
    """Backbone parameters: named leaf nodes in declared order."""

    def __init__(self, config: LMConfig, nodes: dict[str, Node], frozen: bool = False):
        self.config = config
        self.names = param_names(config)
        missing = [n for n in self.names if n not in nodes]
        if missing:
            raise ValueError(f"missing parameters: {missing[:3]}...")
        self.nodes = nodes
        self.frozen = frozen

    @classmethod
    def init_random(cls, config: LMConfig, rng: np.random.Generator) -> "LMParams":
        d, f, v = config.dim, config.ff_dim, config.vocab_size
        dt = config.np_dtype

        def w(shape, std=0.02):
            return Node(rng.normal(0.0, std, size=shape).astype(dt), requires_grad=True)

        def zeros(shape):
            return Node(np.zeros(shape, dtype=dt), requires_grad=True)

        def ones(shape):
            return Node(np.ones(shape, dtype=dt), requires_grad=True)

        # embedding scale 0.1 keeps init logits healthy under weight tying and
        # puts token rows on the same footing as injected adapter outputs
        nodes = {"tok_emb": w((v, d), 0.1), "pos_emb": w((config.max_context, d), 0.01)}
        for i in range(config.layers):
            nodes[f"l{i}.ln1_g"] = ones((1, d))
            nodes[f"l{i}.ln1_b"] = zeros((1, d))
            for nm in ("wq", "wk", "wv", "wo"):
                nodes[f"l{i}.{nm}"] = w((d, d))
            for nm in ("bq", "bk", "bv", "bo"):
                nodes[f"l{i}.{nm}"] = zeros((1, d))
            nodes[f"l{i}.ln2_g"] = ones((1, d))
            nodes[f"l{i}.ln2_b"] = zeros((1, d))
            nodes[f"l{i}.wf1"] = w((d, f))
            nodes[f"l{i}.bf1"] = zeros((1, f))
            nodes[f"l{i}.wf2"] = w((f, d))
            nodes[f"l{i}.bf2"] = zeros((1, d))
        nodes["lnf_g"] = ones((1, d))
        nodes["lnf_b"] = zeros((1, d))
        return cls(config, nodes)

    def __getitem__(self, name: str) -> Node:
        return self.nodes[name]

    def all_nodes(self) -> list[Node]:
        return [self.nodes[n] for n in self.names]

    def content_hash(self) -> str:
        """SHA-256 over the canonical little-endian float32 serialization."""
        h = hashlib.sha256()
        for name in self.names:
            h.update(self.nodes[name].value.astype("<f4").tobytes())
        return h.hexdigest()

    def parameter_count(self) -> int:
        return sum(n.value.size for n in self.all_nodes())


def freeze(params: LMParams) -> LMParams:
    """Clear requires-grad on every backbone parameter and record the hash."""
    for node in params.all_nodes():
        node.requires_grad = False
        node.zero_grad()
    params.frozen = True
    params.frozen_hash = params.content_hash()
    return params


_MASK_CACHE: dict = {}


def causal_mask(t: int, dtype) -> np.ndarray:
    key = (t, np.dtype(dtype).str)
    m = _MASK_CACHE.get(key)
    if m is None:
        m = np.triu(np.full((t, t), _MASK_FILL, dtype=dtype), k=1)
        _MASK_CACHE[key] = m
    return m


def assemble_input(params: LMParams, assembly: ContextAssembly, prefix=()) -> Node:
    """Embed the assembly segments plus generated-prefix tokens, add positions."""
    d = params.config.dim
    tok_emb = params["tok_emb"]
    parts: list[Node] = []
    for seg in assembly.segments:
        if isinstance(seg, TokenSegment):
            if len(seg):
                parts.append(ag.embed_rows(tok_emb, seg.ids))
        elif isinstance(seg, EmbeddingSegment):
            mat = seg.matrix
            node = mat if isinstance(mat, Node) else ag.constant(np.asarray(mat))
            if node.shape[0] != d:
                raise ContextError(f"embedding segment has {node.shape[0]} rows, model dim is {d}")
            parts.append(ag.transpose(node))
        else:
            raise ContextError(f"unknown segment type {type(seg).__name__}")
    if len(prefix):
        parts.append(ag.embed_rows(tok_emb, prefix))
    if not parts:
        raise ContextError("empty context")
    x = ag.concat_rows(parts) if len(parts) > 1 else parts[0]
    t = x.shape[0]
    if t > params.config.max_context:
        raise ContextError(f"context length {t} exceeds maximum {params.config.max_context}")
    return ag.add(x, ag.slice_rows(params["pos_emb"], 0, t))


def _block(params: LMParams, i: int, x: Node, mask: np.ndarray) -> Node:
    cfg = params.config
    hdim = cfg.head_dim
    p = lambda nm: params[f"l{i}.{nm}"]

    h = ag.layer_norm(x, p("ln1_g"), p("ln1_b"))
    q = ag.add(ag.matmul(h, p("wq")), p("bq"))
    k = ag.add(ag.matmul(h, p("wk")), p("bk"))
    v = ag.add(ag.matmul(h, p("wv")), p("bv"))
    heads = []
    for hx in range(cfg.heads):
        lo, hi = hx * hdim, (hx + 1) * hdim
        qh, kh, vh = (ag.slice_cols(m, lo, hi) for m in (q, k, v))
        scores = ag.add_const(ag.scale(ag.matmul_nt(qh, kh), 1.0 / np.sqrt(hdim)), mask)
        heads.append(ag.matmul(ag.softmax_rows(scores), vh))
    attn = ag.add(ag.matmul(ag.concat_cols(heads), p("wo")), p("bo"))
    x = ag.add(x, attn)

    h2 = ag.layer_norm(x, p("ln2_g"), p("ln2_b"))
    ff = ag.add(ag.matmul(ag.gelu(ag.add(ag.matmul(h2, p("wf1")), p("bf1"))), p("wf2")), p("bf2"))
    return ag.add(x, ff)


def lm_forward(params: LMParams, assembly: ContextAssembly, prefix=()) -> Node:
    """Logits at every generated position.

    Row 0 predicts the first generated token (from the last assembly slot);
    row t predicts the token after ``prefix[t-1]``. Differentiable w.r.t. any
    Node-backed embedding segment regardless of the frozen flag.
    """
    prefix = tuple(int(t) for t in prefix)
    x = assemble_input(params, assembly, prefix)
    t = x.shape[0]
    mask = causal_mask(t, x.value.dtype)
    for i in range(params.config.layers):
        x = _block(params, i, x, mask)
    x = ag.layer_norm(x, params["lnf_g"], params["lnf_b"])
    gen_start = len(assembly) - 1
    if gen_start < 0 or gen_start >= t:
        raise ContextError("assembly must be nonempty")
    x_gen = ag.slice_rows(x, gen_start, t) if gen_start else x
    return ag.matmul_nt(x_gen, params["tok_emb"])


def sequence_loss(params: LMParams, ids, target_start: int) -> Node:
    """Mean cross-entropy over ``ids[target_start:]`` (the assistant span)."""
    ids = list(int(t) for t in ids)
    if not (0 < target_start < len(ids)):
        raise ContextError("target span must be a nonempty proper suffix")
    assembly = ContextAssembly([TokenSegment(tuple(ids[:target_start]))])
    logits = lm_forward(params, assembly, ids[target_start:-1])
    return ag.cross_entropy(logits, ids[target_start:])


# ---------------------------------------------------------------------------
# incremental inference with key/value caches
# ---------------------------------------------------------------------------

class InferenceSession:
    """Numpy-only forward with per-layer caches for token-by-token decoding."""

    def __init__(self, params: LMParams, assembly: ContextAssembly):
        self.params = params
        self.cfg = params.config
        self._w = {n: params[n].value for n in params.names}
        x = self._embed_assembly(assembly)
        self.position = x.shape[0]
        if self.position > self.cfg.max_context:
            raise ContextError(f"context length {self.position} exceeds maximum")
        self.keys = []
        self.values = []
        mask = causal_mask(x.shape[0], x.dtype)
        for i in range(self.cfg.layers):
            x = self._block_full(i, x, mask)
        self.last_logits = self._project(x[-1:])[0]

    def _embed_assembly(self, assembly: ContextAssembly) -> np.ndarray:
        w = self._w
        dt = self.cfg.np_dtype
        parts = []
        for seg in assembly.segments:
            if isinstance(seg, TokenSegment):
                if len(seg):
                    parts.append(w["tok_emb"][list(seg.ids)])
            else:
                m = seg.value
                if m.shape[0] != self.cfg.dim:
                    raise ContextError("embedding segment dim mismatch")
                parts.append(m.T.astype(dt))
        if not parts:
            raise ContextError("empty context")
        x = np.concatenate(parts, axis=0).astype(dt)
        return x + w["pos_emb"][: x.shape[0]]

    def _block_full(self, i: int, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
        w = self._w
        cfg = self.cfg
        hdim = cfg.head_dim
        h = ag.layer_norm_np(x, w[f"l{i}.ln1_g"], w[f"l{i}.ln1_b"])
        q = h @ w[f"l{i}.wq"] + w[f"l{i}.bq"]
        k = h @ w[f"l{i}.wk"] + w[f"l{i}.bk"]
        v = h @ w[f"l{i}.wv"] + w[f"l{i}.bv"]
        self.keys.append(k)
        self.values.append(v)
        outs = []
        for hx in range(cfg.heads):
            lo, hi = hx * hdim, (hx + 1) * hdim
            scores = (q[:, lo:hi] @ k[:, lo:hi].T) / np.sqrt(hdim) + mask
            outs.append(ag.softmax_rows_np(scores) @ v[:, lo:hi])
        x = x + (np.concatenate(outs, axis=1) @ w[f"l{i}.wo"] + w[f"l{i}.bo"])
        h2 = ag.layer_norm_np(x, w[f"l{i}.ln2_g"], w[f"l{i}.ln2_b"])
        return x + (ag.gelu_np(h2 @ w[f"l{i}.wf1"] + w[f"l{i}.bf1"]) @ w[f"l{i}.wf2"] + w[f"l{i}.bf2"])

    def _project(self, x: np.ndarray) -> np.ndarray:
        w = self._w
        x = ag.layer_norm_np(x, w["lnf_g"], w["lnf_b"])
        return x @ w["tok_emb"].T

    def step(self, token_id: int) -> np.ndarray:
        """Append one generated token; returns logits for the next position."""
        if self.position >= self.cfg.max_context:
            raise ContextError("context overflow during generation")
        w = self._w
        cfg = self.cfg
        hdim = cfg.head_dim
        x = w["tok_emb"][int(token_id)][None, :] + w["pos_emb"][self.position]
        self.position += 1
        for i in range(cfg.layers):
            h = ag.layer_norm_np(x, w[f"l{i}.ln1_g"], w[f"l{i}.ln1_b"])
            q = h @ w[f"l{i}.wq"] + w[f"l{i}.bq"]
            k = h @ w[f"l{i}.wk"] + w[f"l{i}.bk"]
            v = h @ w[f"l{i}.wv"] + w[f"l{i}.bv"]
            self.keys[i] = np.concatenate([self.keys[i], k], axis=0)
            self.values[i] = np.concatenate([self.values[i], v], axis=0)
            ka, va = self.keys[i], self.values[i]
            outs = []
            for hx in range(cfg.heads):
                lo, hi = hx * hdim, (hx + 1) * hdim
                scores = (q[:, lo:hi] @ ka[:, lo:hi].T) / np.sqrt(hdim)
                outs.append(ag.softmax_rows_np(scores) @ va[:, lo:hi])
            x = x + (np.concatenate(outs, axis=1) @ w[f"l{i}.wo"] + w[f"l{i}.bo"])
            h2 = ag.layer_norm_np(x, w[f"l{i}.ln2_g"], w[f"l{i}.ln2_b"])
            x = x + (ag.gelu_np(h2 @ w[f"l{i}.wf1"] + w[f"l{i}.bf1"]) @ w[f"l{i}.wf2"] + w[f"l{i}.bf2"])
        self.last_logits = self._project(x)[0]
        return self.last_logits

    def fork(self) -> "InferenceSession":
        clone = object.__new__(InferenceSession)
        clone.params = self.params
        clone.cfg = self.cfg
        clone._w = self._w
        clone.position = self.position
        clone.keys = [k.copy() for k in self.keys]
        clone.values = [v.copy() for v in self.values]
        clone.last_logits = self.last_logits.copy()
        return clone


def generate_sample(params: LMParams, assembly: ContextAssembly, temperature: float,
                    max_new_tokens: int, rng: np.random.Generator) -> list[int]:
    """Temperature sampling until <eos> or the length cap; <eos> is dropped."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    sess = InferenceSession(params, assembly)
    out: list[int] = []
    logits = sess.last_logits
    for _ in range(max_new_tokens):
        probs = ag.softmax_rows_np(logits[None, :].astype(np.float64), temperature)[0]
        tok = ag.sample_categorical(probs, rng)
        if tok == EOS_ID:
            break
        out.append(tok)
        logits = sess.step(tok)
    return out


@dataclass
class BeamResult:
    tokens: list[int]
    score: float
    finished: bool


def generate_beam(params: LMParams, assembly: ContextAssembly, beam_size: int = 4,
                  max_new_tokens: int = 40) -> BeamResult:
    """Length-normalized beam search.

    A hypothesis score is the mean token log-probability including the
    terminating <eos>. Unfinished hypotheses are scored over their emitted
    tokens; if nothing finishes the best unfinished one is returned with
    ``finished=False``. Ties break toward the lexicographically smallest
    token sequence.
    """
    if beam_size < 1:
        raise ValueError("beam size must be >= 1")
    root = InferenceSession(params, assembly)
    live = [((), 0.0, root)]
    done: list[tuple[float, tuple]] = []
    for _ in range(max_new_tokens):
        candidates = []
        for tokens, logp, sess in live:
            row = sess.last_logits.astype(np.float64)
            logprobs = row - _logsumexp(row)
            for tok in range(row.shape[0]):
                candidates.append((logp + logprobs[tok], tokens, tok, sess))
        candidates.sort(key=lambda c: (-c[0], c[1] + (c[2],)))
        next_live = []
        # only the top beam_size candidates survive, finished or not, so a
        # width-1 beam reduces exactly to greedy decoding
        for total, tokens, tok, sess in candidates[:beam_size]:
            if tok == EOS_ID:
                done.append((total / (len(tokens) + 1), tokens))
            else:
                forked = sess.fork()
                forked.step(tok)
                next_live.append((tokens + (tok,), total, forked))
        live = next_live
        if not live:
            break
    if done:
        done.sort(key=lambda d: (-d[0], d[1]))
        score, tokens = done[0]
        return BeamResult(list(tokens), score, True)
    best = max(live, key=lambda h: (h[1] / max(len(h[0]), 1), tuple(-t for t in h[0])))
    tokens, logp, _ = best
    return BeamResult(list(tokens), logp / max(len(tokens), 1), False)


def _logsumexp(row: np.ndarray) -> float:
    m = row.max()
    return float(m + np.log(np.exp(row - m).sum()))


def teacher_forced_logits(params: LMParams, assembly: ContextAssembly, targets) -> np.ndarray:
    """Per-position logits for a fixed target sequence, inference path."""
    targets = [int(t) for t in targets]
    if not targets:
        raise ContextError("no targets")
    sess = InferenceSession(params, assembly)
    rows = [sess.last_logits]
    for tok in targets[:-1]:
        rows.append(sess.step(tok))
    return np.stack(rows, axis=0)
