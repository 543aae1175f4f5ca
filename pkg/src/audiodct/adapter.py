"""The only trainable component: frame stacking plus a two-layer projection.

Incoming audio embeddings (in_dim x T') are grouped into consecutive blocks
of five frames (tail zero-padded), each block flattened and pushed through
affine -> GELU -> affine into the language model's embedding space, giving a
(model_dim x ceil(T'/5)) segment for injection. Blocks never mix, so column
j of the output depends only on frames 5j..5j+4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Node

BLOCK = 5

ADAPTER_PARAM_NAMES = ("adapter.w1", "adapter.b1", "adapter.w2", "adapter.b2")


@dataclass(frozen=True)
class AdapterDims:
    in_dim: int          # audio embedding dim
    model_dim: int       # LM embedding dim
    hidden: int = 0      # defaults to model_dim

    def __post_init__(self):
        if self.hidden == 0:
            object.__setattr__(self, "hidden", self.model_dim)

    @property
    def stacked(self) -> int:
        return BLOCK * self.in_dim

    def to_dict(self) -> dict:
        return {"in_dim": self.in_dim, "model_dim": self.model_dim, "hidden": self.hidden}


class AdapterParams:
    """W1 (5*in_dim x hidden), b1, W2 (hidden x model_dim), b2."""

    def __init__(self, dims: AdapterDims, nodes: dict[str, Node]):
        self.dims = dims
        self.names = list(ADAPTER_PARAM_NAMES)
        self.nodes = nodes
        expected = {
            "adapter.w1": (dims.stacked, dims.hidden),
            "adapter.b1": (1, dims.hidden),
            "adapter.w2": (dims.hidden, dims.model_dim),
            "adapter.b2": (1, dims.model_dim),
        }
        for name, shape in expected.items():
            if nodes[name].shape != shape:
                raise ValueError(f"{name} has shape {nodes[name].shape}, expected {shape}")

    def __getitem__(self, name: str) -> Node:
        return self.nodes[name]

    def all_nodes(self) -> list[Node]:
        return [self.nodes[n] for n in self.names]

    def parameter_count(self) -> int:
        return sum(n.value.size for n in self.all_nodes())


def init_adapter(rng: np.random.Generator, dims: AdapterDims, dtype=np.float32) -> AdapterParams:
    """Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases."""

    def xavier(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        return Node(w, requires_grad=True)

    nodes = {
        "adapter.w1": xavier(dims.stacked, dims.hidden),
        "adapter.b1": Node(np.zeros((1, dims.hidden), dtype=dtype), requires_grad=True),
        "adapter.w2": xavier(dims.hidden, dims.model_dim),
        "adapter.b2": Node(np.zeros((1, dims.model_dim), dtype=dtype), requires_grad=True),
    }
    return AdapterParams(dims, nodes)


def adapter_forward(audio_embeddings, params: AdapterParams) -> Node:
    """(in_dim x T') -> (model_dim x ceil(T'/5)) projection node."""
    x = audio_embeddings if isinstance(audio_embeddings, Node) else ag.constant(audio_embeddings)
    in_dim, t = x.shape
    if in_dim != params.dims.in_dim:
        raise ValueError(f"expected {params.dims.in_dim} input rows, got {in_dim}")
    dtype = params["adapter.w1"].value.dtype
    x = ag.cast(x, dtype)
    frames = ag.transpose(x)  # T' x in_dim
    blocks = -(-t // BLOCK)
    pad = blocks * BLOCK - t
    if pad:
        frames = ag.concat_rows([frames, ag.constant(np.zeros((pad, in_dim), dtype=dtype))])
    stacked = ag.reshape(frames, blocks, BLOCK * in_dim)
    h = ag.gelu(ag.add(ag.matmul(stacked, params["adapter.w1"]), params["adapter.b1"]))
    out = ag.add(ag.matmul(h, params["adapter.w2"]), params["adapter.b2"])
    return ag.transpose(out)
