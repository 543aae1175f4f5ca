"""Single-file model bundles.

Layout: an 8-byte magic, a u32 format version, a u64 header length, a JSON
header (configs, template/prompt versions, vocabulary text and hash, frozen
flag, content hashes, section table), then raw little-endian float32 blobs in
the declared parameter order: backbone first, adapter second when present.
The vocabulary rides inside the header so a bundle is self-contained.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adapter import AdapterDims, AdapterParams
from .autograd import Node
from .backbone import LMConfig, LMParams, freeze, param_names
from .datasets import FileLedger
from .prompts import REGISTRY_VERSION
from .tokenizer import TEMPLATE_VERSION, Vocabulary

BUNDLE_MAGIC = b"ADCTBNDL"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def vocab_hash(vocab: Vocabulary) -> str:
    return hashlib.sha256(vocab.serialize().encode()).hexdigest()


def adapter_hash(adapter: AdapterParams) -> str:
    h = hashlib.sha256()
    for name in adapter.names:
        h.update(adapter[name].value.astype("<f4").tobytes())
    return h.hexdigest()


@dataclass
class Bundle:
    vocab: Vocabulary
    lm: LMParams
    adapter: AdapterParams | None
    header: dict

    @property
    def model_hash(self) -> str:
        return self.header["lm_content_hash"]


def save_bundle(path, vocab: Vocabulary, lm: LMParams,
                adapter: AdapterParams | None = None, extra: dict | None = None) -> dict:
    sections = []
    blobs = []
    for name in lm.names:
        v = lm[name].value
        sections.append({"name": name, "rows": int(v.shape[0]), "cols": int(v.shape[1])})
        blobs.append(v.astype("<f4").tobytes())
    if adapter is not None:
        for name in adapter.names:
            v = adapter[name].value
            sections.append({"name": name, "rows": int(v.shape[0]), "cols": int(v.shape[1])})
            blobs.append(v.astype("<f4").tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "template_version": TEMPLATE_VERSION,
        "registry_version": REGISTRY_VERSION,
        "vocab_sha256": vocab_hash(vocab),
        "vocab_text": vocab.serialize(),
        "lm_config": lm.config.to_dict(),
        "frozen": bool(lm.frozen),
        "lm_content_hash": lm.content_hash(),
        "adapter": None if adapter is None else {
            "dims": adapter.dims.to_dict(),
            "content_hash": adapter_hash(adapter),
        },
        "sections": sections,
    }
    if extra:
        header["extra"] = extra
    raw = json.dumps(header, sort_keys=True).encode()
    out = BUNDLE_MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(raw)) + raw + b"".join(blobs)
    Path(path).write_bytes(out)
    return header


def load_bundle(path, ledger: FileLedger | None = None,
                expect_vocab_hash: str | None = None) -> Bundle:
    raw = ledger.read_bytes(path) if ledger else Path(path).read_bytes()
    if len(raw) < 20 or raw[:8] != BUNDLE_MAGIC:
        raise CheckpointError(f"not a model bundle: {path}")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported bundle version {version}")
    header = json.loads(raw[20:20 + hlen].decode())
    vocab = Vocabulary.deserialize(header["vocab_text"])
    if vocab_hash(vocab) != header["vocab_sha256"]:
        raise CheckpointError("vocabulary hash mismatch inside bundle")
    if expect_vocab_hash is not None and header["vocab_sha256"] != expect_vocab_hash:
        raise CheckpointError("bundle vocabulary does not match the expected hash")
    if header["template_version"] != TEMPLATE_VERSION:
        raise CheckpointError(
            f"bundle template {header['template_version']} != runtime {TEMPLATE_VERSION}"
        )

    config = LMConfig.from_dict(header["lm_config"])
    offset = 20 + hlen
    values = {}
    for sec in header["sections"]:
        count = sec["rows"] * sec["cols"]
        blob = raw[offset:offset + 4 * count]
        if len(blob) != 4 * count:
            raise CheckpointError(f"truncated blob for section {sec['name']}")
        values[sec["name"]] = np.frombuffer(blob, dtype="<f4").reshape(
            sec["rows"], sec["cols"]
        )
        offset += 4 * count

    dt = config.np_dtype
    lm_nodes = {
        name: Node(values[name].astype(dt), requires_grad=True)
        for name in param_names(config)
    }
    lm = LMParams(config, lm_nodes, frozen=False)
    if lm.content_hash() != header["lm_content_hash"]:
        raise CheckpointError("backbone content hash mismatch")
    if header["frozen"]:
        freeze(lm)

    adapter = None
    if header.get("adapter"):
        dims = AdapterDims(**header["adapter"]["dims"])
        nodes = {
            name: Node(values[name].astype(dt), requires_grad=True)
            for name in ("adapter.w1", "adapter.b1", "adapter.w2", "adapter.b2")
        }
        adapter = AdapterParams(dims, nodes)
        if adapter_hash(adapter) != header["adapter"]["content_hash"]:
            raise CheckpointError("adapter content hash mismatch")
    return Bundle(vocab, lm, adapter, header)
