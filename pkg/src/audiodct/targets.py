"""Training-target preparation: one sampled LM response per caption.

Each caption is fed to the frozen backbone under the no-instruction template
(role markers only, no task prompt anywhere) and a single response is sampled
at the configured temperature. The resulting records are the supervision for
dialogue-continuation training; there is exactly one record per
(scene, caption) pair, so the data volume never grows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import ContextAssembly, LMParams, TokenSegment, generate_sample
from .checkpoint import Bundle
from .datasets import FileLedger, load_dataset
from .tokenizer import (
    AUDIO_SLOT,
    TEMPLATE_VERSION,
    ChatMessage,
    Vocabulary,
    normalize,
    render_chat,
)
from .world import stable_seed


class TargetError(Exception):
    pass


@dataclass(frozen=True)
class TargetRecord:
    scene_id: str
    caption: str            # normalized caption text
    response: str           # normalized sampled response
    seed: int               # dataset-level seed the record derives from
    temperature: float
    model_hash: str
    template_version: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "scene_id": self.scene_id,
                "caption": self.caption,
                "response": self.response,
                "seed": self.seed,
                "temperature": self.temperature,
                "model_hash": self.model_hash,
                "template_version": self.template_version,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "TargetRecord":
        d = json.loads(line)
        return cls(
            d["scene_id"], d["caption"], d["response"], d["seed"],
            d["temperature"], d["model_hash"], d["template_version"],
        )


def noinst_prompt_pair(vocab: Vocabulary):
    return render_chat([ChatMessage("user", [AUDIO_SLOT])], vocab)


def build_noinst_context(caption_tokens, vocab: Vocabulary) -> ContextAssembly:
    """[<bos> <user>] Y* [<end> <assistant>] with no system block at all."""
    ids = tuple(int(t) for t in caption_tokens)
    if not ids:
        raise TargetError("empty caption")
    pair = noinst_prompt_pair(vocab)
    return ContextAssembly(
        [TokenSegment(pair.prefix), TokenSegment(ids), TokenSegment(pair.suffix)]
    )


def prepare_response(caption: str, lm: LMParams, vocab: Vocabulary, scene_id: str,
                     dataset_seed: int, temperature: float = 0.7,
                     max_new_tokens: int = 40) -> TargetRecord:
    """Sample one response for a caption; deterministic in (seed, caption).

    An immediate <eos> is resampled once with the next derived seed; a second
    empty generation is an error.
    """
    if not lm.frozen:
        raise TargetError("backbone must be frozen before target preparation")
    text = normalize(caption)
    ids = vocab.encode(text)
    assembly = build_noinst_context(ids, vocab)
    record_seed = stable_seed(dataset_seed, "target", scene_id, text)
    for attempt in (0, 1):
        rng = np.random.Generator(np.random.PCG64(record_seed + attempt))
        out = generate_sample(lm, assembly, temperature, max_new_tokens, rng)
        if out:
            return TargetRecord(
                scene_id=scene_id,
                caption=text,
                response=vocab.decode(out),
                seed=dataset_seed,
                temperature=temperature,
                model_hash=lm.content_hash(),
                template_version=TEMPLATE_VERSION,
            )
    raise TargetError(f"empty generation twice for scene {scene_id}")


def targets_path(out_dir, split: str) -> Path:
    return Path(out_dir) / f"targets-{split}.jsonl"


def load_targets(path, ledger: FileLedger | None = None) -> list[TargetRecord]:
    text = ledger.read_text(path) if ledger else Path(path).read_text()
    return [TargetRecord.from_json(line) for line in text.splitlines() if line.strip()]


def prepare_dataset(data_dir, bundle: Bundle, out_dir, split: str = "train",
                    temperature: float = 0.7, seed: int = 0,
                    max_new_tokens: int = 40, progress=None) -> dict:
    """Prepare one record per caption of a split; resumable and idempotent.

    Existing records are kept if their model hash matches the loaded
    backbone; reruns over a complete file leave it byte-identical.
    """
    if split not in ("train", "val"):
        raise TargetError("targets are prepared for train/val captions only")
    records = load_dataset(data_dir, split)
    out_path = targets_path(out_dir, split)
    model_hash = bundle.lm.content_hash()

    existing: dict[tuple, TargetRecord] = {}
    if out_path.exists():
        for rec in load_targets(out_path):
            if rec.model_hash != model_hash:
                raise TargetError(
                    f"partial output {out_path} was produced by a different backbone"
                )
            existing[(rec.scene_id, rec.caption)] = rec

    ordered: list[TargetRecord] = []
    new_count = 0
    for rec in records:
        for cap in rec.captions:
            key = (rec.scene_id, normalize(cap.text))
            if key in existing:
                ordered.append(existing[key])
                continue
            target = prepare_response(
                cap.text, bundle.lm, bundle.vocab, rec.scene_id,
                dataset_seed=seed, temperature=temperature,
                max_new_tokens=max_new_tokens,
            )
            ordered.append(target)
            new_count += 1
            if progress and new_count % 200 == 0:
                progress(f"{split}: {new_count} responses sampled")

    if new_count or not out_path.exists():
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(
            "\n".join(r.to_json() for r in ordered) + ("\n" if ordered else "")
        )

    n = len(ordered)
    lengths = [len(r.response.split()) for r in ordered]
    echo = sum(1 for r in ordered if r.response == r.caption)
    report = {
        "split": split,
        "count": n,
        "new": new_count,
        "mean_response_tokens": float(np.mean(lengths)) if lengths else 0.0,
        "echo_rate": (echo / n) if n else 0.0,
        "temperature": temperature,
        "seed": seed,
        "model_hash": model_hash,
    }
    report_path = Path(out_dir) / f"targets-{split}.report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
