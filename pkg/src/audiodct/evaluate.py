"""Zero-shot inference and the evaluation suites.

Inference assembles an instruction context around the adapted audio and
decodes with beam search. Question answering is scored by a deterministic
string judge over closed-form gold answers; captioning by bag-of-content-token
F1 against the canonical caption; and the distillation probe compares
teacher-forced response likelihoods under the audio context versus the
caption-text context.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import prompts
from .adapter import adapter_forward
from .backbone import (
    ContextAssembly,
    EmbeddingSegment,
    TokenSegment,
    generate_beam,
    generate_sample,
    teacher_forced_logits,
)
from .checkpoint import Bundle
from .datasets import FileLedger, load_dataset, load_meta
from .targets import load_targets, noinst_prompt_pair, targets_path
from .tokenizer import AUDIO_SLOT, EOS_ID, ChatMessage, normalize, render_chat, split_words
from .world import FrozenFeaturizer, encoder_forward

STOPWORDS = frozenset(
    "a an the is are and then after there of on in by to it its "
    ", . ! ?".split()
)


class EvalError(Exception):
    pass


@dataclass
class InstructionSpec:
    """An inference-time instruction: optional system text plus user parts
    containing exactly one audio slot."""

    system: str | None
    user_parts: list = field(default_factory=lambda: [AUDIO_SLOT])
    beam_size: int = 4
    max_new_tokens: int = 40
    temperature: float | None = None  # sample instead of beam search when set

    def messages(self) -> list[ChatMessage]:
        msgs = []
        if self.system is not None:
            msgs.append(ChatMessage("system", [self.system]))
        msgs.append(ChatMessage("user", list(self.user_parts)))
        return msgs


def caption_instruction() -> InstructionSpec:
    return InstructionSpec(prompts.CAPTION_EVAL_SYSTEM,
                           [AUDIO_SLOT, prompts.CAPTION_USER_SUFFIX])


def qa_instruction(question: str) -> InstructionSpec:
    return InstructionSpec(prompts.QA_SYSTEM,
                           [AUDIO_SLOT, prompts.QA_USER_SUFFIX.format(question=question)])


def noinst_instruction() -> InstructionSpec:
    return InstructionSpec(None, [AUDIO_SLOT])


def audio_segment(features: np.ndarray, bundle: Bundle,
                  featurizer: FrozenFeaturizer | None = None) -> EmbeddingSegment:
    if bundle.adapter is None:
        raise EvalError("bundle has no adapter section")
    if featurizer is None:
        featurizer = FrozenFeaturizer(features.shape[1], bundle.adapter.dims.in_dim)
    embeddings = encoder_forward(features, featurizer)
    dtype = bundle.lm.config.np_dtype
    projected = adapter_forward(embeddings.astype(dtype), bundle.adapter)
    return EmbeddingSegment(projected.value)


def infer(features: np.ndarray, spec: InstructionSpec, bundle: Bundle,
          featurizer: FrozenFeaturizer | None = None,
          rng: np.random.Generator | None = None) -> str:
    """Decode a response to an instruction over one audio clip."""
    seg = audio_segment(features, bundle, featurizer)
    pair = render_chat(spec.messages(), bundle.vocab)
    assembly = ContextAssembly(
        [TokenSegment(pair.prefix), seg, TokenSegment(pair.suffix)]
    )
    if spec.temperature is not None:
        if rng is None:
            raise EvalError("sampling inference needs a generator")
        ids = generate_sample(bundle.lm, assembly, spec.temperature,
                              spec.max_new_tokens, rng)
    else:
        ids = generate_beam(bundle.lm, assembly, spec.beam_size,
                            spec.max_new_tokens).tokens
    return bundle.vocab.decode(ids)


# ---------------------------------------------------------------------------
# judging and metrics
# ---------------------------------------------------------------------------

def judge_aqa(prediction: str, gold: str) -> str:
    """Deterministic verdict over a closed-form gold answer.

    yes/no golds go by the first yes/no token (an opening run containing both
    is judged incorrect); count golds by the first integer token; event and
    order golds by substring match of the canonical phrase.
    """
    tokens = split_words(prediction)
    text = " ".join(tokens)
    gold = gold.strip().lower()
    if gold in ("yes", "no"):
        leading: set[str] = set()
        for tok in tokens:
            if tok in ("yes", "no"):
                leading.add(tok)
            elif tok.isalnum():
                break
        if len(leading) > 1:
            return "incorrect"
        for tok in tokens:
            if tok in ("yes", "no"):
                return "correct" if tok == gold else "incorrect"
        return "incorrect"
    if gold.isdigit():
        for tok in tokens:
            if tok.isdigit():
                return "correct" if int(tok) == int(gold) else "incorrect"
        return "incorrect"
    return "correct" if normalize(gold) in text else "incorrect"


def content_tokens(text: str) -> list[str]:
    return [t for t in split_words(text) if t not in STOPWORDS]


def token_f1(prediction: str, reference: str) -> float:
    """Multiset F1 over content tokens, in percent."""
    pred = content_tokens(prediction)
    ref = content_tokens(reference)
    if not pred or not ref:
        return 100.0 if pred == ref else 0.0
    from collections import Counter

    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 100.0 * 2 * precision * recall / (precision + recall)


@dataclass
class EvalReport:
    suite: str
    items: list[dict]
    aggregates: dict

    def to_json(self) -> str:
        return json.dumps(
            {"suite": self.suite, "aggregates": self.aggregates, "items": self.items},
            sort_keys=True,
            indent=2,
        ) + "\n"

    def aggregates_csv(self) -> str:
        keys = sorted(self.aggregates)
        head = ",".join(["suite"] + keys)
        row = ",".join([self.suite] + [_csv_cell(self.aggregates[k]) for k in keys])
        return head + "\n" + row + "\n"

    def save(self, out_dir, stem: str) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jpath = out / f"{stem}.json"
        cpath = out / f"{stem}.csv"
        jpath.write_text(self.to_json())
        cpath.write_text(self.aggregates_csv())
        return jpath, cpath


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _iter_features(records, data_dir, ledger=None):
    for rec in records:
        yield rec, rec.load_features(data_dir, ledger)


def eval_aqa(bundle: Bundle, data_dir, split: str = "test",
             progress=None) -> EvalReport:
    """Accuracy over every QA pair of the split, via the QA instruction."""
    records = load_dataset(data_dir, split)
    meta = load_meta(data_dir)
    featurizer = FrozenFeaturizer(meta["config"]["feature_dim"], meta["config"]["embed_dim"])
    items = []
    correct = 0
    total = 0
    for rec, feats in _iter_features(records, data_dir):
        if not rec.qa:
            continue
        seg = audio_segment(feats, bundle, featurizer)
        for qa in rec.qa:
            pred = _decode_with_segment(bundle, seg, qa_instruction(qa.question))
            verdict = judge_aqa(pred, qa.answer)
            correct += verdict == "correct"
            total += 1
            items.append({
                "id": rec.scene_id, "instruction": qa.question, "kind": qa.kind,
                "prediction": pred, "gold": qa.answer, "verdict": verdict,
            })
        if progress and total % 100 < len(rec.qa):
            progress(f"aqa: {total} questions judged")
    if total == 0:
        raise EvalError(f"split {split!r} holds no QA pairs")
    return EvalReport(
        "aqa", items,
        {"accuracy": 100.0 * correct / total, "correct": correct, "total": total},
    )


def eval_aac(bundle: Bundle, data_dir, split: str = "test",
             progress=None) -> EvalReport:
    """Mean token-F1 of beam-decoded captions against canonical captions."""
    records = load_dataset(data_dir, split)
    if not records:
        raise EvalError(f"split {split!r} is empty")
    meta = load_meta(data_dir)
    featurizer = FrozenFeaturizer(meta["config"]["feature_dim"], meta["config"]["embed_dim"])
    items = []
    scores = []
    spec = caption_instruction()
    for i, (rec, feats) in enumerate(_iter_features(records, data_dir)):
        seg = audio_segment(feats, bundle, featurizer)
        pred = _decode_with_segment(bundle, seg, spec)
        gold = normalize(rec.canonical_caption())
        f1 = token_f1(pred, gold)
        scores.append(f1)
        items.append({
            "id": rec.scene_id, "instruction": spec.system, "prediction": pred,
            "gold": gold, "token_f1": f1,
        })
        if progress and (i + 1) % 100 == 0:
            progress(f"aac: {i + 1} captions scored")
    return EvalReport(
        "aac", items,
        {"token_f1": float(np.mean(scores)), "items": len(scores)},
    )


def _decode_with_segment(bundle: Bundle, seg: EmbeddingSegment,
                         spec: InstructionSpec) -> str:
    pair = render_chat(spec.messages(), bundle.vocab)
    assembly = ContextAssembly(
        [TokenSegment(pair.prefix), seg, TokenSegment(pair.suffix)]
    )
    ids = generate_beam(bundle.lm, assembly, spec.beam_size, spec.max_new_tokens).tokens
    return bundle.vocab.decode(ids)


def _per_token_metrics(lm, assembly_audio, assembly_text, targets):
    la = teacher_forced_logits(lm, assembly_audio, targets).astype(np.float64)
    lt = teacher_forced_logits(lm, assembly_text, targets).astype(np.float64)
    ids = np.asarray(targets)
    pos = np.arange(len(ids))

    def log_softmax(z):
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    lpa, lpt = log_softmax(la), log_softmax(lt)
    ce_a = -lpa[pos, ids]
    ce_t = -lpt[pos, ids]
    # KL(text || audio): how far the audio-driven next-token law drifts from
    # the caption-text teacher at each position
    pt = np.exp(lpt)
    kl = (pt * (lpt - lpa)).sum(axis=1)
    return float(np.abs(ce_a - ce_t).mean()), float(kl.mean())


def eval_distill(bundle: Bundle, data_dir, targets_dir, split: str = "val",
                 cap: int = 0) -> EvalReport:
    """Teacher-force each stored response under the audio context and under
    the caption-text context; report the likelihood gap and KL drift."""
    records = load_dataset(data_dir, split)
    target_map = {
        (t.scene_id, t.caption): t
        for t in load_targets(targets_path(targets_dir, split))
    }
    meta = load_meta(data_dir)
    featurizer = FrozenFeaturizer(meta["config"]["feature_dim"], meta["config"]["embed_dim"])
    vocab = bundle.vocab
    pair = noinst_prompt_pair(vocab)
    lm_hash = bundle.lm.content_hash()
    items = []
    gaps, kls = [], []
    n = 0
    for rec, feats in _iter_features(records, data_dir):
        seg = audio_segment(feats, bundle, featurizer)
        for cap_var in rec.captions:
            text = normalize(cap_var.text)
            record = target_map.get((rec.scene_id, text))
            if record is None:
                raise EvalError(f"missing stored response for {rec.scene_id}/{text!r}")
            if record.model_hash != lm_hash:
                raise EvalError("stored responses come from a different backbone")
            targets = tuple(vocab.encode(record.response)) + (EOS_ID,)
            a_audio = ContextAssembly(
                [TokenSegment(pair.prefix), seg, TokenSegment(pair.suffix)]
            )
            a_text = ContextAssembly(
                [TokenSegment(pair.prefix), TokenSegment(tuple(vocab.encode(text))),
                 TokenSegment(pair.suffix)]
            )
            gap, kl = _per_token_metrics(bundle.lm, a_audio, a_text, targets)
            gaps.append(gap)
            kls.append(kl)
            items.append({"id": rec.scene_id, "caption": text,
                          "ce_gap": gap, "kl": kl})
            n += 1
            if cap and n >= cap:
                break
        if cap and n >= cap:
            break
    if not items:
        raise EvalError("no items for the distillation probe")
    return EvalReport(
        "distill", items,
        {"mean_ce_gap": float(np.mean(gaps)), "mean_kl": float(np.mean(kls)),
         "items": len(items)},
    )


def contains_yes_no(text: str) -> bool:
    return any(t in ("yes", "no") for t in split_words(text))


def qualitative_probe(dct_bundle: Bundle, baseline_bundle: Bundle, data_dir,
                      n: int = 50, split: str = "test",
                      progress=None) -> EvalReport:
    """Instruction-following contrast on presence questions: the pattern holds
    when the caption-trained model answers caption-like (no yes/no token) and
    the dialogue-trained model answers with a yes/no."""
    records = load_dataset(data_dir, split)
    meta = load_meta(data_dir)
    featurizer = FrozenFeaturizer(meta["config"]["feature_dim"], meta["config"]["embed_dim"])
    items = []
    hits = 0
    for rec, feats in _iter_features(records, data_dir):
        presence = [qa for qa in rec.qa if qa.kind == "presence"]
        if not presence:
            continue
        qa = presence[0]
        spec = qa_instruction(qa.question)
        base_seg = audio_segment(feats, baseline_bundle, featurizer)
        dct_seg = audio_segment(feats, dct_bundle, featurizer)
        base_pred = _decode_with_segment(baseline_bundle, base_seg, spec)
        dct_pred = _decode_with_segment(dct_bundle, dct_seg, spec)
        ok = (not contains_yes_no(base_pred)) and contains_yes_no(dct_pred)
        hits += ok
        items.append({
            "id": rec.scene_id, "question": qa.question,
            "baseline": base_pred, "dct": dct_pred, "pattern": bool(ok),
        })
        if progress and len(items) % 10 == 0:
            progress(f"probe: {len(items)} items")
        if len(items) >= n:
            break
    if not items:
        raise EvalError("no presence questions found for the probe")
    return EvalReport(
        "qualitative", items,
        {"pattern_rate": hits / len(items), "items": len(items)},
    )
