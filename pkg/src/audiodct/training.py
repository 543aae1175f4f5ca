"""Adapter optimization under the caption or dialogue-continuation objective.

The backbone stays frozen; only the four adapter arrays receive updates.
Per-sample losses are mean-token cross-entropies (so every target sequence is
normalized by its own length), averaged over the batch. The run writes a
metrics CSV, a manifest listing every file it read, periodic checkpoints, and
a full-precision state file that resumes bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import autograd as ag
from .adapter import AdapterDims, AdapterParams, adapter_forward, init_adapter
from .backbone import ContextAssembly, EmbeddingSegment, TokenSegment, lm_forward
from .checkpoint import Bundle, load_bundle, save_bundle, vocab_hash
from .datasets import FileLedger, load_dataset, load_meta
from .optim import Adam, clip_global_norm, lr_schedule
from .prompts import CAPTION_TRAIN_SYSTEM, CAPTION_USER_SUFFIX
from .targets import load_targets, noinst_prompt_pair, targets_path
from .tokenizer import (
    AUDIO_SLOT,
    EOS_ID,
    TEMPLATE_VERSION,
    ChatMessage,
    Vocabulary,
    normalize,
    render_chat,
)
from .world import FrozenFeaturizer, stable_seed

MODES = ("caption", "dct")


class TrainError(Exception):
    pass


@dataclass
class TrainConfig:
    mode: str = "dct"
    batch_size: int = 4
    warmup_iters: int = 1000
    peak_lr: float = 1e-4
    decay_iters: int = 100000
    val_every: int = 1000
    max_iters: int = 2000
    seed: int = 0
    grad_clip: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    select: str = "best"     # which checkpoint the run hands back: best | final
    val_items: int = 64      # validation subset cap
    adapter_hidden: int = 0  # 0 = model dim

    def validate(self):
        if self.mode not in MODES:
            raise TrainError(f"mode must be one of {MODES}")
        if self.select not in ("best", "final"):
            raise TrainError("select must be 'best' or 'final'")
        positive = ("batch_size", "warmup_iters", "peak_lr", "decay_iters",
                    "val_every", "max_iters")
        for name in positive:
            if getattr(self, name) <= 0:
                raise TrainError(f"{name} must be positive")
        if self.warmup_iters >= self.decay_iters:
            raise TrainError("warmup must be shorter than the decay horizon")

    def to_file_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"


_BOOLISH = {"true": True, "false": False}


def parse_train_config(text: str, overrides: dict | None = None) -> TrainConfig:
    """Flat key=value config; '#' starts a comment; unknown keys are errors."""
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TrainError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = val
    if overrides:
        values.update({k: str(v) for k, v in overrides.items() if v is not None})
    cfg = TrainConfig()
    valid = {f.name: f.type for f in fields(TrainConfig)}
    kwargs = {}
    for key, val in values.items():
        if key not in valid:
            raise TrainError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            kwargs[key] = _BOOLISH[val.lower()]
        elif isinstance(current, int):
            kwargs[key] = int(val)
        elif isinstance(current, float):
            kwargs[key] = float(val)
        else:
            kwargs[key] = val
    cfg = replace(cfg, **kwargs)
    cfg.validate()
    return cfg


@dataclass
class TrainItem:
    scene_id: str
    audio: np.ndarray        # encoder output, (in_dim x T')
    caption_ids: tuple
    target_ids: tuple        # loss targets including <eos>


@dataclass
class TrainResult:
    out_dir: Path
    bundle_path: Path
    final_path: Path
    best_path: Path | None
    metrics_path: Path
    manifest_path: Path
    state_path: Path
    best_val: float
    best_iteration: int
    final_val: float
    files_read: list[str]


def caption_prompt_pair(vocab: Vocabulary):
    return render_chat(
        [
            ChatMessage("system", [CAPTION_TRAIN_SYSTEM]),
            ChatMessage("user", [AUDIO_SLOT, CAPTION_USER_SUFFIX]),
        ],
        vocab,
    )


def build_caption_context(segment, caption_ids, vocab: Vocabulary):
    """Fixed captioning prompt around the audio; targets are the caption."""
    pair = caption_prompt_pair(vocab)
    assembly = ContextAssembly(
        [TokenSegment(pair.prefix), _as_segment(segment), TokenSegment(pair.suffix)]
    )
    return assembly, tuple(caption_ids) + (EOS_ID,)


def build_dct_context(segment, response_ids, vocab: Vocabulary):
    """No-instruction template around the audio; targets are the prepared
    response. The audio occupies exactly the caption's slot."""
    pair = noinst_prompt_pair(vocab)
    assembly = ContextAssembly(
        [TokenSegment(pair.prefix), _as_segment(segment), TokenSegment(pair.suffix)]
    )
    return assembly, tuple(response_ids) + (EOS_ID,)


def _as_segment(value) -> EmbeddingSegment:
    return value if isinstance(value, EmbeddingSegment) else EmbeddingSegment(value)


def item_loss(lm, adapter: AdapterParams, item: TrainItem, mode: str,
              vocab: Vocabulary):
    seg = EmbeddingSegment(adapter_forward(item.audio, adapter))
    if mode == "caption":
        assembly, targets = build_caption_context(seg, item.caption_ids, vocab)
    else:
        assembly, targets = build_dct_context(seg, item.target_ids[:-1], vocab)
    logits = lm_forward(lm, assembly, targets[:-1])
    return ag.cross_entropy(logits, targets)


def load_train_items(data_dir, split: str, mode: str, vocab: Vocabulary,
                     featurizer: FrozenFeaturizer, dtype, model_hash: str,
                     targets_dir=None, ledger: FileLedger | None = None) -> list[TrainItem]:
    records = load_dataset(data_dir, split, ledger)
    target_map = {}
    if mode == "dct":
        if targets_dir is None:
            raise TrainError("dct mode needs a prepared targets directory")
        for rec in load_targets(targets_path(targets_dir, split), ledger):
            if rec.model_hash != model_hash:
                raise TrainError(
                    "target records were prepared with a different backbone"
                )
            if rec.template_version != TEMPLATE_VERSION:
                raise TrainError("target records use a different template version")
            target_map[(rec.scene_id, rec.caption)] = rec

    items: list[TrainItem] = []
    for rec in records:
        audio = featurizer(rec.load_features(data_dir, ledger)).astype(dtype)
        for cap in rec.captions:
            text = normalize(cap.text)
            caption_ids = tuple(vocab.encode(text))
            if mode == "dct":
                tr = target_map.get((rec.scene_id, text))
                if tr is None:
                    raise TrainError(
                        f"missing target record for {rec.scene_id} / {text!r}"
                    )
                target_ids = tuple(vocab.encode(tr.response)) + (EOS_ID,)
            else:
                target_ids = caption_ids + (EOS_ID,)
            items.append(TrainItem(rec.scene_id, audio, caption_ids, target_ids))
    if not items:
        raise TrainError(f"no usable items in split {split!r}")
    return items


def validation_loss(lm, adapter: AdapterParams, items: list[TrainItem], mode: str,
                    vocab: Vocabulary, cap: int) -> float:
    subset = items[:cap]
    total = 0.0
    for item in subset:
        total += float(item_loss(lm, adapter, item, mode, vocab).value[0, 0])
    return total / len(subset)


def save_state(path, adapter: AdapterParams, opt: Adam, rng: np.random.Generator,
               iteration: int, best_val: float, best_iteration: int,
               config: TrainConfig, model_hash: str) -> None:
    arrays = {}
    for i, name in enumerate(adapter.names):
        arrays[f"param_{i}"] = adapter[name].value
    for i, m in enumerate(opt.m):
        arrays[f"m_{i}"] = m
    for i, v in enumerate(opt.v):
        arrays[f"v_{i}"] = v
    meta = {
        "iteration": iteration,
        "step_count": opt.step_count,
        "best_val": best_val,
        "best_iteration": best_iteration,
        "rng_state": rng.bit_generator.state,
        "config": {f.name: getattr(config, f.name) for f in fields(config)},
        "model_hash": model_hash,
        "adapter_dims": adapter.dims.to_dict(),
    }
    np.savez(path, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_state(path, adapter: AdapterParams, opt: Adam, rng: np.random.Generator,
               config: TrainConfig, model_hash: str,
               ledger: FileLedger | None = None) -> dict:
    if ledger is not None:
        ledger.note(path)
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta["model_hash"] != model_hash:
            raise TrainError("resume state belongs to a different backbone")
        if meta["adapter_dims"] != adapter.dims.to_dict():
            raise TrainError("resume state has different adapter dimensions")
        if meta["config"]["mode"] != config.mode:
            raise TrainError("resume state was trained in a different mode")
        for i, name in enumerate(adapter.names):
            value = data[f"param_{i}"]
            if value.shape != adapter[name].value.shape:
                raise TrainError(f"resume shape mismatch for {name}")
            adapter[name].value = value.copy()
        opt.m = [data[f"m_{i}"].copy() for i in range(len(adapter.names))]
        opt.v = [data[f"v_{i}"].copy() for i in range(len(adapter.names))]
    opt.step_count = meta["step_count"]
    state = dict(meta["rng_state"])
    state["state"] = {k: int(v) for k, v in meta["rng_state"]["state"].items()}
    rng.bit_generator.state = state
    return meta


def train(config: TrainConfig, data_dir, bundle_path, out_dir,
          targets_dir=None, resume=None, progress=None) -> TrainResult:
    """Run the adapter optimization end to end, writing all artifacts."""
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ledger = FileLedger()

    bundle = load_bundle(bundle_path, ledger)
    lm = bundle.lm
    if not lm.frozen:
        raise TrainError("backbone bundle must be frozen before adapter training")
    model_hash = lm.content_hash()
    vocab = bundle.vocab
    dtype = lm.config.np_dtype

    meta = load_meta(data_dir, ledger)
    featurizer = FrozenFeaturizer(meta["config"]["feature_dim"], meta["config"]["embed_dim"])
    if featurizer.content_hash() != meta["featurizer_hash"]:
        raise TrainError("dataset was rendered with a different featurizer")

    dims = AdapterDims(
        in_dim=meta["config"]["embed_dim"],
        model_dim=lm.config.dim,
        hidden=config.adapter_hidden,
    )
    train_items = load_train_items(
        data_dir, "train", config.mode, vocab, featurizer, dtype, model_hash,
        targets_dir, ledger,
    )
    val_items = load_train_items(
        data_dir, "val", config.mode, vocab, featurizer, dtype, model_hash,
        targets_dir, ledger,
    )

    rng = np.random.Generator(np.random.PCG64(stable_seed(config.seed, "train", config.mode)))
    adapter = init_adapter(rng, dims, dtype=dtype)
    opt = Adam(adapter.all_nodes(), config.adam_beta1, config.adam_beta2, config.adam_eps)

    start_iter = 0
    best_val = float("inf")
    best_iteration = 0
    if resume is not None:
        meta_state = load_state(resume, adapter, opt, rng, config, model_hash, ledger)
        start_iter = int(meta_state["iteration"])
        best_val = float(meta_state["best_val"])
        best_iteration = int(meta_state["best_iteration"])

    metrics_path = out / "metrics.csv"
    mode_csv = "a" if (resume is not None and metrics_path.exists()) else "w"
    best_path = out / "best.bundle"
    final_path = out / "final.bundle"
    state_path = out / "state.npz"
    final_val = float("nan")

    with open(metrics_path, mode_csv) as metrics:
        if mode_csv == "w":
            metrics.write("iteration,lr,train_loss,val_loss\n")
        for it in range(start_iter + 1, config.max_iters + 1):
            idx = rng.integers(0, len(train_items), size=config.batch_size)
            opt.zero_grad()
            batch_loss = 0.0
            try:
                for i in idx:
                    loss = ag.scale(
                        item_loss(lm, adapter, train_items[int(i)], config.mode, vocab),
                        1.0 / config.batch_size,
                    )
                    if not np.isfinite(loss.value[0, 0]):
                        raise ag.GradientError("non-finite batch loss")
                    ag.backward(loss)
                    batch_loss += float(loss.value[0, 0])
            except ag.GradientError as exc:
                dump = {
                    "iteration": it,
                    "batch_scenes": [train_items[int(i)].scene_id for i in idx],
                    "error": str(exc),
                }
                (out / "nan-dump.json").write_text(json.dumps(dump, indent=2))
                raise TrainError(f"numeric blowup at iteration {it}: {exc}") from exc
            clip_global_norm(adapter.all_nodes(), config.grad_clip)
            lr = lr_schedule(it, config.peak_lr, config.warmup_iters, config.decay_iters)
            opt.step(lr)

            val_str = ""
            if it % config.val_every == 0 or it == config.max_iters:
                val = validation_loss(lm, adapter, val_items, config.mode, vocab,
                                      config.val_items)
                val_str = f"{val:.6f}"
                final_val = val
                if val < best_val:
                    best_val = val
                    best_iteration = it
                    save_bundle(best_path, vocab, lm, adapter,
                                extra=_bundle_extra(config, it, val))
                if progress:
                    progress({"iteration": it, "lr": lr, "train_loss": batch_loss,
                              "val_loss": val})
            metrics.write(f"{it},{lr:.10g},{batch_loss:.6f},{val_str}\n")

    save_bundle(final_path, vocab, lm, adapter,
                extra=_bundle_extra(config, config.max_iters, final_val))
    save_state(state_path, adapter, opt, rng, config.max_iters, best_val,
               best_iteration, config, model_hash)
    if not best_path.exists():
        save_bundle(best_path, vocab, lm, adapter,
                    extra=_bundle_extra(config, config.max_iters, final_val))
        best_iteration = config.max_iters

    manifest = {
        "mode": config.mode,
        "config": {f.name: getattr(config, f.name) for f in fields(config)},
        "model_hash": model_hash,
        "vocab_sha256": vocab_hash(vocab),
        "template_version": TEMPLATE_VERSION,
        "adapter_dims": dims.to_dict(),
        "train_items": len(train_items),
        "val_items": len(val_items),
        "best_val": best_val,
        "best_iteration": best_iteration,
        "files_read": ledger.paths,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    chosen = best_path if (config.select == "best" and best_path.exists()) else final_path
    return TrainResult(
        out_dir=out,
        bundle_path=chosen,
        final_path=final_path,
        best_path=best_path if best_path.exists() else None,
        metrics_path=metrics_path,
        manifest_path=manifest_path,
        state_path=state_path,
        best_val=best_val,
        best_iteration=best_iteration,
        final_val=final_val,
        files_read=ledger.paths,
    )


def _bundle_extra(config: TrainConfig, iteration: int, val_loss: float) -> dict:
    return {
        "mode": config.mode,
        "iteration": iteration,
        "val_loss": None if not np.isfinite(val_loss) else val_loss,
        "seed": config.seed,
    }
