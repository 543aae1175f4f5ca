"""Backbone pretraining on the text-only dialogue corpus."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .backbone import LMConfig, LMParams, sequence_loss
from .corpus import CorpusItem
from .optim import Adam, clip_global_norm, lr_schedule
from .world import stable_seed


@dataclass
class PretrainSettings:
    iters: int = 3000
    batch_size: int = 8
    peak_lr: float = 3e-4
    warmup: int = 200
    grad_clip: float = 1.0
    weight_decay: float = 0.01
    val_fraction: float = 0.05
    val_every: int = 500
    seed: int = 0
    log_every: int = 100


def split_corpus(items: list[CorpusItem], val_fraction: float, seed: int):
    rng = np.random.Generator(np.random.PCG64(stable_seed(seed, "corpus-split")))
    order = rng.permutation(len(items))
    n_val = max(1, int(len(items) * val_fraction))
    val_idx = set(int(i) for i in order[:n_val])
    train = [it for i, it in enumerate(items) if i not in val_idx]
    val = [it for i, it in enumerate(items) if i in val_idx]
    return train, val


def corpus_perplexity(params: LMParams, items: list[CorpusItem], cap: int = 200) -> float:
    """Token-weighted perplexity over assistant spans."""
    total_nll = 0.0
    total_tokens = 0
    for item in items[:cap]:
        n = len(item.ids) - item.target_start
        loss = sequence_loss(params, item.ids, item.target_start)
        total_nll += float(loss.value[0, 0]) * n
        total_tokens += n
    if total_tokens == 0:
        raise ValueError("no evaluation tokens")
    return float(np.exp(total_nll / total_tokens))


def pretrain_lm(config: LMConfig, items: list[CorpusItem],
                settings: PretrainSettings | None = None,
                progress=None) -> tuple[LMParams, list[dict]]:
    """Train a fresh backbone on rendered dialogues; loss covers assistant
    spans only. Returns the parameters and the metric history."""
    settings = settings or PretrainSettings()
    if not items:
        raise ValueError("empty corpus")
    vmax = max(max(it.ids) for it in items)
    if vmax >= config.vocab_size:
        raise ValueError(f"corpus id {vmax} outside vocab of {config.vocab_size}")

    rng = np.random.Generator(np.random.PCG64(stable_seed(settings.seed, "pretrain")))
    params = LMParams.init_random(config, rng)
    train_items, val_items = split_corpus(items, settings.val_fraction, settings.seed)
    opt = Adam(params.all_nodes(), weight_decay=settings.weight_decay)
    decay = max(1, settings.iters - settings.warmup)
    history: list[dict] = []

    for it in range(1, settings.iters + 1):
        idx = rng.integers(0, len(train_items), size=settings.batch_size)
        opt.zero_grad()
        batch_loss = 0.0
        for i in idx:
            item = train_items[int(i)]
            loss = ag.scale(
                sequence_loss(params, item.ids, item.target_start),
                1.0 / settings.batch_size,
            )
            ag.backward(loss)
            batch_loss += float(loss.value[0, 0])
        clip_global_norm(params.all_nodes(), settings.grad_clip)
        lr = lr_schedule(it, settings.peak_lr, settings.warmup, decay)
        opt.step(lr)

        row = {"iteration": it, "lr": lr, "train_loss": batch_loss, "val_ppl": ""}
        if it % settings.val_every == 0 or it == settings.iters:
            row["val_ppl"] = corpus_perplexity(params, val_items)
        history.append(row)
        if progress and (it % settings.log_every == 0 or it == settings.iters):
            progress(row)
    return params, history
