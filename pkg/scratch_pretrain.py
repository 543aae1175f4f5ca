import sys
import time

import numpy as np

from audiodct import prompts
from audiodct.backbone import (
    ContextAssembly, LMConfig, TokenSegment, freeze, generate_beam, generate_sample,
)
from audiodct.corpus import build_corpus, build_world_vocab
from audiodct.pretrain import PretrainSettings, corpus_perplexity, pretrain_lm, split_corpus
from audiodct.tokenizer import AUDIO_SLOT, ChatMessage, render_chat
from audiodct.checkpoint import save_bundle

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
scenes = int(sys.argv[2]) if len(sys.argv) > 2 else 400

vocab = build_world_vocab()
config = LMConfig(vocab_size=len(vocab))
items = build_corpus(0, scenes, vocab)
print(f"corpus: {len(items)} items, vocab {len(vocab)}")

t0 = time.time()
settings = PretrainSettings(iters=iters, batch_size=8, seed=0, val_every=250)
params, history = pretrain_lm(config, items, settings,
                              progress=lambda r: print(r, flush=True))
print(f"pretrain took {time.time()-t0:.0f}s")
_, val_items = split_corpus(items, settings.val_fraction, settings.seed)
print("val ppl:", corpus_perplexity(params, val_items))
freeze(params)
save_bundle("/tmp/lm_test.bundle", vocab, params)


def text_context(system, user_text):
    msgs = []
    if system:
        msgs.append(ChatMessage("system", [system]))
    msgs.append(ChatMessage("user", [AUDIO_SLOT]))
    pair = render_chat(msgs, vocab)
    ids = tuple(vocab.encode(user_text))
    return ContextAssembly([TokenSegment(pair.prefix), TokenSegment(ids), TokenSegment(pair.suffix)])


def show(label, system, user, beam=True, seeds=(0,)):
    asm = text_context(system, user)
    if beam:
        out = generate_beam(params, asm, 4, 40)
        print(f"[{label}] -> {vocab.decode(out.tokens)!r} (finished={out.finished})")
    else:
        for s in seeds:
            rng = np.random.default_rng(s)
            out = generate_sample(params, asm, 0.7, 40, rng)
            print(f"[{label} seed{s}] -> {vocab.decode(out)!r}")


cap = "a dog barking and then birds chirping"
flip = "birds chirping after a dog barking"
syn = "a puppy yapping and then small birds tweeting"

show("noinst beam", None, cap)
show("noinst sample", None, cap, beam=False, seeds=(0, 1, 2, 3))
show("noinst sample flip", None, flip, beam=False, seeds=(0, 1))
show("qa presence yes", prompts.QA_SYSTEM, cap + " . question : is there a dog barking ?")
show("qa presence no", prompts.QA_SYSTEM, cap + " . question : are there waves ?")
show("qa count", prompts.QA_SYSTEM, cap + " . question : how many sound events are there ?")
show("qa order", prompts.QA_SYSTEM, flip + " . question : what comes first ?")
show("normalize", prompts.CAPTION_EVAL_SYSTEM, syn + " .")
show("train prompt", prompts.CAPTION_TRAIN_SYSTEM, syn + " .")
show("qa waves yes", prompts.QA_SYSTEM, "waves are crashing . question : are there waves ?")

# generalization probe: fresh scenes never in the corpus vs corpus scenes
from audiodct.evaluate import judge_aqa
from audiodct.world import WorldConfig, gen_captions, gen_qa, gen_scene
from audiodct.world import stable_seed as sseed

config_w = WorldConfig()


def probe(base, label, n=120):
    stats = {}
    for i in range(n):
        scene = gen_scene(np.random.default_rng(base + i), config_w, f"{label}{i}")
        caps = gen_captions(scene, np.random.default_rng(base + 500000 + i), 3)
        cap = caps[i % len(caps)]
        for qa in gen_qa(scene):
            asm = text_context(prompts.QA_SYSTEM, cap.text + " . question : " + qa.question)
            out = generate_beam(params, asm, 4, 40)
            verdict = judge_aqa(vocab.decode(out.tokens), qa.answer)
            key = qa.kind if qa.kind != "presence" else f"presence-{qa.answer}"
            c, t = stats.get(key, (0, 0))
            stats[key] = (c + (verdict == "correct"), t + 1)
    for k, (c, t) in sorted(stats.items()):
        print(f"{label} {k}: {c}/{t} = {100*c/t:.1f}%")
    print(f"{label} overall:", sum(c for c, _ in stats.values()), "/",
          sum(t for _, t in stats.values()))


probe(900000, "fresh")
# corpus scenes use stable_seed(seed=0, "corpus-scene", i)
stats = {}
for i in range(60):
    scene = gen_scene(np.random.Generator(np.random.PCG64(sseed(0, "corpus-scene", i))), config_w, f"c{i}")
    caps = gen_captions(scene, np.random.Generator(np.random.PCG64(sseed(0, "corpus-captions", i))), 3)
    for qa in gen_qa(scene):
        asm = text_context(prompts.QA_SYSTEM, caps[0].text + " . question : " + qa.question)
        out = generate_beam(params, asm, 4, 40)
        verdict = judge_aqa(vocab.decode(out.tokens), qa.answer)
        key = qa.kind if qa.kind != "presence" else f"presence-{qa.answer}"
        c, t = stats.get(key, (0, 0))
        stats[key] = (c + (verdict == "correct"), t + 1)
for k, (c, t) in sorted(stats.items()):
    print(f"seen {k}: {c}/{t} = {100*c/t:.1f}%")
