import numpy as np

from audiodct.corpus import build_corpus, build_world_vocab, dialogue_response, qa_answer_text
from audiodct.datasets import make_dataset, load_dataset
from audiodct.tokenizer import normalize
from audiodct.world import WorldConfig, gen_captions, gen_qa, gen_scene, parse_caption

vocab = build_world_vocab()
print("vocab size:", len(vocab))

config = WorldConfig()
rng = np.random.default_rng(0)

# strict tokenization of everything the world can emit
bad = []
for i in range(300):
    scene = gen_scene(np.random.default_rng(i), config, f"s{i}")
    caps = gen_captions(scene, np.random.default_rng(1000 + i), 3)
    for c in caps:
        try:
            vocab.encode(c.text)
            keys = parse_caption(normalize(c.text))
            assert keys is not None
            if sorted(keys) != sorted(scene.event_keys()):
                bad.append(("order/parse", c.text, keys, scene.event_keys()))
            if c.style != "order-flipped" and keys != scene.event_keys():
                bad.append(("order", c.style, c.text, keys, scene.event_keys()))
        except Exception as e:
            bad.append((c.text, str(e)))
    for qa in gen_qa(scene):
        try:
            vocab.encode(qa.question)
            vocab.encode(qa_answer_text(scene, qa))
        except Exception as e:
            bad.append((qa.question, str(e)))
    for t in range(6):
        try:
            vocab.encode(dialogue_response(scene, t))
        except Exception as e:
            bad.append(("resp", str(e)))
print("violations:", bad[:5], "count", len(bad))

items = build_corpus(0, 20, vocab)
print("corpus items for 20 scenes:", len(items), "kinds:",
      {k: sum(1 for i in items if i.kind == k) for k in set(i.kind for i in items)})
lens = [len(i.ids) for i in items]
print("seq len: mean", np.mean(lens), "max", max(lens))

meta = make_dataset("/tmp/world1", 0, {"train": 10, "val": 4, "test": 6})
recs = load_dataset("/tmp/world1", "test")
print("test rec qa:", [ (q.question, q.answer, q.kind) for q in recs[0].qa ])
tr = load_dataset("/tmp/world1", "train")
print("train qa empty:", all(not r.qa for r in tr))
counts = [len(r.scene.events) for r in tr]
print("event counts sample:", counts)
print(tr[0].captions)
