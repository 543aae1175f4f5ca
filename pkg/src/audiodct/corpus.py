"""Text-only dialogue corpus for backbone pretraining.

The frozen language model needs four text-side skills before any audio is
involved: continuing a caption as a dialogue (no system prompt), answering
questions about a caption, normalizing a caption on request, and following a
couple of free-form instructions. Each corpus item is a rendered chat with a
loss span over the assistant reply.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import prompts
from .lexicon import (
    COUNT_QUESTION,
    EVENT_TYPES,
    ORDER_FIRST_QUESTION,
    ORDER_LAST_QUESTION,
    EventType,
    event,
)
from .tokenizer import ChatMessage, Vocabulary, build_vocab, render_dialogue
from .world import QAPair, WorldConfig, canonical_caption, gen_captions, gen_scene, stable_seed

RESPONSE_TEMPLATES = (
    "what a lovely scene ! the sounds of {chain} fill the air !",
    "how delightful ! i can hear {chain} .",
    "that sounds like {chain} . what a vivid soundscape !",
    "oh , the soothing sound of {chain} ! so calming , right ?",
    "amazing ! {chain} makes for quite an atmosphere .",
    "i love it ! there is nothing like {chain} to set the mood .",
)


@dataclass(frozen=True)
class CorpusItem:
    ids: tuple
    target_start: int
    kind: str  # dialogue | qa | normalize | instruct


def canonical_chain(scene) -> str:
    evs = [event(k) for k in scene.event_keys()]
    if len(evs) == 1:
        return evs[0].gerund
    return " and then ".join(e.gerund for e in evs)


def dialogue_response(scene, template_idx: int) -> str:
    return RESPONSE_TEMPLATES[template_idx % len(RESPONSE_TEMPLATES)].format(
        chain=canonical_chain(scene)
    )


def presence_answer(ev: EventType, present: bool) -> str:
    body = ev.presence_q.rstrip(" ?")
    if body.startswith("are there "):
        rest = body[len("are there "):]
        return f"yes , there are {rest} !" if present else f"no , there are no {rest} ."
    rest = body[len("is there "):]
    if present:
        return f"yes , there is {rest} !"
    for article in ("a ", "an "):
        if rest.startswith(article):
            rest = rest[len(article):]
            break
    return f"no , there is no {rest} ."


def count_answer(n: int) -> str:
    if n == 1:
        return "there is 1 sound event ."
    return f"there are {n} sound events ."


def order_answer(match: str, first: bool) -> str:
    return f"{match} comes {'first' if first else 'last'} ."


def qa_answer_text(scene, qa) -> str:
    if qa.kind == "presence":
        ev = next(e for e in EVENT_TYPES if e.presence_q == qa.question)
        return presence_answer(ev, qa.answer == "yes")
    if qa.kind == "count":
        return count_answer(int(qa.answer))
    return order_answer(qa.answer, "first" in qa.question)


def corpus_qa(scene, rng: np.random.Generator) -> list[QAPair]:
    """Denser question set than the evaluation suite uses: presence asked for
    every present event and exactly as many absent ones, so the model learns
    to check the caption instead of defaulting to the majority answer."""
    keys = scene.event_keys()
    pairs = [QAPair(event(k).presence_q, "yes", "presence") for k in keys]
    absent = [e.key for e in EVENT_TYPES if e.key not in keys]
    picks = rng.choice(np.array(absent), size=min(len(keys), len(absent)), replace=False)
    pairs.extend(QAPair(event(str(k)).presence_q, "no", "presence") for k in picks)
    pairs.append(QAPair(COUNT_QUESTION, str(len(keys)), "count"))
    if len(keys) >= 2:
        pairs.append(QAPair(ORDER_FIRST_QUESTION, event(keys[0]).match, "order"))
        pairs.append(QAPair(ORDER_LAST_QUESTION, event(keys[-1]).match, "order"))
    return pairs


def build_corpus(seed: int, n_scenes: int, vocab: Vocabulary,
                 config: WorldConfig | None = None) -> list[CorpusItem]:
    """Render the pretraining mixture from freshly sampled corpus scenes."""
    config = config or WorldConfig()
    items: list[CorpusItem] = []
    rng = np.random.Generator(np.random.PCG64(stable_seed(seed, "corpus")))

    def render(messages, kind):
        ids, start = render_dialogue(messages, vocab)
        items.append(CorpusItem(tuple(ids), start, kind))

    for i in range(n_scenes):
        scene = gen_scene(_rng(seed, "corpus-scene", i), config, f"corpus-{i:06d}")
        captions = gen_captions(scene, _rng(seed, "corpus-captions", i), config.captions_per_scene)
        canonical = canonical_caption(scene)

        # dialogue continuation: every variant, two response draws each
        for cap in captions:
            for draw in rng.integers(0, len(RESPONSE_TEMPLATES), size=2):
                render(
                    [ChatMessage("user", [cap.text]),
                     ChatMessage("assistant", [dialogue_response(scene, int(draw))])],
                    "dialogue",
                )

        # question answering: presence questions appear over the canonical
        # caption (literal phrase overlap) AND over a variant (synonyms and
        # flipped order); count/order once over a random variant
        for qa in corpus_qa(scene, rng):
            if qa.kind == "presence":
                caps = [captions[0], captions[int(rng.integers(len(captions)))]]
            else:
                caps = [captions[int(rng.integers(len(captions)))]]
            for cap in caps:
                user = cap.text + prompts.QA_USER_SUFFIX.format(question=qa.question)
                render(
                    [ChatMessage("system", [prompts.QA_SYSTEM]),
                     ChatMessage("user", [user]),
                     ChatMessage("assistant", [qa_answer_text(scene, qa)])],
                    "qa",
                )

        # caption normalization under the evaluation prompt
        for cap in captions[: 2]:
            render(
                [ChatMessage("system", [prompts.CAPTION_EVAL_SYSTEM]),
                 ChatMessage("user", [cap.text + prompts.CAPTION_USER_SUFFIX]),
                 ChatMessage("assistant", [canonical])],
                "normalize",
            )

        # free instruction variants
        cap = captions[int(rng.integers(len(captions)))]
        render(
            [ChatMessage("system", [prompts.CAPTION_TRAIN_SYSTEM]),
             ChatMessage("user", [cap.text + prompts.CAPTION_USER_SUFFIX]),
             ChatMessage("assistant", [canonical])],
            "instruct",
        )
        render(
            [ChatMessage("system", [prompts.LIST_SOUNDS_SYSTEM]),
             ChatMessage("user", [cap.text + prompts.CAPTION_USER_SUFFIX]),
             ChatMessage("assistant", [canonical_chain(scene)])],
            "instruct",
        )

    return items


def _rng(seed: int, tag: str, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stable_seed(seed, tag, index)))


def surface_inventory(config: WorldConfig | None = None) -> list[str]:
    """Every string the world can produce; the vocabulary is built from this,
    so it is closed no matter which scenes are ever sampled."""
    config = config or WorldConfig()
    texts: list[str] = []
    for ev in EVENT_TYPES:
        texts.extend([ev.gerund, ev.clause, ev.match, ev.presence_q])
        for g, c in ev.synonyms:
            texts.extend([g, c])
        texts.append(presence_answer(ev, True))
        texts.append(presence_answer(ev, False))
        texts.append(order_answer(ev.match, True))
        texts.append(order_answer(ev.match, False))
    texts.extend(t.format(chain="") for t in RESPONSE_TEMPLATES)
    texts.extend([" and then ", " after "])
    from .lexicon import COUNT_QUESTION, ORDER_FIRST_QUESTION, ORDER_LAST_QUESTION

    texts.extend([COUNT_QUESTION, ORDER_FIRST_QUESTION, ORDER_LAST_QUESTION])
    for n in range(config.events_min, config.events_max + 1):
        texts.append(count_answer(n))
    texts.extend(prompts.task_prompt_strings())
    texts.append(prompts.QA_USER_SUFFIX.format(question=""))
    texts.append(prompts.CAPTION_USER_SUFFIX)
    return texts


def build_world_vocab(config: WorldConfig | None = None) -> Vocabulary:
    return build_vocab(surface_inventory(config))
