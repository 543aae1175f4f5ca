"""Scene generation, captions, question answering, and feature rendering.

Everything here is a pure function of (config, seed). Scenes hold ordered
sound events; captions describe them in canonical, synonym, and order-flipped
styles; QA pairs have closed-form answers derivable from the events alone.
Features are frame-by-band matrices with per-event signatures, and the frozen
featurizer maps them into the embedding space the adapter consumes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .lexicon import (
    CHAIN_CONNECTIVE,
    COUNT_QUESTION,
    EVENT_TYPES,
    FLIP_CONNECTIVE,
    ORDER_FIRST_QUESTION,
    ORDER_LAST_QUESTION,
    event,
    fragment_index,
)

FEATURIZER_SEED = 714025  # fixed forever: the featurizer is pretrained/frozen


class WorldError(Exception):
    pass


@dataclass(frozen=True)
class SceneEvent:
    type: str
    start: int
    duration: int

    @property
    def end(self) -> int:
        return self.start + self.duration


@dataclass(frozen=True)
class SyntheticScene:
    scene_id: str
    events: tuple[SceneEvent, ...]
    frames: int

    def event_keys(self) -> list[str]:
        return [e.type for e in self.events]


@dataclass(frozen=True)
class CaptionVariant:
    text: str
    style: str  # canonical | synonym | order-flipped


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    kind: str  # presence | count | order


@dataclass
class WorldConfig:
    events_min: int = 1
    events_max: int = 4
    frames_min: int = 40
    frames_max: int = 200
    duration_min: int = 12
    duration_max: int = 48
    noise_amp: float = 0.08
    feature_dim: int = 16
    embed_dim: int = 32
    captions_per_scene: int = 3
    event_keys: tuple = field(default_factory=lambda: tuple(e.key for e in EVENT_TYPES))

    def validate(self):
        if not (1 <= self.events_min <= self.events_max <= len(self.event_keys)):
            raise WorldError("bad event count range")
        if self.duration_min > self.frames_min:
            raise WorldError("minimum duration exceeds minimum scene length")
        if self.frames_min < self.events_max * 8:
            raise WorldError("scenes too short to order the maximum event count")


def stable_seed(*parts) -> int:
    """Platform-stable 64-bit seed derived from arbitrary labels."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def gen_scene(rng: np.random.Generator, config: WorldConfig, scene_id: str = "scene") -> SyntheticScene:
    """Sample a scene with distinct event types at strictly increasing starts."""
    config.validate()
    frames = int(rng.integers(config.frames_min, config.frames_max + 1))
    count = int(rng.integers(config.events_min, config.events_max + 1))
    keys = list(rng.choice(np.array(config.event_keys), size=count, replace=False))
    # one start slot per event keeps the temporal order unambiguous
    bounds = np.linspace(0, frames, count + 1).astype(int)
    events = []
    for i, key in enumerate(keys):
        lo, hi = int(bounds[i]), int(bounds[i + 1])
        max_dur = min(config.duration_max, frames - lo)
        dur = int(rng.integers(min(config.duration_min, max_dur), max_dur + 1))
        start_hi = min(hi - 1, frames - dur)
        start = int(rng.integers(lo, max(lo, start_hi) + 1))
        events.append(SceneEvent(str(key), start, dur))
    events.sort(key=lambda e: e.start)
    return SyntheticScene(scene_id, tuple(events), frames)


def canonical_caption(scene: SyntheticScene) -> str:
    evs = [event(k) for k in scene.event_keys()]
    if len(evs) == 1:
        return evs[0].clause
    return CHAIN_CONNECTIVE.join(e.gerund for e in evs)


def flipped_caption(scene: SyntheticScene) -> str:
    evs = [event(k) for k in scene.event_keys()]
    if len(evs) < 2:
        raise WorldError("order flip needs at least two events")
    return FLIP_CONNECTIVE.join(e.gerund for e in reversed(evs))


def synonym_caption(scene: SyntheticScene, rng: np.random.Generator) -> str:
    evs = [event(k) for k in scene.event_keys()]
    if len(evs) == 1:
        choices = [c for _, c in evs[0].synonyms]
        return choices[int(rng.integers(len(choices)))]
    parts = []
    for ev in evs:
        gerunds = [g for g, _ in ev.synonyms]
        parts.append(gerunds[int(rng.integers(len(gerunds)))])
    return CHAIN_CONNECTIVE.join(parts)


def gen_captions(scene: SyntheticScene, rng: np.random.Generator, k: int = 3) -> list[CaptionVariant]:
    """Canonical caption first, then an order flip (multi-event scenes) and
    synonym restatements until k variants or the grammar runs out."""
    if k < 1:
        raise WorldError("need k >= 1 captions")
    variants = [CaptionVariant(canonical_caption(scene), "canonical")]
    if len(scene.events) >= 2 and k >= 2:
        variants.append(CaptionVariant(flipped_caption(scene), "order-flipped"))
    seen = {v.text for v in variants}
    attempts = 0
    while len(variants) < k and attempts < 20:
        text = synonym_caption(scene, rng)
        attempts += 1
        if text not in seen:
            seen.add(text)
            variants.append(CaptionVariant(text, "synonym"))
    return variants[:k]


def gen_qa(scene: SyntheticScene) -> list[QAPair]:
    """Closed-form questions: presence yes, presence no, count, and (for
    multi-event scenes) one order question. Deterministic per scene."""
    h = stable_seed("qa", scene.scene_id)
    keys = scene.event_keys()
    present = event(keys[h % len(keys)])
    absent_keys = [e.key for e in EVENT_TYPES if e.key not in keys]
    absent = event(absent_keys[(h >> 8) % len(absent_keys)])
    pairs = [
        QAPair(present.presence_q, "yes", "presence"),
        QAPair(absent.presence_q, "no", "presence"),
        QAPair(COUNT_QUESTION, str(len(keys)), "count"),
    ]
    if len(keys) >= 2:
        if (h >> 16) % 2 == 0:
            pairs.append(QAPair(ORDER_FIRST_QUESTION, event(keys[0]).match, "order"))
        else:
            pairs.append(QAPair(ORDER_LAST_QUESTION, event(keys[-1]).match, "order"))
    return pairs


def parse_caption(text: str) -> list[str]:
    """Recover the ordered event keys from any generated caption.

    Raises WorldError when a fragment is not in the grammar; used as the
    truth-consistency oracle and by content checks on predictions.
    """
    index = fragment_index()
    if FLIP_CONNECTIVE.strip() and f" {FLIP_CONNECTIVE.strip()} " in f" {text} ":
        frags = text.split(FLIP_CONNECTIVE)
        frags = list(reversed(frags))
    else:
        frags = text.split(CHAIN_CONNECTIVE)
    keys = []
    for frag in frags:
        frag = frag.strip()
        if frag not in index:
            raise WorldError(f"unparseable caption fragment {frag!r}")
        keys.append(index[frag])
    return keys


# ---------------------------------------------------------------------------
# features and the frozen featurizer
# ---------------------------------------------------------------------------

def event_signature(key: str, feature_dim: int) -> np.ndarray:
    """Fixed per-event band pattern; pairwise distinct by construction."""
    idx = [e.key for e in EVENT_TYPES].index(key)
    sig = np.zeros(feature_dim)
    if idx < feature_dim:
        b1, b2 = idx % feature_dim, (idx + 1) % feature_dim
    else:
        b1, b2 = (idx - feature_dim) % feature_dim, (idx - feature_dim + 2) % feature_dim
    sig[b1] += 1.25
    sig[b2] += 0.75
    return sig


def render_features(scene: SyntheticScene, rng: np.random.Generator,
                    config: WorldConfig | None = None) -> np.ndarray:
    """(frames x feature_dim) matrix: event signatures over their intervals
    plus seeded Gaussian noise everywhere."""
    config = config or WorldConfig()
    x = np.zeros((scene.frames, config.feature_dim))
    for ev in scene.events:
        if not (0 <= ev.start < scene.frames and ev.end <= scene.frames):
            raise WorldError(f"event outside scene: {ev}")
        x[ev.start:ev.end] += event_signature(ev.type, config.feature_dim)
    if config.noise_amp > 0:
        x += rng.normal(0.0, config.noise_amp, size=x.shape)
    return x


class FrozenFeaturizer:
    """Stride-2 temporal averaging followed by a fixed affine map.

    Weights are derived from a constant seed once and never trained, standing
    in for a pretrained audio encoder. Output is (embed_dim x T') with
    T' = ceil(T / 2); an odd final frame is averaged against zero padding.
    """

    def __init__(self, feature_dim: int = 16, embed_dim: int = 32):
        self.feature_dim = feature_dim
        self.embed_dim = embed_dim
        rng = np.random.Generator(np.random.PCG64(stable_seed(FEATURIZER_SEED, feature_dim, embed_dim)))
        self.weight = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=(feature_dim, embed_dim))
        self.bias = rng.normal(0.0, 0.02, size=(1, embed_dim))

    def __call__(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise WorldError("featurizer input must be a nonempty (T x D_in) matrix")
        if x.shape[1] != self.feature_dim:
            raise WorldError(f"expected {self.feature_dim} feature bands, got {x.shape[1]}")
        t = x.shape[0]
        if t % 2:
            x = np.vstack([x, np.zeros((1, self.feature_dim))])
        pooled = 0.5 * (x[0::2] + x[1::2])
        out = pooled @ self.weight + self.bias
        return out.T  # (embed_dim x T')

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.weight.astype("<f4").tobytes())
        h.update(self.bias.astype("<f4").tobytes())
        return h.hexdigest()


def encoder_forward(features: np.ndarray, featurizer: FrozenFeaturizer | None = None) -> np.ndarray:
    return (featurizer or FrozenFeaturizer())(features)
