"""Dataset files: JSON-lines scene records plus raw feature matrices.

A dataset directory holds one JSONL per split, a features/ directory with one
binary matrix per scene, and meta.json describing how it was generated. QA
pairs are written only into the test split; training and validation records
carry an empty qa list so adapter training never touches question text.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .world import (
    CaptionVariant,
    FrozenFeaturizer,
    QAPair,
    SceneEvent,
    SyntheticScene,
    WorldConfig,
    gen_captions,
    gen_qa,
    gen_scene,
    render_features,
    stable_seed,
)

FEATURE_MAGIC = b"ADCTFEAT"
SPLITS = ("train", "val", "test")


class DatasetError(Exception):
    pass


class FileLedger:
    """Records every file a consumer opened, for provenance audits."""

    def __init__(self):
        self.paths: list[str] = []

    def note(self, path) -> Path:
        p = Path(path).resolve()
        key = str(p)
        if key not in self.paths:
            self.paths.append(key)
        return p

    def read_text(self, path) -> str:
        return self.note(path).read_text()

    def read_bytes(self, path) -> bytes:
        return self.note(path).read_bytes()


def _read_text(path, ledger: FileLedger | None) -> str:
    if ledger is not None:
        return ledger.read_text(path)
    return Path(path).read_text()


def _read_bytes(path, ledger: FileLedger | None) -> bytes:
    if ledger is not None:
        return ledger.read_bytes(path)
    return Path(path).read_bytes()


def write_features(path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise DatasetError("feature matrix must be 2-D")
    header = FEATURE_MAGIC + struct.pack("<II", m.shape[0], m.shape[1])
    Path(path).write_bytes(header + m.tobytes())


def read_features(path, ledger: FileLedger | None = None) -> np.ndarray:
    raw = _read_bytes(path, ledger)
    if len(raw) < 16 or raw[:8] != FEATURE_MAGIC:
        raise DatasetError(f"not a feature file: {path}")
    t, d = struct.unpack("<II", raw[8:16])
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.size != t * d:
        raise DatasetError(f"feature payload size mismatch in {path}")
    return data.reshape(t, d).astype(np.float64)


@dataclass
class SceneRecord:
    scene: SyntheticScene
    split: str
    captions: list[CaptionVariant]
    qa: list[QAPair]
    features_path: str

    @property
    def scene_id(self) -> str:
        return self.scene.scene_id

    def canonical_caption(self) -> str:
        for c in self.captions:
            if c.style == "canonical":
                return c.text
        raise DatasetError(f"record {self.scene_id} has no canonical caption")

    def load_features(self, base_dir, ledger: FileLedger | None = None) -> np.ndarray:
        return read_features(Path(base_dir) / self.features_path, ledger)


def record_to_json(rec: SceneRecord) -> str:
    payload = {
        "id": rec.scene.scene_id,
        "split": rec.split,
        "frames": rec.scene.frames,
        "events": [
            {"type": e.type, "start": e.start, "duration": e.duration}
            for e in rec.scene.events
        ],
        "captions": [{"text": c.text, "style": c.style} for c in rec.captions],
        "qa": [{"q": q.question, "a": q.answer, "kind": q.kind} for q in rec.qa],
        "features_path": rec.features_path,
    }
    return json.dumps(payload, sort_keys=True)


def record_from_json(line: str) -> SceneRecord:
    d = json.loads(line)
    scene = SyntheticScene(
        d["id"],
        tuple(SceneEvent(e["type"], e["start"], e["duration"]) for e in d["events"]),
        d["frames"],
    )
    return SceneRecord(
        scene=scene,
        split=d["split"],
        captions=[CaptionVariant(c["text"], c["style"]) for c in d["captions"]],
        qa=[QAPair(q["q"], q["a"], q["kind"]) for q in d["qa"]],
        features_path=d["features_path"],
    )


def make_dataset(out_dir, seed: int, sizes: dict[str, int],
                 config: WorldConfig | None = None) -> dict:
    """Generate a full dataset directory; deterministic in (seed, sizes, config).

    Scene ids are globally unique across splits, QA pairs are emitted for the
    test split only, and every scene's features land in features/<id>.f32.
    """
    config = config or WorldConfig()
    config.validate()
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    featurizer = FrozenFeaturizer(config.feature_dim, config.embed_dim)

    counts = {}
    index = 0
    for split in SPLITS:
        n = int(sizes.get(split, 0))
        lines = []
        for _ in range(n):
            scene_id = f"scene-{index:06d}"
            scene = gen_scene(_rng(seed, "scene", index), config, scene_id)
            captions = gen_captions(scene, _rng(seed, "captions", index), config.captions_per_scene)
            qa = gen_qa(scene) if split == "test" else []
            features = render_features(scene, _rng(seed, "features", index), config)
            rel = f"features/{scene_id}.f32"
            write_features(out / rel, features)
            lines.append(record_to_json(SceneRecord(scene, split, captions, qa, rel)))
            index += 1
        (out / f"{split}.jsonl").write_text("\n".join(lines) + ("\n" if lines else ""))
        counts[split] = n

    meta = {
        "format": "world-dataset-v1",
        "seed": seed,
        "sizes": counts,
        "config": {
            "events_min": config.events_min,
            "events_max": config.events_max,
            "frames_min": config.frames_min,
            "frames_max": config.frames_max,
            "duration_min": config.duration_min,
            "duration_max": config.duration_max,
            "noise_amp": config.noise_amp,
            "feature_dim": config.feature_dim,
            "embed_dim": config.embed_dim,
            "captions_per_scene": config.captions_per_scene,
        },
        "featurizer_hash": featurizer.content_hash(),
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def _rng(seed: int, tag: str, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stable_seed(seed, tag, index)))


def load_meta(data_dir, ledger: FileLedger | None = None) -> dict:
    return json.loads(_read_text(Path(data_dir) / "meta.json", ledger))


def load_dataset(data_dir, split: str, ledger: FileLedger | None = None) -> list[SceneRecord]:
    if split not in SPLITS:
        raise DatasetError(f"unknown split {split!r}")
    path = Path(data_dir) / f"{split}.jsonl"
    if not path.exists():
        raise DatasetError(f"missing split file {path}")
    text = _read_text(path, ledger)
    records = [record_from_json(line) for line in text.splitlines() if line.strip()]
    for rec in records:
        if rec.split != split:
            raise DatasetError(f"record {rec.scene_id} has split {rec.split!r} in {split} file")
    return records


def world_config_from_meta(meta: dict) -> WorldConfig:
    return WorldConfig(**meta["config"])
