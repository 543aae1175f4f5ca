"""Provenance audit: proves adapter training never consumed QA supervision.

The trainer's manifest lists every file it read. This scan checks those
files for (a) any evaluation question text, (b) the question-answering
instruction string (and, in dialogue-continuation mode, any task prompt at
all), and (c) any question/answer pair in its serialized record form, plus a
structural pass asserting that every JSONL record read in training carries an
empty qa list.

Answers are matched in their serialized form rather than as bare substrings:
closed-form answers name events, and event phrases legitimately occur inside
captions, so a bare-substring rule would flag the training captions
themselves rather than actual leakage.
"""

from __future__ import annotations

import json
from pathlib import Path

from . import prompts
from .datasets import load_dataset
from .tokenizer import normalize


def qa_inventory(data_dir) -> list[dict]:
    """All QA pairs across every split of the dataset."""
    pairs = []
    for split in ("train", "val", "test"):
        try:
            records = load_dataset(data_dir, split)
        except Exception:
            continue
        for rec in records:
            for qa in rec.qa:
                pairs.append({"q": qa.question, "a": qa.answer, "id": rec.scene_id})
    return pairs


def forbidden_strings(qa_pairs: list[dict], mode: str) -> list[str]:
    needles: list[str] = []
    for qa in qa_pairs:
        needles.append(qa["q"])
        needles.append(normalize(qa["q"]))
        # serialized record forms: how a QA pair or its answer would look if a
        # dataset or report file leaked into training
        needles.append(json.dumps({"q": qa["q"]})[1:-1])
        needles.append(json.dumps({"a": qa["a"]})[1:-1])
        needles.append(json.dumps({"question": qa["q"]})[1:-1])
        needles.append(json.dumps({"answer": qa["a"]})[1:-1])
    needles.append(prompts.QA_SYSTEM)
    needles.append(normalize(prompts.QA_SYSTEM))
    if mode == "dct":
        for p in prompts.task_prompt_strings():
            needles.append(p)
            needles.append(normalize(p))
    # dedupe, longest first so reports name the most specific hit
    return sorted(set(needles), key=len, reverse=True)


def scan_file(path: Path, needles: list[str]) -> list[str]:
    try:
        raw = path.read_bytes()
    except OSError:
        return [f"unreadable file: {path}"]
    hay = raw.decode("utf-8", errors="ignore")
    hits = [n for n in needles if n and n in hay]
    return [f"{path}: contains {n!r}" for n in hits]


def structural_qa_check(path: Path) -> list[str]:
    """JSONL files read during training must not carry populated qa fields."""
    problems = []
    try:
        lines = path.read_text().splitlines()
    except (OSError, UnicodeDecodeError):
        return problems
    for i, line in enumerate(lines, 1):
        line = line.strip()
        if not line or not line.startswith("{"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and obj.get("qa"):
            problems.append(f"{path}:{i}: record {obj.get('id')} carries QA pairs")
    return problems


def scan_training_run(manifest_path, data_dir) -> dict:
    """Audit one training run; returns the violation list (empty = clean)."""
    manifest = json.loads(Path(manifest_path).read_text())
    mode = manifest["mode"]
    files = [Path(p) for p in manifest["files_read"]]
    pairs = qa_inventory(data_dir)
    needles = forbidden_strings(pairs, mode)
    violations: list[str] = []
    for path in files:
        violations.extend(scan_file(path, needles))
        if path.suffix == ".jsonl":
            violations.extend(structural_qa_check(path))
    return {
        "mode": mode,
        "files_scanned": len(files),
        "qa_pairs_checked": len(pairs),
        "needles": len(needles),
        "violations": violations,
    }


def check_noinst_assembly(assembly, vocab) -> list[str]:
    """Assert a no-instruction context carries no task-prompt token run."""
    text = vocab.decode(assembly.token_ids())
    hits = []
    for p in prompts.task_prompt_strings():
        if normalize(p) in text:
            hits.append(p)
    return hits
