"""Word-level tokenizer and the chat template used by every context.

The vocabulary is closed: it is built once from the full surface inventory of
the synthetic world and never grows. Rendering is bit-exact; the token layout
is frozen in TEMPLATE.md and stamped into checkpoints via TEMPLATE_VERSION.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
SYS_OPEN_ID = 3
USR_OPEN_ID = 4
ASST_OPEN_ID = 5
SEG_CLOSE_ID = 6
UNK_ID = 7

RESERVED_TOKENS = (
    "<pad>",
    "<bos>",
    "<eos>",
    "<sys>",
    "<user>",
    "<assistant>",
    "<end>",
    "<unk>",
)

TEMPLATE_VERSION = "chat-template-v1"

# words are lowercase alphanumeric runs; every other non-space char is its
# own token, so normalization is reversible by joining with single spaces
_TOKEN_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")


class AudioSlot:
    """Sentinel marking where continuous embeddings are injected."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "AUDIO_SLOT"


AUDIO_SLOT = AudioSlot()


class TokenizerError(Exception):
    pass


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(split_words(text))


class Vocabulary:
    """Frozen id<->string bijection with the reserved control tokens first."""

    def __init__(self, tokens: list[str]):
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise TokenizerError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise TokenizerError("duplicate token in vocabulary")
        self._tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise TokenizerError(f"unknown token {token!r}") from None

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._tokens):
            raise TokenizerError(f"invalid token id {idx}")
        return self._tokens[idx]

    def encode(self, text: str, strict: bool = True) -> list[int]:
        """Tokenize normalized text into ids.

        Unknown words raise in strict mode and map to <unk> otherwise.
        """
        ids = []
        for word in split_words(text):
            idx = self._ids.get(word)
            if idx is None:
                if strict:
                    raise TokenizerError(f"word {word!r} not in vocabulary")
                idx = UNK_ID
            ids.append(idx)
        return ids

    def decode(self, ids: list[int], keep_reserved: bool = False) -> str:
        words = []
        for idx in ids:
            token = self.token_of(int(idx))
            if idx < len(RESERVED_TOKENS) and not keep_reserved:
                continue
            words.append(token)
        return " ".join(words)

    def serialize(self) -> str:
        """One token per line; the line number is the id."""
        return "\n".join(self._tokens) + "\n"

    @classmethod
    def deserialize(cls, text: str) -> "Vocabulary":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(lines)


def build_vocab(corpus: list[str]) -> Vocabulary:
    """Reserved tokens followed by the sorted lowercase word inventory."""
    if not corpus:
        raise TokenizerError("empty corpus")
    words = set()
    for text in corpus:
        words.update(split_words(text))
    return Vocabulary(list(RESERVED_TOKENS) + sorted(words))


@dataclass
class ChatMessage:
    role: str
    content: list = field(default_factory=list)

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise TokenizerError(f"bad role {self.role!r}")
        if isinstance(self.content, (str, AudioSlot)):
            self.content = [self.content]
        for part in self.content:
            if not (isinstance(part, str) or part is AUDIO_SLOT):
                raise TokenizerError(f"bad content part {part!r}")


@dataclass(frozen=True)
class PromptPair:
    """Token context split at the payload slot.

    ``prefix`` is everything before the injected payload and starts with BOS;
    ``suffix`` is everything after and ends with the assistant cue.
    """

    prefix: tuple
    suffix: tuple
    has_slot: bool

    def __post_init__(self):
        if not self.prefix or self.prefix[0] != BOS_ID:
            raise TokenizerError("prefix must begin with <bos>")
        if self.has_slot:
            if not self.suffix or self.suffix[-1] != ASST_OPEN_ID:
                raise TokenizerError("suffix must end with <assistant>")
        elif self.suffix:
            raise TokenizerError("slotless renders put everything in the prefix")
        elif self.prefix[-1] != ASST_OPEN_ID:
            raise TokenizerError("prefix must end with <assistant>")

    @property
    def length(self) -> int:
        return len(self.prefix) + len(self.suffix)


def _validate_roles(messages: list[ChatMessage]):
    roles = [m.role for m in messages]
    if roles.count("system") > 1 or (roles and "system" in roles[1:]):
        raise TokenizerError("system message must be single and first")
    if roles.count("user") != 1:
        raise TokenizerError("exactly one user message required")
    if roles.count("assistant") > 1:
        raise TokenizerError("at most one assistant message")
    if "assistant" in roles and roles[-1] != "assistant":
        raise TokenizerError("assistant message must come last")


def render_chat(messages: list[ChatMessage], vocab: Vocabulary, strict: bool = True) -> PromptPair:
    """Render a generation context.

    Layout: ``<bos> [<sys> ... <end>] <user> ... <end> <assistant>``. A system
    block is emitted only when a system message is present; its absence is the
    no-instruction form. At most one payload slot may appear, and it splits
    the tokens into the (prefix, suffix) pair.
    """
    _validate_roles(messages)
    slots = sum(1 for m in messages for p in m.content if p is AUDIO_SLOT)
    if slots > 1:
        raise TokenizerError("at most one audio slot per conversation")
    for m in messages:
        if m.role != "user" and any(p is AUDIO_SLOT for p in m.content):
            raise TokenizerError("the audio slot belongs in the user message")
    for m in messages:
        if m.role == "assistant" and any(p != "" for p in m.content):
            raise TokenizerError("generation render requires an empty assistant message")

    before: list[int] = [BOS_ID]
    after: list[int] = []
    current = before
    for m in messages:
        if m.role == "assistant":
            continue
        open_id = SYS_OPEN_ID if m.role == "system" else USR_OPEN_ID
        current.append(open_id)
        for part in m.content:
            if part is AUDIO_SLOT:
                current = after
            else:
                current.extend(vocab.encode(part, strict=strict))
        current.append(SEG_CLOSE_ID)
    current.append(ASST_OPEN_ID)
    if slots:
        return PromptPair(tuple(before), tuple(after), has_slot=True)
    return PromptPair(tuple(before), (), has_slot=False)


def render_dialogue(messages: list[ChatMessage], vocab: Vocabulary) -> tuple[list[int], int]:
    """Render a complete training sequence ending in the assistant reply.

    Returns ``(ids, target_start)`` where positions from ``target_start`` on
    (the assistant tokens plus <eos>) are the loss span.
    """
    if not messages or messages[-1].role != "assistant":
        raise TokenizerError("dialogue render requires a final assistant message")
    reply = messages[-1]
    reply_text = " ".join(p for p in reply.content if isinstance(p, str))
    if not reply_text.strip():
        raise TokenizerError("assistant reply must be nonempty")
    pair = render_chat(
        messages[:-1] + [ChatMessage("assistant", [""])], vocab
    )
    if pair.has_slot:
        raise TokenizerError("training dialogues are text only")
    ids = list(pair.prefix)
    target_start = len(ids)
    ids.extend(vocab.encode(reply_text))
    ids.append(EOS_ID)
    return ids, target_start
