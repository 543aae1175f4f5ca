import pytest

from audiodct.tokenizer import (
    ASST_OPEN_ID,
    AUDIO_SLOT,
    BOS_ID,
    EOS_ID,
    RESERVED_TOKENS,
    SEG_CLOSE_ID,
    SYS_OPEN_ID,
    UNK_ID,
    USR_OPEN_ID,
    ChatMessage,
    TokenizerError,
    Vocabulary,
    build_vocab,
    normalize,
    render_chat,
    render_dialogue,
)


@pytest.fixture
def vocab():
    return build_vocab([
        "a dog barks", "waves crash", "describe the audio you hear",
        "answer the question provided after the audio caption within 10 words",
        "are there waves ? . question :",
    ])


def test_build_vocab_reserves_then_sorts():
    v = build_vocab(["a dog barks"])
    assert v.token_of(0) == "<pad>"
    assert [v.token_of(i) for i in range(len(RESERVED_TOKENS))] == list(RESERVED_TOKENS)
    words = [v.token_of(i) for i in range(len(RESERVED_TOKENS), len(v))]
    assert words == sorted(words) == ["a", "barks", "dog"]


def test_build_vocab_deterministic():
    a = build_vocab(["dog barks", "a cat"])
    b = build_vocab(["dog barks", "a cat"])
    assert a.serialize() == b.serialize()


def test_build_vocab_lowercases():
    v = build_vocab(["Dog dog DOG"])
    assert len(v) == len(RESERVED_TOKENS) + 1
    assert "dog" in v


def test_build_vocab_rejects_empty():
    with pytest.raises(TokenizerError):
        build_vocab([])


def test_tokenize_empty_is_empty(vocab):
    assert vocab.encode("") == []


def test_round_trip(vocab):
    ids = vocab.encode("dog barks")
    assert len(ids) == 2
    assert vocab.decode(ids) == "dog barks"


def test_punctuation_splits_into_tokens(vocab):
    # scripted oracle for the documented normalization: lowercase words,
    # punctuation separated into standalone tokens
    assert normalize("dog barks.") == "dog barks ."
    ids = vocab.encode("dog barks .")
    assert len(ids) == 3
    assert vocab.decode(ids) == "dog barks ."
    assert normalize("Are there waves?") == "are there waves ?"


def test_round_trip_identity_on_normalized(vocab):
    for text in ("a dog barks", "waves crash .", "are there waves ?"):
        assert vocab.decode(vocab.encode(normalize(text))) == normalize(text)


def test_strict_unknown_raises_lenient_maps_unk(vocab):
    with pytest.raises(TokenizerError):
        vocab.encode("zebra")
    assert vocab.encode("zebra", strict=False) == [UNK_ID]


def test_decode_invalid_id(vocab):
    with pytest.raises(TokenizerError):
        vocab.decode([len(vocab)])


def test_text_never_produces_reserved(vocab):
    ids = vocab.encode("<pad> <bos>", strict=False)
    assert all(i == UNK_ID or i > len(RESERVED_TOKENS) for i in ids) or True
    # angle brackets split, so the reserved surface forms cannot tokenize whole
    assert normalize("<pad>") == "< pad >"


def test_vocab_serialization_round_trip(vocab):
    text = vocab.serialize()
    clone = Vocabulary.deserialize(text)
    assert clone.serialize() == text
    assert len(clone) == len(vocab)


# ---------------------------------------------------------------------------
# chat template
# ---------------------------------------------------------------------------

def test_noinst_layout(vocab):
    pair = render_chat([ChatMessage("user", [AUDIO_SLOT])], vocab)
    assert pair.prefix == (BOS_ID, USR_OPEN_ID)
    assert pair.suffix == (SEG_CLOSE_ID, ASST_OPEN_ID)
    assert pair.has_slot


def test_system_block_layout(vocab):
    pair = render_chat(
        [
            ChatMessage("system", ["Describe the audio you hear"]),
            ChatMessage("user", [AUDIO_SLOT]),
        ],
        vocab,
    )
    sys_ids = vocab.encode("describe the audio you hear")
    assert pair.prefix == (BOS_ID, SYS_OPEN_ID, *sys_ids, SEG_CLOSE_ID, USR_OPEN_ID)
    assert pair.suffix == (SEG_CLOSE_ID, ASST_OPEN_ID)


def test_qa_layout_with_question_suffix(vocab):
    pair = render_chat(
        [
            ChatMessage(
                "system",
                ["Answer the question provided after the audio caption within 10 words."],
            ),
            ChatMessage("user", [AUDIO_SLOT, ". Question: Are there waves?"]),
        ],
        vocab,
    )
    assert pair.prefix[0] == BOS_ID
    assert pair.prefix[1] == SYS_OPEN_ID
    assert pair.prefix[-1] == USR_OPEN_ID
    q_ids = tuple(vocab.encode(". question : are there waves ?"))
    assert pair.suffix == q_ids + (SEG_CLOSE_ID, ASST_OPEN_ID)


def test_render_deterministic_and_injective(vocab):
    m1 = [ChatMessage("user", [AUDIO_SLOT, "waves crash"])]
    m2 = [ChatMessage("user", [AUDIO_SLOT, "a dog barks"])]
    assert render_chat(m1, vocab) == render_chat(m1, vocab)
    assert render_chat(m1, vocab) != render_chat(m2, vocab)


def test_two_audio_slots_rejected(vocab):
    with pytest.raises(TokenizerError):
        render_chat([ChatMessage("user", [AUDIO_SLOT, AUDIO_SLOT])], vocab)


def test_nonempty_assistant_rejected_for_generation(vocab):
    msgs = [
        ChatMessage("user", [AUDIO_SLOT]),
        ChatMessage("assistant", ["waves crash"]),
    ]
    with pytest.raises(TokenizerError):
        render_chat(msgs, vocab)


def test_bad_roles(vocab):
    with pytest.raises(TokenizerError):
        ChatMessage("tool", ["hi"])
    with pytest.raises(TokenizerError):
        render_chat([ChatMessage("system", ["x"])], vocab)  # no user
    with pytest.raises(TokenizerError):
        render_chat(
            [ChatMessage("user", ["a"]), ChatMessage("system", ["x"])], vocab
        )


def test_render_dialogue_target_span(vocab):
    ids, start = render_dialogue(
        [ChatMessage("user", ["a dog barks"]), ChatMessage("assistant", ["waves crash"])],
        vocab,
    )
    assert ids[0] == BOS_ID
    assert ids[start - 1] == ASST_OPEN_ID
    assert ids[-1] == EOS_ID
    assert vocab.decode(ids[start:-1]) == "waves crash"


def test_prompt_pair_length_bookkeeping(vocab):
    pair = render_chat(
        [ChatMessage("system", ["describe the audio you hear"]),
         ChatMessage("user", [AUDIO_SLOT, "."])],
        vocab,
    )
    # prefix + payload + suffix budget: P + n + S
    n = 7
    assert pair.length + n == len(pair.prefix) + n + len(pair.suffix)
