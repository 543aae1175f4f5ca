"""Versioned registry of every task prompt the system uses.

These strings are quoted verbatim wherever contexts are assembled; nothing
else may introduce an instruction. The no-instruction template has no entry
here by design: it consists of role markers only.
"""

REGISTRY_VERSION = "prompts-v1"

# system prompt used when training the caption baseline
CAPTION_TRAIN_SYSTEM = "Describe the audio you hear"

# system prompt used when evaluating captioning
CAPTION_EVAL_SYSTEM = "Describe the audio content in one 10-word sentence."

# system prompt used when evaluating question answering
QA_SYSTEM = "Answer the question provided after the audio caption within 10 words."

# user-message scaffold for question answering: the payload, then the question
QA_USER_SUFFIX = ". Question: {question}"

# user-message scaffold for captioning: the payload followed by a period
CAPTION_USER_SUFFIX = "."

# extra instruction seen only in backbone pretraining (free variant)
LIST_SOUNDS_SYSTEM = "Name the sounds you hear in one sentence."

REGISTRY = {
    "version": REGISTRY_VERSION,
    "caption_train_system": CAPTION_TRAIN_SYSTEM,
    "caption_eval_system": CAPTION_EVAL_SYSTEM,
    "qa_system": QA_SYSTEM,
    "qa_user_suffix": QA_USER_SUFFIX,
    "caption_user_suffix": CAPTION_USER_SUFFIX,
    "list_sounds_system": LIST_SOUNDS_SYSTEM,
}


def task_prompt_strings() -> list[str]:
    """Every instruction string that must never leak into no-instruction
    contexts or dialogue-continuation training targets."""
    return [
        CAPTION_TRAIN_SYSTEM,
        CAPTION_EVAL_SYSTEM,
        QA_SYSTEM,
        LIST_SOUNDS_SYSTEM,
    ]
