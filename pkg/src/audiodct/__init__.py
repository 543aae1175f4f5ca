"""Dialogue-continuation training for audio comprehension on a synthetic
sound world: a frozen toy language model, a frozen featurizer, and a small
trainable adapter mapping audio into the model's embedding space."""

__version__ = "0.1.0"

from .adapter import AdapterDims, AdapterParams, adapter_forward, init_adapter
from .autograd import (
    Node,
    backward,
    cross_entropy,
    sample_categorical,
    softmax_rows,
)
from .backbone import (
    ContextAssembly,
    EmbeddingSegment,
    LMConfig,
    LMParams,
    TokenSegment,
    freeze,
    generate_beam,
    generate_sample,
    lm_forward,
)
from .checkpoint import Bundle, load_bundle, save_bundle
from .evaluate import (
    EvalReport,
    InstructionSpec,
    eval_aac,
    eval_aqa,
    eval_distill,
    infer,
    judge_aqa,
    qualitative_probe,
)
from .optim import Adam, lr_schedule
from .pretrain import PretrainSettings, pretrain_lm
from .targets import TargetRecord, build_noinst_context, prepare_dataset, prepare_response
from .tokenizer import ChatMessage, PromptPair, Vocabulary, build_vocab, render_chat
from .training import TrainConfig, train
from .world import (
    FrozenFeaturizer,
    QAPair,
    SyntheticScene,
    WorldConfig,
    encoder_forward,
    gen_captions,
    gen_qa,
    gen_scene,
    render_features,
)
