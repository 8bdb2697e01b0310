"""Toy RNN-T: model, transducer loss, decoding, and training."""

from .decode import (
    DEFAULT_BEAM_WIDTH,
    DEFAULT_MAX_SYMBOLS,
    DEFAULT_NBEST,
    Hypothesis,
    NBestList,
    beam_search,
    greedy_decode,
    hypothesis_from_dict,
    hypothesis_to_dict,
    nbest_from_dict,
    nbest_to_dict,
    neg_entropy,
    read_nbest_jsonl,
    write_nbest_jsonl,
)
from .loss import (
    enumerate_alignments,
    rnnt_grad,
    rnnt_loss,
    rnnt_loss_bruteforce,
)
from .model import (
    BLANK_LABEL,
    PhoneBranch,
    PhonePosteriorgram,
    PosteriorLattice,
    TransducerModel,
    Vocabulary,
    build_model,
    ci_phone_forward,
    encode,
    encoder_layer_freeze_names,
    group_pieces_into_words,
    joint_logits,
    joint_posteriors,
    load_checkpoint,
    named_params,
    predict,
    rnnt_param_names,
    save_checkpoint,
    step_posteriors,
    with_params,
)
from .training import (
    DEFAULT_MTL_ALPHA,
    TRAIN_MODES,
    StepLosses,
    TrainingExample,
    adapt,
    ce_forward_backward,
    mtl_loss,
    rnnt_forward_backward,
    run_training,
    train_step,
    zero_grads,
)

__all__ = [
    "BLANK_LABEL",
    "DEFAULT_BEAM_WIDTH",
    "DEFAULT_MAX_SYMBOLS",
    "DEFAULT_MTL_ALPHA",
    "DEFAULT_NBEST",
    "TRAIN_MODES",
    "Hypothesis",
    "NBestList",
    "PhoneBranch",
    "PhonePosteriorgram",
    "PosteriorLattice",
    "StepLosses",
    "TrainingExample",
    "TransducerModel",
    "Vocabulary",
    "adapt",
    "beam_search",
    "build_model",
    "ce_forward_backward",
    "ci_phone_forward",
    "encode",
    "encoder_layer_freeze_names",
    "enumerate_alignments",
    "greedy_decode",
    "group_pieces_into_words",
    "hypothesis_from_dict",
    "hypothesis_to_dict",
    "joint_logits",
    "joint_posteriors",
    "load_checkpoint",
    "mtl_loss",
    "named_params",
    "nbest_from_dict",
    "nbest_to_dict",
    "neg_entropy",
    "predict",
    "read_nbest_jsonl",
    "rnnt_forward_backward",
    "rnnt_grad",
    "rnnt_loss",
    "rnnt_loss_bruteforce",
    "rnnt_param_names",
    "run_training",
    "save_checkpoint",
    "step_posteriors",
    "train_step",
    "with_params",
    "write_nbest_jsonl",
    "zero_grads",
]
