"""Toy RNN-T model: encoder with shareable lower layers, prediction network,
joint network, and an optional frame-wise phone branch on the lower encoder."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, ContractError, ShapeError, TokenizationError
from ..numcore import (
    DenseLayer,
    RecurrentLayer,
    load_matrix,
    make_rng,
    recurrent_forward,
    save_matrix,
    softmax,
)

BLANK_LABEL = "<blank>"
WORD_START = "▁"  # prefix marking a word-initial piece


@dataclass(frozen=True)
class Vocabulary:
    """Output units of the transducer: word pieces plus one reserved blank.

    Pieces that begin a word carry ``word_start`` as their first character;
    continuation pieces never do, which is what lets a piece stream be grouped
    back into words.
    """

    labels: tuple[str, ...]
    blank_id: int
    word_start: str = WORD_START

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not 0 <= self.blank_id < len(self.labels):
            raise ConfigurationError(f"blank id {self.blank_id} out of range")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigurationError("duplicate labels in vocabulary")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def pieces(self) -> tuple[str, ...]:
        """All non-blank labels, in id order."""
        return tuple(p for i, p in enumerate(self.labels) if i != self.blank_id)

    def id_of(self, piece: str) -> int:
        try:
            return self.labels.index(piece)
        except ValueError:
            raise ContractError(f"piece {piece!r} not in vocabulary") from None

    def is_word_start(self, piece_id: int) -> bool:
        return self.labels[piece_id].startswith(self.word_start)

    def piece_text(self, piece_id: int) -> str:
        return self.labels[piece_id].removeprefix(self.word_start)

    @classmethod
    def from_pieces(cls, pieces, word_start: str = WORD_START) -> "Vocabulary":
        """Blank at id 0, then the given pieces in order."""
        return cls(labels=(BLANK_LABEL, *pieces), blank_id=0, word_start=word_start)


def group_pieces_into_words(piece_ids, vocab: Vocabulary,
                            strict: bool = True) -> list[tuple[str, list[int]]]:
    """Split a non-blank piece id sequence into words.

    Returns (word string, positions of its pieces) per word. A continuation
    piece with nothing before it cannot be attached to any word; with
    strict=False (for raw decoder output) it opens a word instead.
    """
    words: list[tuple[str, list[int]]] = []
    for pos, pid in enumerate(piece_ids):
        if pid == vocab.blank_id:
            raise TokenizationError("blank id in piece stream")
        if vocab.is_word_start(pid):
            words.append((vocab.piece_text(pid), [pos]))
        else:
            if not words:
                if strict:
                    raise TokenizationError(
                        f"stream starts with continuation piece {vocab.labels[pid]!r}"
                    )
                words.append((vocab.piece_text(pid), [pos]))
                continue
            text, positions = words[-1]
            words[-1] = (text + vocab.piece_text(pid), positions + [pos])
    return words


@dataclass(frozen=True)
class PhoneBranch:
    """Frame-wise phone predictor fed by the lower encoder states."""

    layers: tuple[RecurrentLayer, ...]
    out: DenseLayer
    phones: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "phones", tuple(self.phones))
        if self.out.out_dim != len(self.phones):
            raise ConfigurationError(
                f"branch output dim {self.out.out_dim} != phone count {len(self.phones)}"
            )


@dataclass(frozen=True)
class TransducerModel:
    encoder_lower: tuple[RecurrentLayer, ...]
    encoder_upper: tuple[RecurrentLayer, ...]
    prediction: tuple[RecurrentLayer, ...]
    embedding: np.ndarray  # (num labels, embed dim); the blank row is never consumed
    joint: DenseLayer
    output: DenseLayer
    vocab: Vocabulary
    phone_branch: PhoneBranch | None = None

    def __post_init__(self):
        for name in ("encoder_lower", "encoder_upper", "prediction"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "embedding", np.asarray(self.embedding, dtype=np.float64))
        if not self.encoder_lower:
            raise ConfigurationError("encoder needs at least one lower layer")
        if not self.prediction:
            raise ConfigurationError("prediction network needs at least one layer")
        if self.embedding.shape[0] != len(self.vocab):
            raise ConfigurationError("embedding rows must match vocabulary size")
        if self.output.out_dim != len(self.vocab):
            raise ConfigurationError(
                f"output dim {self.output.out_dim} != vocabulary size {len(self.vocab)}"
            )
        if self.joint.in_dim != self.encoder_dim + self.prediction_dim:
            raise ConfigurationError(
                "joint input dim must equal encoder dim + prediction dim"
            )
        if self.phone_branch is not None:
            branch_in = self.phone_branch.layers[0].in_dim if self.phone_branch.layers \
                else self.phone_branch.out.in_dim
            if branch_in != self.lower_dim:
                raise ConfigurationError(
                    f"phone branch input dim {branch_in} != lower encoder dim {self.lower_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.encoder_lower[0].in_dim

    @property
    def lower_dim(self) -> int:
        return self.encoder_lower[-1].hidden_dim

    @property
    def encoder_dim(self) -> int:
        stack = self.encoder_upper or self.encoder_lower
        return stack[-1].hidden_dim

    @property
    def prediction_dim(self) -> int:
        return self.prediction[-1].hidden_dim

    @property
    def num_lower_layers(self) -> int:
        return len(self.encoder_lower)

    @property
    def encoder_depth(self) -> int:
        return len(self.encoder_lower) + len(self.encoder_upper)


@dataclass(frozen=True)
class PosteriorLattice:
    """P(k | t, u) for every frame t, consumed-label count u, output unit k."""

    probs: np.ndarray  # (T, U+1, K)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 3:
            raise ShapeError(f"lattice must be 3-d, got shape {p.shape}")
        if p.shape[0] and not np.allclose(p.sum(axis=2), 1.0, atol=1e-9):
            raise ContractError("lattice slices must sum to 1")

    @property
    def num_frames(self) -> int:
        return self.probs.shape[0]

    @property
    def target_len(self) -> int:
        return self.probs.shape[1] - 1

    @property
    def num_labels(self) -> int:
        return self.probs.shape[2]


@dataclass(frozen=True)
class PhonePosteriorgram:
    """Frame-wise phone probabilities from the branch; rows sum to 1."""

    probs: np.ndarray  # (T, P)
    phones: tuple[str, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "phones", tuple(self.phones))
        if p.ndim != 2 or p.shape[1] != len(self.phones):
            raise ShapeError(f"posteriorgram shape {p.shape} != (T, {len(self.phones)})")
        if p.shape[0] and not np.allclose(p.sum(axis=1), 1.0, atol=1e-9):
            raise ContractError("posteriorgram rows must sum to 1")

    @property
    def num_frames(self) -> int:
        return self.probs.shape[0]


def _run_stack(layers, frames: np.ndarray) -> np.ndarray:
    out = frames
    for layer in layers:
        out = recurrent_forward(out, layer)
    return out


def encode(features, model: TransducerModel) -> tuple[np.ndarray, np.ndarray]:
    """Map frames to (lower states, final encoder states), both length T.

    The lower states are what the phone branch consumes; the final states feed
    the joint network.
    """
    frames = np.asarray(features, dtype=np.float64)
    if frames.size == 0:
        return np.zeros((0, model.lower_dim)), np.zeros((0, model.encoder_dim))
    if frames.ndim != 2 or frames.shape[1] != model.input_dim:
        raise ShapeError(f"features shape {frames.shape} != (T, {model.input_dim})")
    lower = _run_stack(model.encoder_lower, frames)
    upper = _run_stack(model.encoder_upper, lower) if model.encoder_upper else lower
    return lower, upper


def predict(history, model: TransducerModel) -> np.ndarray:
    """Prediction-network states; row u is the state after consuming u labels.

    Row 0 is the empty-history state (all zeros, nothing consumed yet), so the
    output has len(history) + 1 rows.
    """
    ids = [int(t) for t in history]
    for t in ids:
        if t == model.vocab.blank_id:
            raise ContractError("blank id is not a valid prediction input")
        if not 0 <= t < len(model.vocab):
            raise ContractError(f"token id {t} out of range")
    out = np.zeros((len(ids) + 1, model.prediction_dim))
    if ids:
        embedded = model.embedding[ids]
        out[1:] = _run_stack(model.prediction, embedded)
    return out


def joint_logits(h_enc: np.ndarray, h_pre: np.ndarray, model: TransducerModel) -> np.ndarray:
    """(T, U+1, K) pre-softmax scores: output layer over tanh(joint([enc; pre]))."""
    T, U1 = h_enc.shape[0], h_pre.shape[0]
    if T == 0:
        raise ContractError("encoder states must be nonempty")
    if h_enc.shape[1] != model.encoder_dim or h_pre.shape[1] != model.prediction_dim:
        raise ShapeError("state dims do not match the joint network")
    cat = np.concatenate(
        [
            np.broadcast_to(h_enc[:, None, :], (T, U1, h_enc.shape[1])),
            np.broadcast_to(h_pre[None, :, :], (T, U1, h_pre.shape[1])),
        ],
        axis=2,
    )
    z = np.tanh(cat @ model.joint.weight.T + model.joint.bias)
    return z @ model.output.weight.T + model.output.bias


def joint_posteriors(h_enc, h_pre, model: TransducerModel) -> PosteriorLattice:
    """Full posterior lattice P(k | t, u) = softmax over the joint scores."""
    return PosteriorLattice(softmax(joint_logits(np.asarray(h_enc), np.asarray(h_pre), model)))


def step_posteriors(model: TransducerModel, h_enc_t: np.ndarray, h_pre: np.ndarray) -> np.ndarray:
    """Posterior over output units for a single (frame, prediction-state) pair."""
    cat = np.concatenate([h_enc_t, h_pre])
    z = np.tanh(model.joint.weight @ cat + model.joint.bias)
    return softmax(model.output.weight @ z + model.output.bias)


def ci_phone_forward(lower_states, model: TransducerModel) -> PhonePosteriorgram:
    """Frame-wise phone posteriors from the branch over the lower encoder states."""
    if model.phone_branch is None:
        raise ConfigurationError("model has no phone branch")
    states = np.asarray(lower_states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != model.lower_dim:
        raise ShapeError(f"lower states shape {states.shape} != (T, {model.lower_dim})")
    branch = model.phone_branch
    hidden = _run_stack(branch.layers, states) if branch.layers else states
    logits = hidden @ branch.out.weight.T + branch.out.bias
    return PhonePosteriorgram(softmax(logits), branch.phones)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _init_recurrent(rng, in_dim: int, hidden: int) -> RecurrentLayer:
    s_in, s_rec = 1.0 / np.sqrt(in_dim), 1.0 / np.sqrt(hidden)
    return RecurrentLayer(
        w_in=rng.uniform(-s_in, s_in, size=(hidden, in_dim)),
        w_rec=rng.uniform(-s_rec, s_rec, size=(hidden, hidden)),
        bias=np.zeros(hidden),
    )


def _init_dense(rng, in_dim: int, out_dim: int) -> DenseLayer:
    s = 1.0 / np.sqrt(in_dim)
    return DenseLayer(weight=rng.uniform(-s, s, size=(out_dim, in_dim)), bias=np.zeros(out_dim))


def build_model(
    vocab: Vocabulary,
    input_dim: int,
    hidden_dim: int = 32,
    lower_layers: int = 1,
    upper_layers: int = 2,
    prediction_layers: int = 1,
    embed_dim: int = 16,
    joint_dim: int = 32,
    phones=None,
    branch_layers: int = 1,
    seed: int = 0,
) -> TransducerModel:
    """Randomly initialized model with the configured toy topology."""
    rng = make_rng(seed)
    enc_lower = []
    dim = input_dim
    for _ in range(lower_layers):
        enc_lower.append(_init_recurrent(rng, dim, hidden_dim))
        dim = hidden_dim
    enc_upper = [_init_recurrent(rng, hidden_dim, hidden_dim) for _ in range(upper_layers)]
    pred = []
    dim = embed_dim
    for _ in range(prediction_layers):
        pred.append(_init_recurrent(rng, dim, hidden_dim))
        dim = hidden_dim
    scale = 1.0 / np.sqrt(embed_dim)
    embedding = rng.uniform(-scale, scale, size=(len(vocab), embed_dim))
    joint = _init_dense(rng, 2 * hidden_dim, joint_dim)
    output = _init_dense(rng, joint_dim, len(vocab))
    branch = None
    if phones is not None:
        layers = [_init_recurrent(rng, hidden_dim, hidden_dim) for _ in range(branch_layers)]
        branch = PhoneBranch(
            layers=tuple(layers),
            out=_init_dense(rng, hidden_dim, len(phones)),
            phones=tuple(phones),
        )
    return TransducerModel(
        encoder_lower=tuple(enc_lower),
        encoder_upper=tuple(enc_upper),
        prediction=tuple(pred),
        embedding=embedding,
        joint=joint,
        output=output,
        vocab=vocab,
        phone_branch=branch,
    )


# ---------------------------------------------------------------------------
# Named parameter access: one flat dict drives SGD, freezing, checkpoints and
# gradient checks. Names are dotted paths like "enc_lower.0.w_in".
# ---------------------------------------------------------------------------


def named_params(model: TransducerModel) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}

    def add_recurrent(prefix: str, layer: RecurrentLayer):
        params[f"{prefix}.w_in"] = layer.w_in
        params[f"{prefix}.w_rec"] = layer.w_rec
        params[f"{prefix}.bias"] = layer.bias

    for i, layer in enumerate(model.encoder_lower):
        add_recurrent(f"enc_lower.{i}", layer)
    for i, layer in enumerate(model.encoder_upper):
        add_recurrent(f"enc_upper.{i}", layer)
    for i, layer in enumerate(model.prediction):
        add_recurrent(f"pred.{i}", layer)
    params["embedding"] = model.embedding
    params["joint.weight"] = model.joint.weight
    params["joint.bias"] = model.joint.bias
    params["output.weight"] = model.output.weight
    params["output.bias"] = model.output.bias
    if model.phone_branch is not None:
        for i, layer in enumerate(model.phone_branch.layers):
            add_recurrent(f"branch.{i}", layer)
        params["branch.out.weight"] = model.phone_branch.out.weight
        params["branch.out.bias"] = model.phone_branch.out.bias
    return params


def with_params(model: TransducerModel, params: dict[str, np.ndarray]) -> TransducerModel:
    """Rebuild the model from a named-parameter dict (inverse of named_params)."""

    def recurrent(prefix: str) -> RecurrentLayer:
        return RecurrentLayer(
            w_in=params[f"{prefix}.w_in"],
            w_rec=params[f"{prefix}.w_rec"],
            bias=params[f"{prefix}.bias"],
        )

    branch = None
    if model.phone_branch is not None:
        branch = PhoneBranch(
            layers=tuple(recurrent(f"branch.{i}") for i in range(len(model.phone_branch.layers))),
            out=DenseLayer(params["branch.out.weight"], params["branch.out.bias"]),
            phones=model.phone_branch.phones,
        )
    return replace(
        model,
        encoder_lower=tuple(recurrent(f"enc_lower.{i}") for i in range(len(model.encoder_lower))),
        encoder_upper=tuple(recurrent(f"enc_upper.{i}") for i in range(len(model.encoder_upper))),
        prediction=tuple(recurrent(f"pred.{i}") for i in range(len(model.prediction))),
        embedding=params["embedding"],
        joint=DenseLayer(params["joint.weight"], params["joint.bias"]),
        output=DenseLayer(params["output.weight"], params["output.bias"]),
        phone_branch=branch,
    )


def rnnt_param_names(model: TransducerModel) -> set[str]:
    """Every parameter that influences recognition (everything but the branch)."""
    return {n for n in named_params(model) if not n.startswith("branch.")}


def encoder_layer_freeze_names(model: TransducerModel, freeze_lower: int) -> set[str]:
    """Freeze prefixes for the bottom ``freeze_lower`` encoder layers."""
    if freeze_lower < 0 or freeze_lower >= model.encoder_depth:
        raise ConfigurationError(
            f"freeze count {freeze_lower} must be in [0, encoder depth {model.encoder_depth})"
        )
    names = set()
    for i in range(freeze_lower):
        if i < len(model.encoder_lower):
            names.add(f"enc_lower.{i}")
        else:
            names.add(f"enc_upper.{i - len(model.encoder_lower)}")
    return names


# ---------------------------------------------------------------------------
# Checkpoints: a directory of TDM1 matrix files plus manifest.json.
# ---------------------------------------------------------------------------

_CKPT_MANIFEST = "manifest.json"


def save_checkpoint(model: TransducerModel, ckpt_dir) -> None:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    params = named_params(model)
    manifest = {
        "format": "rnntkit-checkpoint-v1",
        "vocab": {
            "labels": list(model.vocab.labels),
            "blank_id": model.vocab.blank_id,
            "word_start": model.vocab.word_start,
        },
        "phones": list(model.phone_branch.phones) if model.phone_branch else None,
        "num_lower_layers": model.num_lower_layers,
        "num_upper_layers": len(model.encoder_upper),
        "num_prediction_layers": len(model.prediction),
        "num_branch_layers": len(model.phone_branch.layers) if model.phone_branch else 0,
        "params": {name: list(p.shape) for name, p in sorted(params.items())},
    }
    for name, p in params.items():
        save_matrix(ckpt_dir / f"{name}.mat", p)
    (ckpt_dir / _CKPT_MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(ckpt_dir) -> TransducerModel:
    ckpt_dir = Path(ckpt_dir)
    manifest = json.loads((ckpt_dir / _CKPT_MANIFEST).read_text())
    vocab = Vocabulary(
        labels=tuple(manifest["vocab"]["labels"]),
        blank_id=manifest["vocab"]["blank_id"],
        word_start=manifest["vocab"]["word_start"],
    )
    params = {}
    for name, shape in manifest["params"].items():
        m = load_matrix(ckpt_dir / f"{name}.mat")
        params[name] = m.reshape(shape)

    def recurrent(prefix: str) -> RecurrentLayer:
        return RecurrentLayer(
            w_in=params[f"{prefix}.w_in"],
            w_rec=params[f"{prefix}.w_rec"],
            bias=params[f"{prefix}.bias"],
        )

    branch = None
    if manifest["phones"] is not None:
        branch = PhoneBranch(
            layers=tuple(recurrent(f"branch.{i}") for i in range(manifest["num_branch_layers"])),
            out=DenseLayer(params["branch.out.weight"], params["branch.out.bias"]),
            phones=tuple(manifest["phones"]),
        )
    return TransducerModel(
        encoder_lower=tuple(recurrent(f"enc_lower.{i}") for i in range(manifest["num_lower_layers"])),
        encoder_upper=tuple(recurrent(f"enc_upper.{i}") for i in range(manifest["num_upper_layers"])),
        prediction=tuple(recurrent(f"pred.{i}") for i in range(manifest["num_prediction_layers"])),
        embedding=params["embedding"],
        joint=DenseLayer(params["joint.weight"], params["joint.bias"]),
        output=DenseLayer(params["output.weight"], params["output.bias"]),
        vocab=vocab,
        phone_branch=branch,
    )
