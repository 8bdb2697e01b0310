"""Training: manual backpropagation through encoder, prediction, joint and
phone-branch stacks, the three step modes (transducer-only, multitask,
branch-only), and the freeze-lower adaptation loop."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, ContractError, TrainingDataError
from ..numcore import RecurrentLayer, make_rng, recurrent_forward, sgd_step, softmax
from .loss import rnnt_grad, rnnt_loss
from .model import (
    PosteriorLattice,
    TransducerModel,
    encoder_layer_freeze_names,
    named_params,
    rnnt_param_names,
    with_params,
)

TRAIN_MODES = ("rnnt-only", "mtl", "ce-branch-only")

DEFAULT_MTL_ALPHA = 0.1


@dataclass(frozen=True)
class TrainingExample:
    """One utterance: frames, target piece ids, optional frame-level phone ids."""

    features: np.ndarray
    targets: tuple[int, ...]
    phone_targets: tuple[int, ...] | None = None
    utt_id: str = ""
    origin: str = ""

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if self.phone_targets is not None:
            object.__setattr__(
                self, "phone_targets", tuple(int(t) for t in self.phone_targets)
            )
        if f.ndim != 2 or f.shape[0] == 0:
            raise TrainingDataError(f"features must be (T>0, D), got shape {f.shape}")
        if self.phone_targets is not None and len(self.phone_targets) != f.shape[0]:
            raise TrainingDataError(
                f"{len(self.phone_targets)} phone targets for {f.shape[0]} frames"
            )


@dataclass(frozen=True)
class StepLosses:
    total: float
    rnnt: float | None = None
    ce: float | None = None


def mtl_loss(rnnt: float, ce: float, alpha: float) -> float:
    """Multitask combination alpha * ce + (1 - alpha) * rnnt."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"multitask weight must be in [0, 1], got {alpha}")
    return alpha * ce + (1.0 - alpha) * rnnt


# ---------------------------------------------------------------------------
# Recurrent stack forward with caches, and the matching backward pass.
# ---------------------------------------------------------------------------


def _stack_forward(layers, x: np.ndarray):
    caches = []
    out = x
    for layer in layers:
        states = recurrent_forward(out, layer)
        caches.append((out, states))
        out = states
    return out, caches


def _layer_backward(layer: RecurrentLayer, x_seq, h_seq, d_h):
    """Backprop one tanh cell over time given gradients on its output states."""
    T = h_seq.shape[0]
    g_in = np.zeros_like(layer.w_in)
    g_rec = np.zeros_like(layer.w_rec)
    g_bias = np.zeros_like(layer.bias)
    d_x = np.zeros((T, layer.in_dim))
    carry = np.zeros(layer.hidden_dim)
    for t in range(T - 1, -1, -1):
        d_a = (d_h[t] + carry) * (1.0 - h_seq[t] ** 2)
        g_in += np.outer(d_a, x_seq[t])
        g_rec += np.outer(d_a, h_seq[t - 1] if t > 0 else np.zeros(layer.hidden_dim))
        g_bias += d_a
        d_x[t] = layer.w_in.T @ d_a
        carry = layer.w_rec.T @ d_a
    return d_x, g_in, g_rec, g_bias


def _stack_backward(layers, caches, d_out, prefix: str, grads: dict) -> np.ndarray:
    d = d_out
    for i in range(len(layers) - 1, -1, -1):
        x_seq, h_seq = caches[i]
        d, g_in, g_rec, g_bias = _layer_backward(layers[i], x_seq, h_seq, d)
        grads[f"{prefix}.{i}.w_in"] += g_in
        grads[f"{prefix}.{i}.w_rec"] += g_rec
        grads[f"{prefix}.{i}.bias"] += g_bias
    return d


def zero_grads(model: TransducerModel) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(p) for name, p in named_params(model).items()}


def rnnt_forward_backward(model: TransducerModel, features, targets):
    """Transducer loss for one utterance and its gradient over all
    recognition parameters; branch entries stay zero."""
    frames = np.asarray(features, dtype=np.float64)
    y = [int(t) for t in targets]
    grads = zero_grads(model)

    lower, low_caches = _stack_forward(model.encoder_lower, frames)
    if model.encoder_upper:
        enc, up_caches = _stack_forward(model.encoder_upper, lower)
    else:
        enc, up_caches = lower, []
    embedded = model.embedding[y]
    pred_states, pred_caches = _stack_forward(model.prediction, embedded)
    h_pre = np.vstack([np.zeros((1, model.prediction_dim)), pred_states])

    T, U1 = enc.shape[0], h_pre.shape[0]
    cat = np.concatenate(
        [
            np.broadcast_to(enc[:, None, :], (T, U1, enc.shape[1])),
            np.broadcast_to(h_pre[None, :, :], (T, U1, h_pre.shape[1])),
        ],
        axis=2,
    )
    z = np.tanh(cat @ model.joint.weight.T + model.joint.bias)
    logits = z @ model.output.weight.T + model.output.bias
    lattice = PosteriorLattice(softmax(logits))
    loss = rnnt_loss(lattice, y, model.vocab.blank_id)

    d_logits = rnnt_grad(lattice, y, model.vocab.blank_id)
    grads["output.weight"] += np.einsum("tuk,tuj->kj", d_logits, z)
    grads["output.bias"] += d_logits.sum(axis=(0, 1))
    d_a = (d_logits @ model.output.weight) * (1.0 - z ** 2)
    grads["joint.weight"] += np.einsum("tuj,tuc->jc", d_a, cat)
    grads["joint.bias"] += d_a.sum(axis=(0, 1))
    d_cat = d_a @ model.joint.weight
    d_enc = d_cat[:, :, : enc.shape[1]].sum(axis=1)
    d_pre = d_cat[:, :, enc.shape[1]:].sum(axis=0)

    if model.encoder_upper:
        d_lower = _stack_backward(model.encoder_upper, up_caches, d_enc, "enc_upper", grads)
    else:
        d_lower = d_enc
    _stack_backward(model.encoder_lower, low_caches, d_lower, "enc_lower", grads)

    # d_pre[0] lands on the constant empty-history state and is dropped.
    d_embedded = _stack_backward(model.prediction, pred_caches, d_pre[1:], "pred", grads)
    np.add.at(grads["embedding"], y, d_embedded)
    return loss, grads


def ce_forward_backward(model: TransducerModel, features, phone_targets,
                        through_encoder: bool):
    """Frame-averaged phone cross entropy and its gradient.

    With through_encoder the gradient continues into the lower encoder stack;
    otherwise the lower states are treated as fixed inputs, which is what
    branch-only training means.
    """
    if model.phone_branch is None:
        raise ConfigurationError("phone cross entropy requires a phone branch")
    frames = np.asarray(features, dtype=np.float64)
    targets = [int(t) for t in phone_targets]
    num_phones = len(model.phone_branch.phones)
    for p in targets:
        if not 0 <= p < num_phones:
            raise TrainingDataError(f"phone target {p} out of range for {num_phones} phones")
    grads = zero_grads(model)

    lower, low_caches = _stack_forward(model.encoder_lower, frames)
    if len(targets) != lower.shape[0]:
        raise TrainingDataError(f"{len(targets)} phone targets for {lower.shape[0]} frames")
    branch = model.phone_branch
    hidden, branch_caches = _stack_forward(branch.layers, lower)
    logits = hidden @ branch.out.weight.T + branch.out.bias
    probs = softmax(logits)
    T = lower.shape[0]
    with np.errstate(divide="ignore"):
        loss = float(-np.log(probs[np.arange(T), targets]).mean())

    d_logits = probs.copy()
    d_logits[np.arange(T), targets] -= 1.0
    d_logits /= T
    grads["branch.out.weight"] += d_logits.T @ hidden
    grads["branch.out.bias"] += d_logits.sum(axis=0)
    d_hidden = d_logits @ branch.out.weight
    d_lower = _stack_backward(branch.layers, branch_caches, d_hidden, "branch", grads)
    if through_encoder:
        _stack_backward(model.encoder_lower, low_caches, d_lower, "enc_lower", grads)
    return loss, grads


# ---------------------------------------------------------------------------
# Step and adaptation loop
# ---------------------------------------------------------------------------


def _accumulate(total: dict, part: dict, scale: float) -> None:
    for name, g in part.items():
        total[name] += scale * g


def train_step(model: TransducerModel, batch, mode: str, freeze=frozenset(),
               lr: float = 0.05, alpha: float = DEFAULT_MTL_ALPHA):
    """One SGD step over a batch; returns (updated model, batch-mean losses).

    Frozen names (exact or dotted prefixes) keep their parameter arrays
    untouched. ce-branch-only additionally pins every recognition parameter,
    and stops gradients at the branch input.
    """
    if mode not in TRAIN_MODES:
        raise ConfigurationError(f"unknown training mode {mode!r}")
    batch = list(batch)
    if not batch:
        raise ContractError("empty training batch")
    need_ce = mode in ("mtl", "ce-branch-only")
    if need_ce:
        missing = [ex.utt_id for ex in batch if ex.phone_targets is None]
        if missing:
            raise TrainingDataError(
                f"mode {mode!r} needs frame phone targets; missing for {missing}"
            )
    rnnt_weight = {"rnnt-only": 1.0, "mtl": 1.0 - alpha, "ce-branch-only": 0.0}[mode]
    ce_weight = {"rnnt-only": 0.0, "mtl": alpha, "ce-branch-only": 1.0}[mode]
    if mode == "mtl" and not 0.0 <= alpha <= 1.0:
        raise ContractError(f"multitask weight must be in [0, 1], got {alpha}")

    grads = zero_grads(model)
    rnnt_losses, ce_losses = [], []
    for ex in batch:
        if mode != "ce-branch-only":
            loss_r, g_r = rnnt_forward_backward(model, ex.features, ex.targets)
            _accumulate(grads, g_r, rnnt_weight / len(batch))
            rnnt_losses.append(loss_r)
        if need_ce:
            loss_c, g_c = ce_forward_backward(
                model, ex.features, ex.phone_targets, through_encoder=(mode == "mtl")
            )
            _accumulate(grads, g_c, ce_weight / len(batch))
            ce_losses.append(loss_c)

    mean_rnnt = float(np.mean(rnnt_losses)) if rnnt_losses else None
    mean_ce = float(np.mean(ce_losses)) if ce_losses else None
    if mode == "rnnt-only":
        total = mean_rnnt
    elif mode == "ce-branch-only":
        total = mean_ce
    else:
        total = mtl_loss(mean_rnnt, mean_ce, alpha)

    frozen = set(freeze)
    if mode == "ce-branch-only":
        frozen |= rnnt_param_names(model)
    elif mode == "rnnt-only":
        frozen.add("branch")
    new_params = sgd_step(named_params(model), grads, lr, frozen=frozen)
    return with_params(model, new_params), StepLosses(total=total, rnnt=mean_rnnt, ce=mean_ce)


def run_training(model: TransducerModel, examples, mode: str, steps: int,
                 lr: float, seed: int = 0, batch_size: int = 1,
                 alpha: float = DEFAULT_MTL_ALPHA, freeze=frozenset()):
    """SGD loop over the example list in seeded shuffled order, reshuffling
    each epoch; returns (model, per-step losses). steps=0 is a no-op."""
    examples = list(examples)
    if not examples:
        raise ContractError("training needs at least one example")
    if batch_size < 1:
        raise ContractError("batch size must be >= 1")
    rng = make_rng(seed)
    order: list[int] = []
    history: list[StepLosses] = []
    for _ in range(steps):
        if len(order) < batch_size:
            order.extend(rng.permutation(len(examples)).tolist())
        batch = [examples[i] for i in order[:batch_size]]
        del order[:batch_size]
        model, losses = train_step(model, batch, mode, freeze=freeze, lr=lr, alpha=alpha)
        history.append(losses)
    return model, history


def adapt(model: TransducerModel, examples, freeze_lower: int, lr: float,
          steps: int, seed: int = 0, batch_size: int = 1) -> TransducerModel:
    """Transducer-only fine-tuning with the bottom encoder layers frozen."""
    frozen = encoder_layer_freeze_names(model, freeze_lower)
    model, _ = run_training(model, examples, "rnnt-only", steps, lr,
                            seed=seed, batch_size=batch_size, freeze=frozen)
    return model
