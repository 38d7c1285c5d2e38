"""Minimal neural substrate: embedding MLP + LSTM stack + decoder, masked
categorical output, Adam with a linear learning-rate schedule.

Parameters live in a single flat float32 array with a named-shape manifest,
so checkpoints, optimizer state, and gradient checks all operate on one
vector. Torch supplies reverse-mode differentiation; all public surfaces
take and return numpy arrays.

Single-threaded torch keeps forward/backward bit-reproducible regardless of
the host's core count; the nets here are small enough that this costs
nothing.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

torch.set_num_threads(1)

ACTIVATIONS = {
    "relu": F.relu,
    "gelu": F.gelu,
    "tanh": torch.tanh,
}


class NeuralError(Exception):
    pass


@dataclass(frozen=True)
class PolicySpec:
    """Architecture description; serializable and hashable."""

    input_width: int
    embed_widths: tuple[int, ...]
    lstm_widths: tuple[int, ...]
    decoder_widths: tuple[int, ...]
    output_size: int
    activation: str = "gelu"
    dropout: float = 0.0
    version: int = 1

    def __post_init__(self):
        if self.input_width <= 0 or self.output_size <= 0:
            raise ValueError("widths must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_json(doc: dict) -> "PolicySpec":
        doc = dict(doc)
        for k in ("embed_widths", "lstm_widths", "decoder_widths"):
            doc[k] = tuple(doc[k])
        return PolicySpec(**doc)

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_json(), sort_keys=True).encode()
        ).hexdigest()[:16]


def manifest(spec: PolicySpec) -> list[tuple[str, tuple[int, ...]]]:
    """Named parameter shapes, in flat-array order."""
    out: list[tuple[str, tuple[int, ...]]] = []
    width = spec.input_width
    for i, w in enumerate(spec.embed_widths):
        out.append((f"embed{i}.weight", (w, width)))
        out.append((f"embed{i}.bias", (w,)))
        width = w
    for i, h in enumerate(spec.lstm_widths):
        out.append((f"lstm{i}.w_ih", (4 * h, width)))
        out.append((f"lstm{i}.w_hh", (4 * h, h)))
        out.append((f"lstm{i}.bias", (4 * h,)))
        width = h
    for i, w in enumerate(spec.decoder_widths):
        out.append((f"decoder{i}.weight", (w, width)))
        out.append((f"decoder{i}.bias", (w,)))
        width = w
    out.append(("out.weight", (spec.output_size, width)))
    out.append(("out.bias", (spec.output_size,)))
    return out


def num_params(spec: PolicySpec) -> int:
    return sum(int(np.prod(shape)) for _, shape in manifest(spec))


@dataclass
class ParameterSet:
    spec: PolicySpec
    flat: np.ndarray  # float32, length == manifest sum

    def __post_init__(self):
        expected = num_params(self.spec)
        if self.flat.shape != (expected,):
            raise NeuralError(
                f"flat array has {self.flat.shape}, manifest requires ({expected},)"
            )
        if not np.all(np.isfinite(self.flat)):
            raise NeuralError("parameters contain non-finite entries")

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.spec, self.flat.copy())


def init_params(spec: PolicySpec, seed: int = 0) -> ParameterSet:
    """Fan-in uniform init for linears, LSTM forget-gate bias at 1."""
    rng = np.random.Generator(np.random.Philox(seed))
    chunks = []
    for name, shape in manifest(spec):
        if name.endswith(".bias") and not name.startswith("lstm"):
            arr = np.zeros(shape, dtype=np.float32)
        elif name.endswith(".bias"):  # lstm bias: forget gate to 1
            h = shape[0] // 4
            arr = np.zeros(shape, dtype=np.float32)
            arr[h : 2 * h] = 1.0
        else:
            fan_in = shape[-1]
            bound = 1.0 / math.sqrt(fan_in)
            arr = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        chunks.append(arr.ravel())
    return ParameterSet(spec, np.concatenate(chunks))


def _views(flat: torch.Tensor, spec: PolicySpec) -> dict[str, torch.Tensor]:
    out = {}
    pos = 0
    for name, shape in manifest(spec):
        size = int(np.prod(shape))
        out[name] = flat[pos : pos + size].view(shape)
        pos += size
    return out


@dataclass
class RecurrentState:
    """Carried (h, c) activations per LSTM layer for a batch of trajectories."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    @staticmethod
    def zeros(spec: PolicySpec, batch: int = 1) -> "RecurrentState":
        return RecurrentState(
            [(np.zeros((batch, h), dtype=np.float32),
              np.zeros((batch, h), dtype=np.float32)) for h in spec.lstm_widths]
        )


def _forward_torch(
    spec: PolicySpec,
    views: dict[str, torch.Tensor],
    x: torch.Tensor,  # [B, T, F]
    masks: Optional[torch.Tensor],  # [B, T, A] bool or None
    mode: str,
    dropout_seed: int,
    initial: Optional[list[tuple[torch.Tensor, torch.Tensor]]] = None,
) -> tuple[torch.Tensor, torch.Tensor, list[tuple[torch.Tensor, torch.Tensor]]]:
    """Returns (log_probs or raw logits [B,T,A], logits, final state)."""
    act = ACTIVATIONS[spec.activation]
    B, T, _ = x.shape
    gen = torch.Generator().manual_seed(dropout_seed)
    train = mode == "train" and spec.dropout > 0.0

    def drop(t: torch.Tensor) -> torch.Tensor:
        if not train:
            return t
        keep = 1.0 - spec.dropout
        mask = (torch.rand(t.shape, generator=gen, dtype=torch.float32)
                < keep).to(t.dtype)
        return t * mask / keep

    h = x
    for i in range(len(spec.embed_widths)):
        h = act(F.linear(h, views[f"embed{i}.weight"], views[f"embed{i}.bias"]))
    # dropout on embedding output and decoder input only
    h = drop(h)

    finals: list[tuple[torch.Tensor, torch.Tensor]] = []
    for i, width in enumerate(spec.lstm_widths):
        w_ih, w_hh = views[f"lstm{i}.w_ih"], views[f"lstm{i}.w_hh"]
        bias = views[f"lstm{i}.bias"]
        if initial is not None:
            ht, ct = initial[i]
        else:
            ht = torch.zeros(B, width, dtype=h.dtype)
            ct = torch.zeros(B, width, dtype=h.dtype)
        outs = []
        pre_in = F.linear(h, w_ih, bias)  # [B, T, 4H]
        for t in range(T):
            gates = pre_in[:, t] + F.linear(ht, w_hh)
            i_g, f_g, g_g, o_g = gates.chunk(4, dim=-1)
            ct = torch.sigmoid(f_g) * ct + torch.sigmoid(i_g) * torch.tanh(g_g)
            ht = torch.sigmoid(o_g) * torch.tanh(ct)
            outs.append(ht)
        h = torch.stack(outs, dim=1)
        finals.append((ht, ct))

    h = drop(h)
    for i in range(len(spec.decoder_widths)):
        h = act(F.linear(h, views[f"decoder{i}.weight"], views[f"decoder{i}.bias"]))
    logits = F.linear(h, views["out.weight"], views["out.bias"])

    if masks is not None:
        if not bool(masks.any(dim=-1).all()):
            raise NeuralError("a step has every action masked")
        logits = logits.masked_fill(~masks, float("-inf"))
    log_probs = F.log_softmax(logits, dim=-1)
    return log_probs, logits, finals


def _pack(sequences: Sequence[np.ndarray], dtype) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad variable-length [T_i, F] arrays to [B, T_max, F] + step-valid mask."""
    B = len(sequences)
    T = max(s.shape[0] for s in sequences)
    F_ = sequences[0].shape[1]
    x = torch.zeros(B, T, F_, dtype=dtype)
    valid = torch.zeros(B, T, dtype=torch.bool)
    for i, s in enumerate(sequences):
        x[i, : s.shape[0]] = torch.as_tensor(np.asarray(s), dtype=dtype)
        valid[i, : s.shape[0]] = True
    return x, valid


def forward(
    spec: PolicySpec,
    params: ParameterSet,
    feature_sequence: np.ndarray,  # [T, F]
    legal_masks: Optional[np.ndarray] = None,  # [T, A] bool
    mode: str = "eval",
    dropout_seed: int = 0,
    initial_state: Optional[RecurrentState] = None,
) -> tuple[np.ndarray, RecurrentState]:
    """Per-step action distributions for one trajectory."""
    feats = np.asarray(feature_sequence, dtype=np.float32)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise NeuralError(f"feature sequence must be [T, F], got {feats.shape}")
    flat = torch.from_numpy(params.flat)
    views = _views(flat, spec)
    x = torch.from_numpy(feats).unsqueeze(0)
    m = None
    if legal_masks is not None:
        m = torch.from_numpy(np.asarray(legal_masks, dtype=bool)).unsqueeze(0)
    init = None
    if initial_state is not None:
        init = [(torch.from_numpy(h), torch.from_numpy(c))
                for h, c in initial_state.layers]
    with torch.no_grad():
        log_probs, _, finals = _forward_torch(
            spec, views, x, m, mode, dropout_seed, init
        )
    probs = torch.exp(log_probs)[0].numpy()
    state = RecurrentState(
        [(h.numpy().copy(), c.numpy().copy()) for h, c in finals]
    )
    return probs, state


@dataclass
class LossSpec:
    """Masked cross-entropy over trajectory steps."""

    reduction: str = "mean"  # "mean" over total steps, or "sum"


def backward(
    spec: PolicySpec,
    params: ParameterSet,
    batch: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    loss_spec: LossSpec = LossSpec(),
    mode: str = "train",
    dropout_seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> tuple[float, ParameterSet]:
    """Loss and gradient for a batch of (features, legal_masks, labels).

    Labels are ActionIndex arrays; a label falling on a masked action is a
    hard error (upstream data corruption).
    """
    if not batch:
        raise NeuralError("empty batch")
    flat = torch.tensor(params.flat, dtype=dtype, requires_grad=True)
    views = _views(flat, spec)
    x, valid = _pack([b[0] for b in batch], dtype)
    B, T = valid.shape
    masks = torch.zeros(B, T, spec.output_size, dtype=torch.bool)
    labels = torch.zeros(B, T, dtype=torch.long)
    for i, (_, m, y) in enumerate(batch):
        t = m.shape[0]
        masks[i, :t] = torch.as_tensor(np.asarray(m, dtype=bool))
        labels[i, :t] = torch.as_tensor(np.asarray(y, dtype=np.int64))
        bad = ~np.asarray(m, dtype=bool)[np.arange(t), np.asarray(y)]
        if bad.any():
            raise NeuralError(
                f"trajectory {i}: label at step {int(np.argmax(bad))} is masked illegal"
            )
    masks[~valid] = True  # keep padded steps well-defined; excluded from loss

    log_probs, _, _ = _forward_torch(spec, views, x, masks, mode, dropout_seed)
    picked = log_probs.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
    total = picked[valid].sum().double()
    steps = int(valid.sum())
    loss = -total / steps if loss_spec.reduction == "mean" else -total
    if not torch.isfinite(loss):
        raise NeuralError(f"non-finite loss {loss.item()} (check inputs/params)")
    (grad,) = torch.autograd.grad(loss, flat)
    return float(loss.item()), ParameterSet(
        spec, grad.detach().to(torch.float32).numpy().copy()
    )


# --- optimizer ----------------------------------------------------------------


@dataclass
class ScheduleConfig:
    initial_lr: float
    final_lr: Optional[float] = None  # None: constant
    total_steps: int = 0
    # fraction of training after which the rate sits at final_lr
    decay_until: float = 0.9

    def lr_at(self, step: int) -> float:
        if self.final_lr is None or self.total_steps <= 0:
            return self.initial_lr
        progress = min(1.0, step / (self.total_steps * self.decay_until))
        return self.initial_lr + (self.final_lr - self.initial_lr) * progress


BC_REFERENCE_SCHEDULE = ScheduleConfig(initial_lr=0.005, final_lr=5.0e-05, total_steps=0)


@dataclass
class OptimizerState:
    schedule: ScheduleConfig
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None


def adam_step(
    opt: OptimizerState, params: ParameterSet, grads: ParameterSet
) -> tuple[ParameterSet, OptimizerState]:
    if grads.flat.shape != params.flat.shape:
        raise NeuralError("gradient/parameter shape mismatch")
    m = opt.m if opt.m is not None else np.zeros_like(params.flat, dtype=np.float64)
    v = opt.v if opt.v is not None else np.zeros_like(params.flat, dtype=np.float64)
    g = grads.flat.astype(np.float64)
    lr = opt.schedule.lr_at(opt.step)
    step = opt.step + 1
    m = opt.beta1 * m + (1 - opt.beta1) * g
    v = opt.beta2 * v + (1 - opt.beta2) * g * g
    m_hat = m / (1 - opt.beta1**step)
    v_hat = v / (1 - opt.beta2**step)
    new_flat = params.flat - (lr * m_hat / (np.sqrt(v_hat) + opt.eps)).astype(
        np.float32
    )
    new_opt = OptimizerState(
        schedule=opt.schedule, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps,
        step=step, m=m, v=v,
    )
    return ParameterSet(params.spec, new_flat), new_opt


def clip_grad_norm(grads: ParameterSet, max_norm: float) -> tuple[ParameterSet, float]:
    norm = float(np.linalg.norm(grads.flat.astype(np.float64)))
    if norm > max_norm and norm > 0:
        return ParameterSet(grads.spec, grads.flat * np.float32(max_norm / norm)), norm
    return grads, norm


# --- checkpoints ----------------------------------------------------------------


def save_checkpoint(params: ParameterSet, path: str | Path) -> None:
    np.savez(
        path,
        flat=params.flat,
        spec=json.dumps(params.spec.to_json()),
        spec_hash=params.spec.hash(),
        manifest=json.dumps([[n, list(s)] for n, s in manifest(params.spec)]),
    )


def load_checkpoint(path: str | Path) -> ParameterSet:
    with np.load(path, allow_pickle=False) as data:
        spec = PolicySpec.from_json(json.loads(str(data["spec"])))
        if str(data["spec_hash"]) != spec.hash():
            raise NeuralError(f"checkpoint {path}: spec hash mismatch")
        return ParameterSet(spec, data["flat"].astype(np.float32))
