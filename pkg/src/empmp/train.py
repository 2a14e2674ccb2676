"""Adam, learning-rate schedules and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as tn
from .checkpoint import dumps, load_checkpoint, loads, save_checkpoint
from .data import Scene, TrainWindow, augment, window_split
from .errors import ConfigError, ContractError, NumericError
from .losses import LossBreakdown, joint_loss, velocity_loss
from .model import EmpmpModel, forward_sorted
from .transforms import pips_sort

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def scalars(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "step": self.step}

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"adam.m/{k}": a for k, a in self.m.items()}
        out.update({f"adam.v/{k}": a for k, a in self.v.items()})
        return out

    @classmethod
    def restore(cls, scalars: dict, tensors: Mapping[str, np.ndarray]) -> "AdamState":
        st = cls(**scalars)
        for key, arr in tensors.items():
            kind, _, name = key.partition("/")
            if kind == "adam.m":
                st.m[name] = np.array(arr)
            elif kind == "adam.v":
                st.v[name] = np.array(arr)
        return st


def adam_step(params: Mapping[str, tn.Tensor], grads: Mapping[str, np.ndarray],
              state: AdamState) -> tuple[Mapping[str, tn.Tensor], AdamState]:
    """One bias-corrected Adam update, applied in place to ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainPlan:
    """Everything that controls a training run except the model and data."""

    epochs: int
    batch_size: int = 128
    lr: float = 3e-4
    schedule: str = "constant"
    decay_factor: float = 0.8
    decay_every: int = 10
    seed: int = 0
    augment: bool = True
    window_mode: str = "random"
    window_stride: int = 1
    checkpoint_every: int = 0
    max_grad_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.schedule not in ("constant", "step"):
            raise ConfigError(f"schedule must be 'constant' or 'step', got {self.schedule!r}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_every < 1:
            raise ConfigError(f"decay_every must be >= 1, got {self.decay_every}")
        if self.window_mode not in ("random", "stride"):
            raise ConfigError(f"window_mode must be 'random' or 'stride', got {self.window_mode!r}")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            raise ConfigError("max_grad_norm must be positive when set")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``."""
        if self.schedule == "constant":
            return self.lr
        return self.lr * self.decay_factor ** (epoch // self.decay_every)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainPlan":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train plan fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    model: EmpmpModel
    history: list[LossBreakdown]
    state: AdamState
    epochs_done: int


def _sorted_pair(w: TrainWindow, hip: int) -> TrainWindow:
    x, perm = pips_sort(w.input, hip)
    return TrainWindow(x, perm.apply(w.target), w.scene, w.start)


def _epoch_windows(plan: TrainPlan, model: EmpmpModel, data, rng, fixed):
    if fixed is not None:
        return fixed
    c = model.config
    return [w for s in data for w in window_split(s, c.T, c.T_out, rng=rng)]


def train_step(model: EmpmpModel, x: np.ndarray, y: np.ndarray, state: AdamState,
               max_grad_norm: float | None = None) -> LossBreakdown:
    """Forward, backward and one Adam update on a pre-sorted batch."""
    with tn.Tape() as tape:
        tape.watch(*model.parameters())
        pred = forward_sorted(x, model)
        lj = joint_loss(pred, y)
        lv = velocity_loss(pred, y)
        loss = tn.add(lj, lv)
    value = LossBreakdown(float(lj.data), float(lv.data))
    if not math.isfinite(value.total):
        raise NumericError(f"loss became non-finite at step {state.step + 1}")
    model.zero_grad()
    tn.backward(loss, tape)
    named = dict(model.named_parameters())
    grads = {name: p.grad for name, p in named.items()}
    if max_grad_norm is not None:
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > max_grad_norm:
            grads = {k: g * (max_grad_norm / norm) for k, g in grads.items()}
    adam_step(named, grads, state)
    model.zero_grad()
    return value


def train(plan: TrainPlan, model: EmpmpModel, data: Sequence[Scene] | Sequence[TrainWindow],
          out_dir=None, state: AdamState | None = None, start_epoch: int = 0,
          on_epoch: Callable[[int, LossBreakdown], None] | None = None) -> TrainResult:
    """Train ``model`` in place.

    Batch order, random windows and augmentation for epoch ``e`` come from a
    generator seeded with ``(plan.seed, e)``, so a run resumed at ``e`` from
    its checkpoint continues exactly like the uninterrupted one.
    """
    if not data:
        raise ContractError("training data is empty")
    c = model.config
    state = state or AdamState(lr=plan.lr)
    out_dir = Path(out_dir) if out_dir is not None else None

    fixed = None
    if isinstance(data[0], TrainWindow):
        fixed = list(data)
    elif plan.window_mode == "stride":
        fixed = [w for s in data for w in window_split(s, c.T, c.T_out, stride=plan.window_stride)]
    for item in (fixed or data):
        P = item.input.shape[1] if isinstance(item, TrainWindow) else item.P
        if P != c.P:
            raise ContractError(f"data has {P} persons per scene, model expects {c.P}")

    history: list[LossBreakdown] = []
    for epoch in range(start_epoch, plan.epochs):
        rng = np.random.default_rng([plan.seed, epoch])
        windows = [_sorted_pair(w, c.hip_index) for w in _epoch_windows(plan, model, data, rng, fixed)]
        order = rng.permutation(len(windows))
        state.lr = plan.lr_at(epoch)
        sums = np.zeros(2)
        for start in range(0, len(order), plan.batch_size):
            batch = [windows[i] for i in order[start:start + plan.batch_size]]
            if plan.augment:
                batch = [augment(w, rng) for w in batch]
            x = np.stack([w.input for w in batch])
            y = np.stack([w.target for w in batch])
            lb = train_step(model, x, y, state, plan.max_grad_norm)
            sums += len(batch) * np.array([lb.joint, lb.velocity])
        epoch_loss = LossBreakdown(*(float(v) for v in sums / len(windows)))
        history.append(epoch_loss)
        log.info("epoch %d joint %.6g velocity %.6g", epoch + 1, epoch_loss.joint, epoch_loss.velocity)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss)
        if out_dir is not None and plan.checkpoint_every and (epoch + 1) % plan.checkpoint_every == 0:
            write_training_checkpoint(out_dir / f"epoch_{epoch + 1:05d}.empm", model, state, epoch + 1)
    return TrainResult(model, history, state, plan.epochs)


def write_training_checkpoint(path, model: EmpmpModel, state: AdamState, epochs_done: int) -> None:
    meta = {"epochs_done": epochs_done, "adam": state.scalars()}
    save_checkpoint(path, model, meta, state.tensors())


def resume(path) -> tuple[EmpmpModel, AdamState, int]:
    ckpt = load_checkpoint(path)
    scalars = ckpt.meta.get("adam")
    state = AdamState.restore(scalars, ckpt.extra) if scalars else AdamState()
    return ckpt.model, state, int(ckpt.meta.get("epochs_done", 0))


def write_loss_csv(path, history: Sequence[LossBreakdown], first_epoch: int = 1) -> None:
    lines = ["epoch,joint_loss,velocity_loss,total"]
    for i, lb in enumerate(history):
        lines.append(f"{first_epoch + i},{float(lb.joint)!r},{float(lb.velocity)!r},{float(lb.total)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def pretrain_finetune(plan_pre: TrainPlan, plan_ft: TrainPlan, model: EmpmpModel,
                      data_pre, data_ft) -> tuple[TrainResult, TrainResult]:
    """Pre-train, hand the weights over through a checkpoint blob, then fine-tune."""
    pre = train(plan_pre, model, data_pre) if plan_pre.epochs else TrainResult(model, [], AdamState(), 0)
    handed = loads(dumps(pre.model)).model
    ft = train(plan_ft, handed, data_ft)
    return pre, ft
