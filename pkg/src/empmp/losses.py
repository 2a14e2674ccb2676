"""Training objective: mean squared joint error plus velocity error.

Both terms square the Euclidean norm of the 3-vector difference per joint and
average over (batch,) persons, frames and joints. Inputs are ``(…, 3J, P, T')``
arrays or Tensors; with a Tensor prediction the result is a differentiable
scalar Tensor, otherwise a float.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import ContractError
from .tensor import Tensor


@dataclass(frozen=True)
class LossBreakdown:
    joint: float
    velocity: float

    @property
    def total(self) -> float:
        return self.joint + self.velocity


def _prepare(pred, gt):
    gt = gt.data if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    shape = pred.shape if isinstance(pred, Tensor) else np.shape(pred)
    if tuple(shape) != gt.shape:
        raise ContractError(f"prediction shape {tuple(shape)} != target shape {gt.shape}")
    if len(shape) < 3 or shape[-3] % 3:
        raise ContractError(f"expected (…, 3J, P, T') arrays, got shape {tuple(shape)}")
    return pred, gt


def _finish(value: Tensor, was_tensor: bool):
    return value if was_tensor else float(value.data)


def joint_loss(pred, gt):
    pred, gt = _prepare(pred, gt)
    was_tensor = isinstance(pred, Tensor)
    n_joints = int(np.prod(gt.shape)) // 3
    err = tn.sub(tn.as_tensor(pred), Tensor(gt))
    return _finish(tn.scale(tn.sum_all(tn.square(err)), 1.0 / n_joints), was_tensor)


def velocity_loss(pred, gt):
    pred, gt = _prepare(pred, gt)
    if gt.shape[-1] < 2:
        raise ContractError("velocity loss needs at least two output frames")
    was_tensor = isinstance(pred, Tensor)
    # differences of the error equal the error of the differences
    err = tn.diff(tn.sub(tn.as_tensor(pred), Tensor(gt)), axis=-1)
    n_joints = err.size // 3
    return _finish(tn.scale(tn.sum_all(tn.square(err)), 1.0 / n_joints), was_tensor)


def total_loss(pred, gt):
    j = joint_loss(pred, gt)
    v = velocity_loss(pred, gt)
    return tn.add(j, v) if isinstance(j, Tensor) else j + v


def loss_breakdown(pred, gt) -> LossBreakdown:
    pred = pred.data if isinstance(pred, Tensor) else pred
    return LossBreakdown(joint_loss(pred, gt), velocity_loss(pred, gt))
