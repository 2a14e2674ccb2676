"""Person-order canonicalization and the temporal DCT.

Motion arrays use the ``(3J, P, T)`` layout: row ``3j + k`` holds coordinate
``k`` of joint ``j``. Optional leading batch axes are allowed by the DCT
helpers but not by the sorting helpers, which work one scene at a time.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import tensor as tn
from .errors import ContractError, DimensionError


@dataclass(frozen=True)
class DctBasis:
    """Orthonormal DCT-II matrix for ``T`` frames (``matrix[k, n]``)."""

    T: int
    matrix: np.ndarray
    inverse: np.ndarray

    @classmethod
    def build(cls, T: int) -> "DctBasis":
        return _basis(int(T))


@lru_cache(maxsize=None)
def _basis(T: int) -> DctBasis:
    if T < 1:
        raise ContractError(f"DCT length must be >= 1, got {T}")
    k = np.arange(T)[:, None]
    n = np.arange(T)[None, :]
    m = np.cos(np.pi * (n + 0.5) * k / T) * np.sqrt(2.0 / T)
    m[0, :] = 1.0 / np.sqrt(T)
    m.setflags(write=False)
    inv = m.T.copy()
    inv.setflags(write=False)
    return DctBasis(T, m, inv)


def _apply_time_matrix(x, mat: np.ndarray, axis: int, label: str):
    # ``mat`` maps input frame n to output index k as mat[k, n].
    if isinstance(x, tn.Tensor):
        if x.shape[axis] != mat.shape[1]:
            raise DimensionError(f"temporal axis has {x.shape[axis]} frames, basis expects {mat.shape[1]}")
        return tn.linear_along_axis(x, axis, tn.Tensor(mat.T), label=label)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] != mat.shape[1]:
        raise DimensionError(f"temporal axis has {x.shape[axis]} frames, basis expects {mat.shape[1]}")
    return np.moveaxis(np.moveaxis(x, axis, -1) @ mat.T, -1, axis)


def dct_forward(x, basis: DctBasis, axis: int = -1):
    """DCT coefficients of every temporal fiber; works on arrays and Tensors."""
    return _apply_time_matrix(x, basis.matrix, axis, "dct")


def dct_inverse(x, basis: DctBasis, axis: int = -1):
    return _apply_time_matrix(x, basis.inverse, axis, "idct")


@dataclass(frozen=True)
class PersonPermutation:
    """``order[s]`` is the original index of the person placed in slot ``s``.

    ``keys`` are listed in slot order, hence non-increasing.
    """

    order: np.ndarray
    keys: np.ndarray

    def __post_init__(self):
        order = np.asarray(self.order)
        if sorted(order.tolist()) != list(range(order.size)):
            raise ContractError(f"order {order.tolist()} is not a permutation")

    @property
    def P(self) -> int:
        return int(self.order.size)

    @classmethod
    def identity(cls, P: int) -> "PersonPermutation":
        return cls(np.arange(P), np.zeros(P))

    def apply(self, x: np.ndarray, axis: int = 1) -> np.ndarray:
        """Reorder persons of ``x`` into slot order."""
        x = np.asarray(x)
        if x.shape[axis] != self.P:
            raise ContractError(f"expected {self.P} persons, got {x.shape[axis]}")
        return np.take(x, self.order, axis=axis)

    def invert(self, y: np.ndarray, axis: int = 1) -> np.ndarray:
        """Put slot-ordered persons back into their original positions."""
        y = np.asarray(y)
        if y.shape[axis] != self.P:
            raise ContractError(f"expected {self.P} persons, got {y.shape[axis]}")
        return np.take(y, np.argsort(self.order), axis=axis)


def hip_track(x: np.ndarray, hip_index: int) -> np.ndarray:
    """Hip coordinates as ``(3, P, T)``."""
    x = np.asarray(x, dtype=np.float64)
    J = x.shape[-3] // 3
    if not 0 <= hip_index < J:
        raise ContractError(f"hip_index {hip_index} outside [0, {J})")
    return x[..., 3 * hip_index: 3 * hip_index + 3, :, :]


def pips_keys(x: np.ndarray, hip_index: int) -> np.ndarray:
    """Sum of first-frame hip distances from each person to every other one."""
    hips = hip_track(x, hip_index)[:, :, 0].T  # (P, 3)
    dist = np.sqrt(((hips[:, None, :] - hips[None, :, :]) ** 2).sum(axis=-1))
    return dist.sum(axis=1)


def pips_sort(x: np.ndarray, hip_index: int) -> tuple[np.ndarray, PersonPermutation]:
    """Order persons by descending first-frame distance sum (stable on ties)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] < 1:
        raise ContractError(f"expected a (3J, P, T) motion array, got shape {x.shape}")
    keys = pips_keys(x, hip_index)
    order = np.argsort(-keys, kind="stable")
    perm = PersonPermutation(order, keys[order])
    return perm.apply(x), perm


def ipips_restore(y: np.ndarray, perm: PersonPermutation) -> np.ndarray:
    return perm.invert(y)
