"""Input checks shared by the estimator API, the CLI and the metrics."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ValidationError


def check_motion(x, *, J: int | None = None, P: int | None = None, T: int | None = None,
                 batched: bool | None = None, name: str = "X") -> np.ndarray:
    """Return ``x`` as a finite float64 ``(3J, P, T)`` or ``(n, 3J, P, T)`` array.

    ``batched=None`` accepts either rank; ``True``/``False`` demand one. Any of
    ``J``, ``P``, ``T`` that is given must match.
    """
    a = np.asarray(x, dtype=np.float64)
    allowed = {None: (3, 4), True: (4,), False: (3,)}[batched]
    if a.ndim not in allowed:
        raise DimensionError(f"{name}: expected rank {' or '.join(map(str, allowed))}, got shape {a.shape}")
    feat, persons, frames = a.shape[-3:]
    if feat % 3:
        raise DimensionError(f"{name}: feature axis {feat} is not a multiple of 3")
    for label, want, got in (("J", J, feat // 3), ("P", P, persons), ("T", T, frames)):
        if want is not None and want != got:
            raise DimensionError(f"{name}: expected {label}={want}, got {got} (shape {a.shape})")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name}: contains non-finite values")
    return a


def check_pair(pred, gt, name: str = "pred") -> tuple[np.ndarray, np.ndarray]:
    p = check_motion(pred, name=name)
    g = check_motion(gt, name="target")
    if p.shape != g.shape:
        raise DimensionError(f"{name} shape {p.shape} != target shape {g.shape}")
    return p, g


def check_consistent_length(*arrays) -> int:
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise ValidationError(f"inconsistent sample counts: {sorted(lengths)}")
    return lengths.pop()
