"""Forecast accuracy metrics, reported in millimetres.

Every function takes prediction and ground truth as ``(..., 3J, P, T')``
arrays in metres with joints packed as ``x0, y0, z0, x1, ...`` along the
first feature axis. Leading batch axes are averaged over. Frame arguments are
1-based.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, ValidationError

MM = 1000.0
METRICS = ("mpjpe", "vim", "jpe", "ape", "fde")


def _joints(a, name: str) -> np.ndarray:
    # (..., 3J, P, T') -> (..., J, 3, P, T')
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 3 or a.shape[-3] % 3:
        raise ContractError(f"{name}: expected (..., 3J, P, T') array, got shape {a.shape}")
    return a.reshape(a.shape[:-3] + (a.shape[-3] // 3, 3) + a.shape[-2:])


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = _joints(pred, "pred"), _joints(gt, "gt")
    if p.shape != g.shape:
        raise ContractError(f"pred shape {np.shape(pred)} != gt shape {np.shape(gt)}")
    return p, g


def _frame(t: int, n_frames: int) -> int:
    if not 1 <= int(t) <= n_frames:
        raise ContractError(f"frame {t} outside [1, {n_frames}]")
    return int(t) - 1


def _hip(p: np.ndarray, hip_index: int) -> np.ndarray:
    if not 0 <= hip_index < p.shape[-4]:
        raise ContractError(f"hip_index {hip_index} outside [0, {p.shape[-4]})")
    return p[..., hip_index:hip_index + 1, :, :, :]


def mpjpe(pred, gt) -> float:
    """Mean Euclidean joint error over persons, frames and joints."""
    p, g = _pair(pred, gt)
    return float(np.linalg.norm(p - g, axis=-3).mean() * MM)


def jpe_at(pred, gt, t: int) -> float:
    """Mean Euclidean joint error at frame ``t``."""
    p, g = _pair(pred, gt)
    i = _frame(t, p.shape[-1])
    return float(np.linalg.norm(p[..., i] - g[..., i], axis=-2).mean() * MM)


def vim_at(pred, gt, t: int) -> float:
    """Per-person root of the summed squared joint error at frame ``t``, averaged over persons."""
    p, g = _pair(pred, gt)
    i = _frame(t, p.shape[-1])
    err = p[..., i] - g[..., i]  # (..., J, 3, P)
    return float(np.sqrt((err ** 2).sum(axis=(-3, -2))).mean() * MM)


def ape_at(pred, gt, t: int, hip_index: int = 0) -> float:
    """Joint error at frame ``t`` after subtracting each person's hip."""
    p, g = _pair(pred, gt)
    p = p - _hip(p, hip_index)
    g = g - _hip(g, hip_index)
    i = _frame(t, p.shape[-1])
    return float(np.linalg.norm(p[..., i] - g[..., i], axis=-2).mean() * MM)


def fde_at(pred, gt, t: int, hip_index: int = 0) -> float:
    """Hip-to-hip distance at frame ``t``, averaged over persons."""
    p, g = _pair(pred, gt)
    i = _frame(t, p.shape[-1])
    d = _hip(p, hip_index)[..., 0, :, :, i] - _hip(g, hip_index)[..., 0, :, :, i]
    return float(np.linalg.norm(d, axis=-2).mean() * MM)


@dataclass(frozen=True)
class FrameScheme:
    """Key frames (1-based) at which VIM and JPE/APE/FDE are reported."""

    dataset_tag: str
    vim_frames: tuple[int, ...]
    jaf_frames: tuple[int, ...]

    def __post_init__(self):
        for name in ("vim_frames", "jaf_frames"):
            frames = tuple(int(f) for f in getattr(self, name))
            if not frames:
                raise ValidationError(f"{self.dataset_tag}: {name} is empty")
            if any(f < 1 for f in frames) or list(frames) != sorted(set(frames)):
                raise ValidationError(f"{self.dataset_tag}: {name} must be ascending 1-based indices, got {frames}")
            object.__setattr__(self, name, frames)

    def check(self, n_frames: int) -> None:
        last = max(self.vim_frames[-1], self.jaf_frames[-1])
        if last > n_frames:
            raise ContractError(f"scheme {self.dataset_tag!r} needs {last} output frames, sequences have {n_frames}")


SCHEMES: dict[str, FrameScheme] = {
    "3dpw": FrameScheme("3dpw", (2, 4, 8, 10, 14), (7, 14)),
    "cmu-2s": FrameScheme("cmu-2s", (2, 6, 11, 21, 30), (10, 20, 30)),
    "cmu-1s": FrameScheme("cmu-1s", (2, 4, 8, 10, 15), (3, 9, 15)),
}


def scheme(tag: str) -> FrameScheme:
    try:
        return SCHEMES[tag]
    except KeyError:
        raise ValidationError(f"unknown frame scheme {tag!r}; choose from {sorted(SCHEMES)}") from None


@dataclass
class MetricReport:
    """Per-frame values and averages, in millimetres.

    ``frames[metric]`` maps a 1-based frame to its value; MPJPE is reported
    over the whole horizon and has no per-frame entries.
    """

    frames: dict[str, dict[int, float]]
    averages: dict[str, float]
    config: dict = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str, float]]:
        out = []
        for m in METRICS:
            for f, v in self.frames.get(m, {}).items():
                out.append((m, str(f), v))
            out.append((m, "avg", self.averages[m]))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "frame", "value_mm"])
        for m, f, v in self.rows():
            w.writerow([m, f, repr(v)])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "frames": {m: {str(f): v for f, v in fr.items()} for m, fr in self.frames.items()},
            "averages": self.averages,
            "config": self.config,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def write(self, out_dir, stem: str = "metrics") -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        c, j = out_dir / f"{stem}.csv", out_dir / f"{stem}.json"
        c.write_text(self.to_csv())
        j.write_text(self.to_json() + "\n")
        return c, j


def _scene_values(pred, gt, sch: FrameScheme, hip_index: int) -> dict[str, dict]:
    vals = {"mpjpe": {"all": mpjpe(pred, gt)}}
    vals["vim"] = {t: vim_at(pred, gt, t) for t in sch.vim_frames}
    vals["jpe"] = {t: jpe_at(pred, gt, t) for t in sch.jaf_frames}
    vals["ape"] = {t: ape_at(pred, gt, t, hip_index) for t in sch.jaf_frames}
    vals["fde"] = {t: fde_at(pred, gt, t, hip_index) for t in sch.jaf_frames}
    return vals


def evaluate(preds: Sequence, gts: Sequence, sch: FrameScheme | str, hip_index: int = 0,
             config: dict | None = None) -> MetricReport:
    """Score paired sequences; each entry is aggregated as the mean of per-scene values."""
    sch = scheme(sch) if isinstance(sch, str) else sch
    if len(preds) == 0:
        raise ContractError("cannot evaluate an empty scene set")
    if len(preds) != len(gts):
        raise ContractError(f"{len(preds)} predictions for {len(gts)} ground-truth scenes")
    per_scene = []
    for p, g in zip(preds, gts):
        sch.check(np.shape(g)[-1])
        per_scene.append(_scene_values(p, g, sch, hip_index))

    frames: dict[str, dict[int, float]] = {}
    averages: dict[str, float] = {}
    for m in METRICS:
        keys = list(per_scene[0][m])
        mean = {k: float(np.mean([s[m][k] for s in per_scene])) for k in keys}
        if m == "mpjpe":
            frames[m] = {}
            averages[m] = mean["all"]
        else:
            frames[m] = mean
            averages[m] = float(np.mean(list(mean.values())))
    cfg = {"scheme": sch.dataset_tag, "hip_index": hip_index, "scenes": len(preds)}
    cfg.update(config or {})
    return MetricReport(frames, averages, cfg)
