"""Scenes on disk, synthetic multi-person scenes, windowing and augmentation.

Scene coordinates are stored as ``(P, F, J, 3)`` in meters; network inputs use
the ``(3J, P, T)`` motion layout (see :func:`coords_to_motion`).

File format
-----------
Text scene (any extension except ``.bin``)::

    EMPMP-SCENE v1 P=<p> F=<f> J=<j> FPS=<fps> TAG=<tag>
    <p> <f> <j> <x> <y> <z>        # F*P*J lines, 0-based indices

Binary scene (``.bin``): the same header line, then ``P*F*J*3`` little-endian
float32 values in ``(p, f, j, xyz)`` order.

Manifest: one scene path per line, relative to the manifest's directory;
blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, ParseError, ValidationError


@dataclass(frozen=True)
class Skeleton:
    name: str
    J: int
    hip_index: int
    up_axis: int = 2


SKELETONS: dict[str, Skeleton] = {
    "walker15": Skeleton("walker15", 15, 0),
    "cmu15": Skeleton("cmu15", 15, 0),
    "somof13": Skeleton("somof13", 13, 0),
}


def skeleton_for(tag: str, J: int) -> Skeleton:
    sk = SKELETONS.get(tag)
    if sk is None:
        return Skeleton(tag, J, 0)
    if sk.J != J:
        raise ValidationError(f"skeleton {tag!r} has {sk.J} joints, scene has {J}")
    return sk


@dataclass
class Scene:
    coords: np.ndarray
    fps: float = 15.0
    tag: str = "walker15"
    name: str = ""

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        label = self.name or "<unnamed>"
        if self.coords.ndim != 4 or self.coords.shape[-1] != 3 or min(self.coords.shape) < 1:
            raise ValidationError(f"scene {label}: coords must be (P, F, J, 3), got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ValidationError(f"scene {label}: coordinates contain NaN or Inf")
        if not self.fps > 0:
            raise ValidationError(f"scene {label}: fps must be positive, got {self.fps}")
        if not re.fullmatch(r"\S+", self.tag):
            raise ValidationError(f"scene {label}: tag must be a non-empty token")

    @property
    def P(self) -> int:
        return self.coords.shape[0]

    @property
    def frames(self) -> int:
        return self.coords.shape[1]

    @property
    def J(self) -> int:
        return self.coords.shape[2]

    @property
    def skeleton(self) -> Skeleton:
        return skeleton_for(self.tag, self.J)

    def motion(self) -> np.ndarray:
        return coords_to_motion(self.coords)


def coords_to_motion(coords: np.ndarray) -> np.ndarray:
    """(P, F, J, 3) -> (3J, P, F)."""
    P, F, J, _ = coords.shape
    return np.ascontiguousarray(coords.transpose(2, 3, 0, 1).reshape(3 * J, P, F))


def motion_to_coords(x: np.ndarray) -> np.ndarray:
    """(3J, P, F) -> (P, F, J, 3)."""
    threeJ, P, F = x.shape
    return np.ascontiguousarray(x.reshape(threeJ // 3, 3, P, F).transpose(2, 3, 0, 1))


# file io --------------------------------------------------------------------

_HEADER = re.compile(r"EMPMP-SCENE v1 P=(\d+) F=(\d+) J=(\d+) FPS=(\S+) TAG=(\S+)")


def _header(scene: Scene) -> str:
    return f"EMPMP-SCENE v1 P={scene.P} F={scene.frames} J={scene.J} FPS={scene.fps!r} TAG={scene.tag}"


def _parse_header(line: str, path) -> tuple[int, int, int, float, str]:
    m = _HEADER.fullmatch(line.strip())
    if not m:
        raise ParseError(f"{path}:1: bad scene header {line.strip()[:80]!r}")
    P, F, J = (int(m.group(i)) for i in (1, 2, 3))
    try:
        fps = float(m.group(4))
    except ValueError:
        raise ParseError(f"{path}:1: bad FPS value {m.group(4)!r}") from None
    return P, F, J, fps, m.group(5)


def save_scene(scene: Scene, path, binary: bool | None = None) -> None:
    path = Path(path)
    binary = path.suffix == ".bin" if binary is None else binary
    if binary:
        with open(path, "wb") as fh:
            fh.write((_header(scene) + "\n").encode("ascii"))
            fh.write(scene.coords.astype("<f4").tobytes())
        return
    lines = [_header(scene)]
    c = scene.coords.tolist()  # python floats: repr round-trips exactly
    for p in range(scene.P):
        for f in range(scene.frames):
            for j in range(scene.J):
                x, y, z = c[p][f][j]
                lines.append(f"{p} {f} {j} {x!r} {y!r} {z!r}")
    path.write_text("\n".join(lines) + "\n")


def load_scene(path, name: str | None = None) -> Scene:
    path = Path(path)
    name = name or path.stem
    if path.suffix == ".bin":
        raw = path.read_bytes()
        nl = raw.find(b"\n")
        if nl < 0:
            raise ParseError(f"{path}:1: missing header line")
        P, F, J, fps, tag = _parse_header(raw[:nl].decode("ascii", "replace"), path)
        payload = raw[nl + 1:]
        expected = P * F * J * 3 * 4
        if len(payload) != expected:
            raise ParseError(f"{path}: byte offset {nl + 1}: payload has {len(payload)} bytes, expected {expected}")
        coords = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(P, F, J, 3)
        return Scene(coords, fps, tag, name)

    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}:1: empty scene file")
    P, F, J, fps, tag = _parse_header(lines[0], path)
    coords = np.full((P, F, J, 3), np.nan)
    seen = np.zeros((P, F, J), dtype=bool)
    body = [(i, ln) for i, ln in enumerate(lines[1:], start=2) if ln.strip()]
    if len(body) != P * F * J:
        raise ParseError(f"{path}: expected {P * F * J} joint lines, found {len(body)}")
    for lineno, ln in body:
        parts = ln.split()
        if len(parts) != 6:
            raise ParseError(f"{path}:{lineno}: expected 'p f j x y z', got {ln[:80]!r}")
        try:
            p, f, j = int(parts[0]), int(parts[1]), int(parts[2])
            xyz = [float(v) for v in parts[3:]]
        except ValueError:
            raise ParseError(f"{path}:{lineno}: malformed number in {ln[:80]!r}") from None
        if not (0 <= p < P and 0 <= f < F and 0 <= j < J):
            raise ParseError(f"{path}:{lineno}: index ({p}, {f}, {j}) outside header bounds")
        if seen[p, f, j]:
            raise ParseError(f"{path}:{lineno}: duplicate entry for ({p}, {f}, {j})")
        seen[p, f, j] = True
        coords[p, f, j] = xyz
    return Scene(coords, fps, tag, name)


def load_scenes(path) -> list[Scene]:
    """Read a manifest (or a single scene file) into a list of scenes."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such manifest: {path}")
    with open(path, "rb") as fh:
        head = fh.read(11)
    if head == b"EMPMP-SCENE":
        return [load_scene(path)]
    scenes = []
    for lineno, ln in enumerate(path.read_text().splitlines(), start=1):
        entry = ln.split("#", 1)[0].strip()
        if not entry:
            continue
        scene_path = Path(entry)
        if not scene_path.is_absolute():
            scene_path = path.parent / scene_path
        if not scene_path.exists():
            raise ParseError(f"{path}:{lineno}: scene file {entry!r} not found")
        scenes.append(load_scene(scene_path))
    return scenes


def save_scenes(scenes: Sequence[Scene], out_dir, manifest: str = "manifest.txt",
                binary: bool = False) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, scene in enumerate(scenes):
        fname = f"{scene.name or f'scene_{i:05d}'}.{'bin' if binary else 'txt'}"
        save_scene(scene, out_dir / fname, binary=binary)
        entries.append(fname)
    mpath = out_dir / manifest
    mpath.write_text("".join(e + "\n" for e in entries))
    return mpath


# synthesis ------------------------------------------------------------------

def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    return splitmix64((int(master) & 0xFFFFFFFFFFFFFFFF) ^ splitmix64(index))


# walker15 layout: pelvis, l_hip, l_knee, l_ankle, r_hip, r_knee, r_ankle,
# spine, neck, l_shoulder, l_elbow, l_wrist, r_shoulder, r_elbow, r_wrist
_THIGH, _SHIN, _UPPER_ARM, _FOREARM = 0.45, 0.43, 0.30, 0.27


def walker_clip(rng: np.random.Generator, frames: int = 120, fps: float = 30.0) -> np.ndarray:
    """One procedurally generated person walking (or idling): (F, 15, 3), z up."""
    t = np.arange(frames) / fps
    speed = rng.uniform(0.0, 1.4)
    cadence = rng.uniform(0.7, 1.1)  # strides per second
    swing = rng.uniform(0.25, 0.5) * (0.3 + 0.7 * min(speed / 1.0, 1.0))
    turn = rng.uniform(-0.3, 0.3)  # rad/s
    phase = 2 * np.pi * cadence * t + rng.uniform(0, 2 * np.pi)
    heading = rng.uniform(0, 2 * np.pi) + turn * t

    fwd = np.stack([np.cos(heading), np.sin(heading), np.zeros_like(t)], -1)
    left = np.stack([-np.sin(heading), np.cos(heading), np.zeros_like(t)], -1)
    up = np.array([0.0, 0.0, 1.0])
    step = speed / fps
    pelvis = np.cumsum(fwd * step, axis=0) - fwd[0] * step
    pelvis = pelvis + up * (0.95 + 0.02 * np.sin(2 * phase))[:, None]

    out = np.zeros((frames, 15, 3))
    out[:, 0] = pelvis

    def limb(root, angle, bend, upper, lower):
        a = angle[:, None]
        knee = root + upper * (np.sin(a) * fwd - np.cos(a) * up)
        b = (angle - bend)[:, None]
        foot = knee + lower * (np.sin(b) * fwd - np.cos(b) * up)
        return knee, foot

    for side, sgn, base in ((1, 1.0, 1), (-1, -1.0, 4)):
        hip = pelvis + 0.1 * side * left
        angle = sgn * swing * np.sin(phase)
        bend = 0.5 * swing * (1 + np.sin(phase + sgn * np.pi / 2))
        knee, ankle = limb(hip, angle, bend, _THIGH, _SHIN)
        out[:, base], out[:, base + 1], out[:, base + 2] = hip, knee, ankle
    out[:, 7] = pelvis + 0.25 * up
    out[:, 8] = pelvis + 0.55 * up
    for side, sgn, base in ((1, -1.0, 9), (-1, 1.0, 12)):
        shoulder = out[:, 8] + 0.18 * side * left - 0.03 * up
        angle = sgn * 0.8 * swing * np.sin(phase)
        elbow = shoulder + _UPPER_ARM * (np.sin(angle)[:, None] * fwd - np.cos(angle)[:, None] * up)
        fa = (angle + 0.3)[:, None]
        wrist = elbow + _FOREARM * (np.sin(fa) * fwd - np.cos(fa) * up)
        out[:, base], out[:, base + 1], out[:, base + 2] = shoulder, elbow, wrist
    return out


def walker_templates(n: int = 16, seed: int = 0, frames: int = 120, fps: float = 30.0) -> list[Scene]:
    rng = np.random.default_rng(seed)
    return [Scene(walker_clip(rng, frames, fps)[None], fps, "walker15", f"walker_{i:03d}") for i in range(n)]


def _resample(clip: np.ndarray, src_fps: float, dst_fps: float) -> np.ndarray:
    # clip: (F, J, 3); linear interpolation in time
    F = clip.shape[0]
    n_out = int(math.floor((F - 1) * dst_fps / src_fps + 1e-9)) + 1
    pos = np.arange(n_out) * (src_fps / dst_fps)
    lo = np.minimum(np.floor(pos).astype(int), F - 1)
    hi = np.minimum(lo + 1, F - 1)
    w = (pos - lo)[:, None, None]
    return clip[lo] * (1 - w) + clip[hi] * w


def _rot_z(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def synth_scenes(n: int, seed: int, templates: Sequence[Scene], persons: int = 3, frames: int = 60,
                 fps: float = 15.0, radius: float = 2.0) -> list[Scene]:
    """Mix single-person template clips into ``n`` multi-person scenes.

    Each person is a random template, re-centred at its first-frame hip,
    rotated about the vertical axis, offset uniformly within a disc, resampled
    to ``fps`` and cropped to ``frames`` frames.
    """
    if n < 0:
        raise ContractError(f"scene count must be >= 0, got {n}")
    if n == 0:
        return []
    if not templates:
        raise ValidationError("need at least one template clip")
    resampled = []
    for tmpl in templates:
        if tmpl.P != 1:
            raise ValidationError(f"template {tmpl.name}: expected a single-person clip, got P={tmpl.P}")
        clip = _resample(tmpl.coords[0], tmpl.fps, fps)
        if tmpl.frames < frames or clip.shape[0] < frames:
            raise ValidationError(f"template {tmpl.name}: {tmpl.frames} frames at {tmpl.fps} FPS "
                                  f"is too short for {frames} frames at {fps} FPS")
        resampled.append((clip, tmpl.skeleton.hip_index))
    J = resampled[0][0].shape[1]
    if any(c.shape[1] != J for c, _ in resampled):
        raise ValidationError("templates disagree on joint count")

    out = []
    for i in range(n):
        rng = np.random.default_rng(derive_seed(seed, i))
        coords = np.empty((persons, frames, J, 3))
        for p in range(persons):
            clip, hip = resampled[rng.integers(len(resampled))]
            start = rng.integers(clip.shape[0] - frames + 1)
            seg = clip[start:start + frames].copy()
            seg[..., :2] -= seg[0, hip, :2]
            r = radius * math.sqrt(rng.uniform())
            phi = rng.uniform(0, 2 * math.pi)
            seg = seg @ _rot_z(rng.uniform(0, 2 * math.pi)).T
            seg[..., 0] += r * math.cos(phi)
            seg[..., 1] += r * math.sin(phi)
            coords[p] = seg
        out.append(Scene(coords, fps, templates[0].tag, f"scene_{i:05d}"))
    return out


# windows and augmentation -----------------------------------------------------

@dataclass
class TrainWindow:
    input: np.ndarray   # (3J, P, T)
    target: np.ndarray  # (3J, P, T')
    scene: str = ""
    start: int = 0


def window_split(scene: Scene, T: int, T_out: int, stride: int = 1,
                 rng: np.random.Generator | None = None) -> list[TrainWindow]:
    """Contiguous (T + T')-frame windows; with ``rng`` one window at a random start."""
    span = T + T_out
    if T < 1 or T_out < 1 or span > scene.frames:
        raise ContractError(f"window of {T}+{T_out} frames does not fit a {scene.frames}-frame scene")
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if rng is not None:
        starts = [int(rng.integers(scene.frames - span + 1))]
    else:
        starts = range(0, scene.frames - span + 1, stride)
    x = scene.motion()
    return [TrainWindow(x[:, :, s:s + T].copy(), x[:, :, s + T:s + span].copy(), scene.name, s)
            for s in starts]


def rotate_vertical(x: np.ndarray, theta: float, up_axis: int = 2) -> np.ndarray:
    """Rotate every joint of a (3J, P, T) array about the vertical axis."""
    a, b = [i for i in range(3) if i != up_axis]
    c, s = math.cos(theta), math.sin(theta)
    out = np.array(x, dtype=np.float64, copy=True)
    v = out.reshape(-1, 3, *out.shape[1:])
    va, vb = v[:, a].copy(), v[:, b].copy()
    v[:, a] = c * va - s * vb
    v[:, b] = s * va + c * vb
    return out


def augment(window: TrainWindow, rng: np.random.Generator, up_axis: int = 2,
            theta: float | None = None, order: Sequence[int] | None = None) -> TrainWindow:
    """Shared vertical-axis rotation, then a shared random person permutation."""
    theta = rng.uniform(0.0, 2.0 * math.pi) if theta is None else theta
    P = window.input.shape[1]
    order = rng.permutation(P) if order is None else np.asarray(order)
    x = rotate_vertical(window.input, theta, up_axis)[:, order]
    y = rotate_vertical(window.target, theta, up_axis)[:, order]
    return TrainWindow(x, y, window.scene, window.start)
