"""The EMPMP network: joint embedding, stacked ESTFL stages, prediction head.

Feature maps carry a leading batch axis inside the network:

* local features ``(B, C, P, T)``
* global features ``(B, C, P*T)`` with person as the outer index
* distance matrix ``(B, P, P, T)``

Parameter enumeration order (used for counting and checkpoints):
``embed`` -> ``stage0`` ... ``stage{K-1}`` -> ``head``. Inside a stage:
local blocks, global blocks (each optionally followed by its spatial block),
then ``scale``, ``shift``, ``refine_norm``, ``distance``, ``fuse_norm``,
``translate``, ``global_norm``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterator

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError, ValidationError
from .tensor import Tensor
from .transforms import DctBasis, dct_forward, dct_inverse, hip_track, pips_sort

NORM_LAYOUTS = ("slice", "channel", "temporal")
INIT_SCHEMES = ("hold", "uniform")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyper-parameters.

    ``norm_layout`` selects how every layer normalization is parameterized:

    ``"slice"``
        statistics over each sample's whole feature map (per person for local
        features); affine per channel for local features and per person-frame
        position for global features.
    ``"channel"``
        statistics and affine over the channel axis only.
    ``"temporal"``
        statistics along the axis each linear map acts on (frames for local,
        person-frames for global features); affine as in ``"slice"``.

    ``init`` is ``"hold"`` (start as a last-pose-repeating forecaster, see
    :meth:`EmpmpModel._hold_last_init`) or ``"uniform"`` (plain uniform
    weights, unit gains).
    """

    J: int
    P: int
    T: int
    T_out: int
    C: int = 45
    K: int = 4
    N: int = 16
    M: int = 1
    alpha: float = 0.2
    hip_index: int = 0
    norm_eps: float = 1e-5
    norm_layout: str = "slice"
    spatial_update: bool = False
    init: str = "hold"
    seed: int = 0

    def __post_init__(self):
        for name in ("J", "P", "T", "T_out", "C"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        # K = 0 leaves embedding + head, handy for accounting checks
        for name in ("K", "N", "M"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not self.norm_eps > 0:
            raise ConfigError(f"norm_eps must be positive, got {self.norm_eps}")
        if not 0 <= self.hip_index < self.J:
            raise ConfigError(f"hip_index {self.hip_index} outside [0, {self.J})")
        if self.init not in INIT_SCHEMES:
            raise ConfigError(f"init must be one of {INIT_SCHEMES}, got {self.init!r}")
        if self.norm_layout not in NORM_LAYOUTS:
            raise ConfigError(f"norm_layout must be one of {NORM_LAYOUTS}, got {self.norm_layout!r}")

    @property
    def PT(self) -> int:
        return self.P * self.T

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


PRESETS: dict[str, ModelConfig] = {
    "3dpw": ModelConfig(J=13, P=2, T=16, T_out=14, C=39),
    "cmu-2s": ModelConfig(J=15, P=3, T=30, T_out=30, C=45),
    "cmu-1s": ModelConfig(J=15, P=3, T=15, T_out=15, C=45),
}


def preset(name: str, **overrides) -> ModelConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return cfg.with_(**overrides) if overrides else cfg


# parameter containers -----------------------------------------------------

@dataclass
class Affine:
    weight: Tensor
    bias: Tensor


@dataclass
class Norm:
    gain: Tensor
    bias: Tensor


@dataclass
class Block:
    """A residual ``x + norm(linear(x))`` unit."""

    linear: Affine
    norm: Norm


@dataclass
class Stage:
    local: list[Block]
    global_: list[Block]
    scale: Affine
    shift: Affine
    refine_norm: Norm
    distance: Affine
    fuse_norm: Norm
    translate: Affine
    global_norm: Norm
    local_spatial: list[Block] = field(default_factory=list)
    global_spatial: list[Block] = field(default_factory=list)


class _Init:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def affine(self, name: str, n_in: int, n_out: int, bound: float | None = None) -> Affine:
        bound = 1.0 / math.sqrt(n_in) if bound is None else bound
        w = self.rng.uniform(-bound, bound, size=(n_in, n_out))
        return Affine(Tensor(w, True, f"{name}.weight"), Tensor(np.zeros(n_out), True, f"{name}.bias"))

    @staticmethod
    def norm(name: str, n: int) -> Norm:
        return Norm(Tensor(np.ones(n), True, f"{name}.gain"), Tensor(np.zeros(n), True, f"{name}.bias"))


class EmpmpModel:
    """Full parameter set for one :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig):
        self.config = c = config
        init = _Init(c.seed)
        local_n, global_n = _norm_sizes(c)
        self.embed = init.affine("embed", 3 * c.J, c.C)
        self.stages: list[Stage] = []
        for k in range(c.K):
            p = f"stage{k}"
            local, local_sp, glob, glob_sp = [], [], [], []
            for i in range(c.N):
                local.append(Block(init.affine(f"{p}.local{i}", c.T, c.T),
                                   init.norm(f"{p}.local{i}.norm", local_n)))
                if c.spatial_update:
                    local_sp.append(Block(init.affine(f"{p}.local{i}.spatial", c.C, c.C),
                                          init.norm(f"{p}.local{i}.spatial.norm", local_n)))
            for j in range(c.M):
                glob.append(Block(init.affine(f"{p}.global{j}", c.PT, c.PT),
                                  init.norm(f"{p}.global{j}.norm", global_n)))
                if c.spatial_update:
                    glob_sp.append(Block(init.affine(f"{p}.global{j}.spatial", c.C, c.C),
                                         init.norm(f"{p}.global{j}.spatial.norm", global_n)))
            small = 1e-2 / math.sqrt(c.PT)
            self.stages.append(Stage(
                local=local,
                global_=glob,
                scale=init.affine(f"{p}.scale", c.PT, c.T, bound=small),
                shift=init.affine(f"{p}.shift", c.PT, c.T),
                refine_norm=init.norm(f"{p}.refine_norm", local_n),
                distance=init.affine(f"{p}.distance", c.P, c.C),
                fuse_norm=init.norm(f"{p}.fuse_norm", local_n),
                translate=init.affine(f"{p}.translate", c.PT, c.PT),
                global_norm=init.norm(f"{p}.global_norm", global_n),
                local_spatial=local_sp,
                global_spatial=glob_sp,
            ))
        self.head_temporal = init.affine("head.temporal", c.T, c.T_out)
        self.head_channel = init.affine("head.channel", c.C, 3 * c.J)
        self.basis_in = DctBasis.build(c.T)
        self.basis_out = DctBasis.build(c.T_out)
        if c.init == "hold":
            self._hold_last_init()

    def _hold_last_init(self) -> None:
        """Start as the "repeat the last observed pose" forecaster.

        The embedding becomes a random (semi-)orthogonal map and the channel
        head its transpose, every residual branch starts with zero norm gain,
        so each stage scales features by exactly ``1 + alpha``, and the
        temporal head reads off the last observed frame. Linear weights inside
        the branches keep their uniform draw, so gradients reach them as soon
        as the gains move.
        """
        c = self.config
        rng = np.random.default_rng([c.seed, 1])
        q, _ = np.linalg.qr(rng.normal(size=(max(3 * c.J, c.C), min(3 * c.J, c.C))))
        w0 = q if 3 * c.J >= c.C else q.T  # (3J, C)
        self.embed.weight.data[...] = w0
        self.head_channel.weight.data[...] = w0.T / (1.0 + c.alpha) ** c.K
        wt = np.zeros((c.T, c.T_out))
        wt[:, 0] = math.sqrt(c.T_out) * self.basis_in.matrix[:, c.T - 1]
        self.head_temporal.weight.data[...] = wt
        for st in self.stages:
            blocks = st.local + st.global_ + st.local_spatial + st.global_spatial
            for n in [b.norm for b in blocks] + [st.fuse_norm, st.global_norm]:
                n.gain.data[...] = 0.0

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        def affine(a):
            yield a.weight.name, a.weight
            yield a.bias.name, a.bias

        def norm(n):
            yield n.gain.name, n.gain
            yield n.bias.name, n.bias

        def block(b):
            yield from affine(b.linear)
            yield from norm(b.norm)

        yield from affine(self.embed)
        for st in self.stages:
            for i, b in enumerate(st.local):
                yield from block(b)
                if st.local_spatial:
                    yield from block(st.local_spatial[i])
            for j, b in enumerate(st.global_):
                yield from block(b)
                if st.global_spatial:
                    yield from block(st.global_spatial[j])
            yield from affine(st.scale)
            yield from affine(st.shift)
            yield from norm(st.refine_norm)
            yield from affine(st.distance)
            yield from norm(st.fuse_norm)
            yield from affine(st.translate)
            yield from norm(st.global_norm)
        yield from affine(self.head_temporal)
        yield from affine(self.head_channel)

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise DimensionError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for name, t in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise DimensionError(f"{name}: expected shape {t.shape}, got {value.shape}")
            t.data[...] = value

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def copy(self) -> "EmpmpModel":
        other = EmpmpModel(self.config)
        other.load_state_dict(self.state_dict())
        return other

    def __repr__(self) -> str:
        return f"EmpmpModel({self.config}, params={count_params(self)})"


def _norm_sizes(c: ModelConfig) -> tuple[int, int]:
    if c.norm_layout in ("slice", "temporal"):
        return c.C, c.PT
    return c.C, c.C


def _local_norm(x: Tensor, n: Norm, c: ModelConfig) -> Tensor:
    # x: (B, C, P, T)
    stats = {"slice": (1, 3), "channel": (1,), "temporal": (3,)}[c.norm_layout]
    return tn.layer_norm(x, 1, n.gain, n.bias, c.norm_eps, stats_axes=stats)


def _global_norm(x: Tensor, n: Norm, c: ModelConfig) -> Tensor:
    # x: (B, C, PT)
    if c.norm_layout == "slice":
        return tn.layer_norm(x, 2, n.gain, n.bias, c.norm_eps, stats_axes=(1, 2))
    if c.norm_layout == "temporal":
        return tn.layer_norm(x, 2, n.gain, n.bias, c.norm_eps)
    return tn.layer_norm(x, 1, n.gain, n.bias, c.norm_eps)


def _block(x: Tensor, b: Block, axis: int, norm_fn, c: ModelConfig, label: str) -> Tensor:
    h = tn.linear_along_axis(x, axis, b.linear.weight, b.linear.bias, label=label)
    return tn.add(x, norm_fn(h, b.norm, c))


# network pieces -------------------------------------------------------------

def _batched(x, ndim: int) -> tuple[Tensor, bool]:
    t = tn.as_tensor(x)
    if t.ndim == ndim - 1:
        return tn.expand_dims(t, 0), True
    if t.ndim != ndim:
        raise DimensionError(f"expected a {ndim - 1}-d or batched {ndim}-d input, got shape {t.shape}")
    return t, False


def _unbatch(t: Tensor, squeeze: bool) -> Tensor:
    return tn.reshape(t, t.shape[1:]) if squeeze else t


def joint_embed(x_dct, model: EmpmpModel) -> Tensor:
    """Project the ``3J`` coordinate axis to ``C`` channels: (…, 3J, P, T) -> (…, C, P, T)."""
    c = model.config
    x, sq = _batched(x_dct, 4)
    if x.shape[1:] != (3 * c.J, c.P, c.T):
        raise DimensionError(f"embedding input must be (3J, P, T) = {(3 * c.J, c.P, c.T)}, got {x.shape[1:]}")
    return _unbatch(tn.linear_along_axis(x, 1, model.embed.weight, model.embed.bias, label="embed"), sq)


def me_local_update(z: Tensor, stage: Stage, model: EmpmpModel, n_iters: int | None = None) -> Tensor:
    """Residual T-linear updates shared over persons; (…, C, P, T) in and out."""
    c = model.config
    x, sq = _batched(z, 4)
    n_iters = len(stage.local) if n_iters is None else n_iters
    for i in range(n_iters):
        x = _block(x, stage.local[i], 3, _local_norm, c, "local_temporal")
        if stage.local_spatial:
            x = spatial_update_variant(x, stage.local_spatial[i], model, scope="local")
    return _unbatch(x, sq)


def me_global_update(z: Tensor, stage: Stage, model: EmpmpModel, m_iters: int | None = None) -> Tensor:
    """Merge persons and frames, then residual PT-linear updates: (…, C, P, T) -> (…, C, PT)."""
    c = model.config
    x, sq = _batched(z, 4)
    g = tn.merge_axes(x, 2, 3)
    m_iters = len(stage.global_) if m_iters is None else m_iters
    for j in range(m_iters):
        g = _block(g, stage.global_[j], 2, _global_norm, c, "global_temporal")
        if stage.global_spatial:
            g = spatial_update_variant(g, stage.global_spatial[j], model, scope="global")
    return _unbatch(g, sq)


def spatial_update_variant(z: Tensor, block: Block, model: EmpmpModel, scope: str = "local") -> Tensor:
    """Residual channel-axis update used by the larger pre-training network."""
    c = model.config
    if scope == "local":
        return _block(z, block, 1, _local_norm, c, "local_spatial")
    if scope == "global":
        return _block(z, block, 1, _global_norm, c, "global_spatial")
    raise ConfigError(f"scope must be 'local' or 'global', got {scope!r}")


def distance_matrix(x_sorted: np.ndarray, hip_index: int) -> np.ndarray:
    """Hip-to-hip distances per frame: (…, 3J, P, T) -> (…, P, P, T)."""
    hips = hip_track(x_sorted, hip_index)
    d = hips[..., :, :, None, :] - hips[..., :, None, :, :]
    return np.sqrt((d * d).sum(axis=-4))


def ci_block(z_l: Tensor, z_g: Tensor, dist, stage: Stage, model: EmpmpModel,
             alpha: float | None = None) -> tuple[Tensor, Tensor]:
    """Cross-level interaction; returns the fused local map and the refined global map."""
    c = model.config
    alpha = c.alpha if alpha is None else alpha
    zl, sq = _batched(z_l, 4)
    zg, _ = _batched(z_g, 3)
    d, _ = _batched(dist, 4)
    if zg.shape[1:] != (c.C, c.PT) or zl.shape[1:] != (c.C, c.P, c.T) or d.shape[1:] != (c.P, c.P, c.T):
        raise DimensionError(f"ci_block shapes {zl.shape}, {zg.shape}, {d.shape} do not match config")

    s = tn.linear_along_axis(zg, 2, stage.scale.weight, stage.scale.bias, label="scale_shift")
    h = tn.linear_along_axis(zg, 2, stage.shift.weight, stage.shift.bias, label="scale_shift")
    modulated = tn.add(tn.hadamard(zl, tn.add_scalar(s, 1.0), axis=2), tn.expand_dims(h, 2))
    zl_ref = _local_norm(modulated, stage.refine_norm, c)

    # contracting the first person axis of (B, P, P, T) leaves (B, C, P, T)
    tau = tn.linear_along_axis(d, 1, stage.distance.weight, stage.distance.bias, label="distance_embed")
    zl_star = tn.add(zl, _local_norm(tn.add(zl_ref, tau), stage.fuse_norm, c))

    z_l2g = tn.merge_axes(zl, 2, 3)
    g = tn.linear_along_axis(z_l2g, 2, stage.translate.weight, stage.translate.bias, label="global_translation")
    zg_star = tn.add(zg, _global_norm(tn.add(zg, g), stage.global_norm, c))

    z_star = tn.add(zl_star, tn.scale(tn.split_axes(zg_star, 2, (c.P, c.T)), alpha))
    return _unbatch(z_star, sq), _unbatch(zg_star, sq)


def estfl_stage(z: Tensor, dist, stage: Stage, model: EmpmpModel) -> Tensor:
    z_l = me_local_update(z, stage, model)
    z_g = me_global_update(z, stage, model)
    z_star, _ = ci_block(z_l, z_g, dist, stage, model)
    return z_star


def forward_sorted(x_sorted, model: EmpmpModel) -> Tensor:
    """Network on already person-sorted raw coordinates: (B, 3J, P, T) -> (B, 3J, P, T')."""
    c = model.config
    raw = np.asarray(x_sorted.data if isinstance(x_sorted, Tensor) else x_sorted, dtype=np.float64)
    if raw.ndim != 4 or raw.shape[1:] != (3 * c.J, c.P, c.T):
        raise DimensionError(f"expected (B, {3 * c.J}, {c.P}, {c.T}) input, got {raw.shape}")
    dist = Tensor(distance_matrix(raw, c.hip_index))
    x = dct_forward(Tensor(raw), model.basis_in, axis=3)
    z = joint_embed(x, model)
    for stage in model.stages:
        z = estfl_stage(z, dist, stage, model)
    z = tn.linear_along_axis(z, 3, model.head_temporal.weight, model.head_temporal.bias, label="head_temporal")
    z = tn.linear_along_axis(z, 1, model.head_channel.weight, model.head_channel.bias, label="head_channel")
    return dct_inverse(z, model.basis_out, axis=3)


def forward(x: np.ndarray, model: EmpmpModel) -> np.ndarray:
    """Full pipeline on one scene or a batch: sort, predict, restore person order."""
    c = model.config
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    batch = x[None] if single else x
    if batch.ndim != 4 or batch.shape[1:] != (3 * c.J, c.P, c.T):
        raise DimensionError(f"expected (3J, P, T) = {(3 * c.J, c.P, c.T)} input, got {x.shape}")
    if not np.all(np.isfinite(batch)):
        raise ValidationError("input contains non-finite values")
    sorted_x, perms = [], []
    for sample in batch:
        s, perm = pips_sort(sample, c.hip_index)
        sorted_x.append(s)
        perms.append(perm)
    y = forward_sorted(np.stack(sorted_x), model).data
    out = np.stack([perm.invert(yi) for perm, yi in zip(perms, y)])
    return out[0] if single else out


# accounting ---------------------------------------------------------------

def count_params(model: EmpmpModel) -> int:
    return sum(t.size for t in model.parameters())


MAC_CLASSES = (
    "dct", "embed", "local_temporal", "local_spatial", "global_temporal", "global_spatial",
    "scale_shift", "distance_embed", "global_translation", "head_temporal", "head_channel", "idct",
)


def flop_breakdown(model: EmpmpModel) -> dict[str, int]:
    """Per-sample multiply-accumulates of every linear map, measured on a forward pass.

    Elementwise work (norms, products, residual adds) and the distance matrix
    are not counted.
    """
    c = model.config
    probe = np.zeros((1, 3 * c.J, c.P, c.T))
    with tn.MacCounter() as counter:
        forward_sorted(probe, model)
    return {k: counter.counts.get(k, 0) for k in MAC_CLASSES}


def count_flops(model: EmpmpModel, batch: int = 1) -> int:
    """Multiply-accumulate count of one forward pass over ``batch`` scenes."""
    if int(batch) < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    return int(batch) * sum(flop_breakdown(model).values())
