"""Denoising network: dual temporal/channel branches of Mamba encoders and
adaLN-conditioned fusion/permutation blocks, merged by output projections.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterator, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, as_node
from .ssm import LagSpec, SelectiveSSM, default_period, permutation_matrix

LN_EPS = 1e-6


@dataclass
class ModelConfig:
    seq_len: int
    channels: int
    hidden_dim: int = 128
    state_dim: int = 16
    num_encoders: int = 1
    num_difm: int = 3
    num_dipm: int = 3
    dilation_factors: tuple[int, ...] = (1, 2, 3)
    lag_period: int | None = None
    lag_weight_init: float = 0.1
    use_lag_fusion: bool = True
    use_permutation: bool = True
    channel_order: tuple[int, ...] | None = None
    time_embed_dim: int = 128
    mlp_ratio: int = 4
    diffusion_steps: int = 500
    seed: int = 0

    def __post_init__(self):
        self.dilation_factors = tuple(int(r) for r in self.dilation_factors)
        if self.channel_order is not None:
            self.channel_order = tuple(int(c) for c in self.channel_order)
        for name in ("seq_len", "channels", "hidden_dim", "state_dim", "num_encoders",
                     "num_difm", "num_dipm", "time_embed_dim", "mlp_ratio", "diffusion_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.hidden_dim % 2 or self.time_embed_dim % 2:
            raise ValueError("hidden_dim and time_embed_dim must be even")
        if self.lag_period is None:
            self.lag_period = default_period(self.seq_len)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilation_factors"] = list(self.dilation_factors)
        if self.channel_order is not None:
            d["channel_order"] = list(self.channel_order)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class Module:
    """Parameter container; parameters are discovered from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, val in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(val, Parameter):
                yield path, val
            elif isinstance(val, (Module, SelectiveSSM)):
                yield from _walk(val, path + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Module, SelectiveSSM)):
                        yield from _walk(item, f"{path}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]


def _walk(obj, prefix: str):
    if isinstance(obj, Module):
        yield from obj.named_parameters(prefix)
    else:
        for name, val in vars(obj).items():
            if isinstance(val, Parameter):
                yield f"{prefix}{name}", val


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, zero: bool = False):
        if zero:
            self.weight = Parameter(np.zeros((d_in, d_out)))
            self.bias = Parameter(np.zeros(d_out))
        else:
            bound = 1.0 / np.sqrt(d_in)
            self.weight = Parameter(rng.uniform(-bound, bound, (d_in, d_out)))
            self.bias = Parameter(rng.uniform(-bound, bound, d_out))

    def __call__(self, x) -> Node:
        return ad.add(ad.matmul(x, self.weight), self.bias)


def layer_norm(x) -> Node:
    """Normalise over the last axis, no learned affine."""
    x = as_node(x)
    centred = ad.sub(x, ad.mean(x, axis=-1, keepdims=True))
    var = ad.mean(ad.square(centred), axis=-1, keepdims=True)
    return ad.div(centred, ad.sqrt(ad.add(var, LN_EPS)))


def positional_encoding(L: int, d: int) -> np.ndarray:
    """PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same)."""
    if d % 2:
        raise ValueError(f"positional encoding needs an even width, got {d}")
    pos = np.arange(L, dtype=np.float64)[:, None]
    div = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.zeros((L, d))
    pe[:, 0::2] = np.sin(pos / div)
    pe[:, 1::2] = np.cos(pos / div)
    return pe


def timestep_features(t, dim: int) -> np.ndarray:
    """Sinusoidal features of integer steps; ``[dim]`` for a scalar, ``[B, dim]`` otherwise."""
    t = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[..., None] * freqs
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


class TimestepEmbedder(Module):
    def __init__(self, d: int, feature_dim: int, rng: np.random.Generator):
        self.feature_dim = feature_dim
        self.fc1 = Linear(feature_dim, d, rng)
        self.fc2 = Linear(d, d, rng)

    def __call__(self, t) -> Node:
        return self.fc2(ad.silu(self.fc1(timestep_features(t, self.feature_dim))))


class MambaLayer(Module):
    """Gated selective-SSM mixer.

    ``kind`` picks the scan: ``vanilla``, ``lag`` (lag-state fusion with
    learnable weights) or ``perm`` (fixed channel scan order).
    """

    def __init__(self, d: int, state_dim: int, rng: np.random.Generator, kind: str = "vanilla",
                 lag_offsets: Sequence[int] = (0,), lag_weight_init: float = 0.1,
                 order: Sequence[int] | None = None):
        if kind not in ("vanilla", "lag", "perm"):
            raise ValueError(f"unknown mixer kind {kind!r}")
        self.kind = kind
        self.in_proj = Linear(d, 2 * d, rng)
        self.ssm = SelectiveSSM(d, state_dim, rng)
        self.out_proj = Linear(d, d, rng)
        if kind == "lag":
            init = np.array([1.0] + [lag_weight_init] * (len(lag_offsets) - 1))
            self.lag_weights = Parameter(init)
            self.lag_offsets = list(lag_offsets)
        if kind == "perm":
            self.H = permutation_matrix(order)
            self.order = np.asarray(order)

    def lag_spec(self) -> LagSpec:
        return LagSpec(self.lag_offsets, self.lag_weights)

    def __call__(self, x) -> Node:
        xs, z = ad.split(self.in_proj(x), 2, axis=-1)
        xs = ad.silu(xs)
        if self.kind == "perm":
            permuted = ad.take(xs, self.order, axis=-2)
            y = ad.take(self.ssm.scan(permuted), np.argsort(self.order), axis=-2)
        elif self.kind == "lag":
            y = self.ssm.scan(xs, lag_offsets=self.lag_offsets, lag_weights=self.lag_weights)
        else:
            y = self.ssm.scan(xs)
        return self.out_proj(ad.mul(y, ad.silu(z)))


class BiMamba(Module):
    """Forward scan plus the time-reversed scan of the reversed sequence."""

    def __init__(self, d: int, state_dim: int, rng: np.random.Generator, tied: bool = False):
        self.forward_layer = MambaLayer(d, state_dim, rng)
        self.backward_layer = self.forward_layer if tied else MambaLayer(d, state_dim, rng)

    def named_parameters(self, prefix: str = ""):
        yield from _walk(self.forward_layer, prefix + "forward_layer.")
        if self.backward_layer is not self.forward_layer:
            yield from _walk(self.backward_layer, prefix + "backward_layer.")

    def __call__(self, z) -> Node:
        return bimamba_encode(z, self.forward_layer, self.backward_layer)


def bimamba_encode(z, forward_layer, backward_layer) -> Node:
    z = as_node(z)
    fwd = forward_layer(z)
    bwd = ad.flip(backward_layer(ad.flip(z, -2)), -2)
    return ad.add(fwd, bwd)


class MLP(Module):
    def __init__(self, d: int, ratio: int, rng: np.random.Generator):
        self.fc1 = Linear(d, ratio * d, rng)
        self.fc2 = Linear(ratio * d, d, rng)

    def __call__(self, x) -> Node:
        return self.fc2(ad.gelu(self.fc1(x)))


class AdaLNBlock(Module):
    """DiT-style block with a Mamba mixer in place of attention.

    The conditioning vector is mapped to six chunks (gate_1, shift_1, scale_1,
    gate_2, shift_2, scale_2); the chunk producer starts at zero so every block
    is the identity at initialisation.
    """

    def __init__(self, d: int, mixer: MambaLayer, rng: np.random.Generator, mlp_ratio: int = 4):
        self.mixer = mixer
        self.mlp = MLP(d, mlp_ratio, rng)
        self.ada = Linear(d, 6 * d, rng, zero=True)

    def chunks(self, t_emb) -> list[Node]:
        c = self.ada(ad.silu(t_emb))
        if c.ndim == 2:
            c = ad.reshape(c, (c.shape[0], 1, c.shape[1]))
        return ad.split(c, 6, axis=-1)

    def __call__(self, y, t_emb) -> Node:
        gate1, shift1, scale1, gate2, shift2, scale2 = self.chunks(t_emb)
        y = as_node(y)
        h = ad.add(ad.mul(layer_norm(y), ad.add(scale1, 1.0)), shift1)
        u = ad.add(y, ad.mul(gate1, self.mixer(h)))
        h = ad.add(ad.mul(layer_norm(u), ad.add(scale2, 1.0)), shift2)
        return ad.add(u, ad.mul(gate2, self.mlp(h)))


def decoder_stack(Z, t_emb, blocks: Sequence) -> Node:
    """Y^0 = B_0(Z), Y^1 = B_1(Y^0 + Z), Y^i = B_i(Y^{i-1} + Y^{i-2}); returns sum_i Y^i."""
    if not blocks:
        raise ValueError("decoder stack needs at least one block")
    Z = as_node(Z)
    outs = [blocks[0](Z, t_emb)]
    for i in range(1, len(blocks)):
        prev2 = Z if i == 1 else outs[i - 2]
        outs.append(blocks[i](ad.add(outs[i - 1], prev2), t_emb))
    total = outs[0]
    for y in outs[1:]:
        total = ad.add(total, y)
    return total


class DiMTS(Module):
    """Denoiser mapping (x_t [B, L, C], t) to a prediction of x0 with the same shape."""

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        L, C, d, N = config.seq_len, config.channels, config.hidden_dim, config.state_dim
        self.pe = positional_encoding(L, d)
        self.embed_t = Linear(C, d, rng)
        self.embed_c = Linear(L, d, rng)
        self.encoders_t = [BiMamba(d, N, rng) for _ in range(config.num_encoders)]
        self.encoders_c = [BiMamba(d, N, rng) for _ in range(config.num_encoders)]
        self.time_embed = TimestepEmbedder(d, config.time_embed_dim, rng)
        offsets = self.lag_offsets()
        kind_t = "lag" if config.use_lag_fusion else "vanilla"
        self.difm = [AdaLNBlock(d, MambaLayer(d, N, rng, kind_t, offsets, config.lag_weight_init),
                                rng, config.mlp_ratio) for _ in range(config.num_difm)]
        order = self.channel_order()
        kind_c = "perm" if config.use_permutation else "vanilla"
        self.dipm = [AdaLNBlock(d, MambaLayer(d, N, rng, kind_c, order=order), rng, config.mlp_ratio)
                     for _ in range(config.num_dipm)]
        self.out_t = Linear(d, C, rng)
        self.out_c = Linear(d, L, rng)

    def lag_offsets(self) -> list[int]:
        spec = LagSpec.from_dilations(self.config.dilation_factors, self.config.lag_period)
        return spec.offsets

    def channel_order(self) -> np.ndarray:
        if self.config.channel_order is None:
            return np.arange(self.config.channels)
        return np.asarray(self.config.channel_order)

    def embed(self, x_t, which: str) -> Node:
        """Temporal tokens ``[B, L, d]`` (with PE) or channel tokens ``[B, C, d]``."""
        x = as_node(x_t)
        L, C = self.config.seq_len, self.config.channels
        if x.shape[-2:] != (L, C):
            raise ad.ShapeError(f"expected windows of shape ({L}, {C}), got {x.shape[-2:]}")
        if which == "temporal":
            return ad.add(self.embed_t(x), self.pe)
        if which == "channel":
            return self.embed_c(ad.swapaxes(x, -1, -2))
        raise ValueError(f"unknown branch {which!r}")

    def __call__(self, x_t, t) -> Node:
        x = as_node(x_t)
        single = x.ndim == 2
        if single:
            x = ad.reshape(x, (1,) + x.shape)
        z_t = self.embed(x, "temporal")
        z_c = self.embed(x, "channel")
        for enc in self.encoders_t:
            z_t = enc(z_t)
        for enc in self.encoders_c:
            z_c = enc(z_c)
        t_arr = np.asarray(t)
        t_emb = self.time_embed(t_arr if t_arr.ndim == 0 else t_arr.reshape(-1))
        y_t = decoder_stack(z_t, t_emb, self.difm)
        y_c = decoder_stack(z_c, t_emb, self.dipm)
        out = ad.add(self.out_t(y_t), ad.swapaxes(self.out_c(y_c), -1, -2))
        if single:
            out = ad.reshape(out, out.shape[1:])
        return out

    def predict(self, x_t: np.ndarray, t: int) -> np.ndarray:
        """Forward pass without building a gradient graph (parameters are treated as constants)."""
        return _no_grad_forward(self, x_t, t)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ad.ShapeError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.value = np.array(state[name], dtype=np.float64)


def _no_grad_forward(model: DiMTS, x_t, t) -> np.ndarray:
    params = model.parameters()
    flags = [p.requires_grad for p in params]
    try:
        for p in params:
            p.requires_grad = False
        return model(x_t, t).value
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def dim_ts_forward(model: DiMTS, x_t, t) -> Node:
    return model(x_t, t)
