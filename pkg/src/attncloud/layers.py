"""Differentiable building blocks: FC layers, shared per-point MLPs, the
attention transform, and the FC/folding baseline decoders.

The attention transform turns a latent feature vector into a point cloud in
three steps: a fully connected layer emits ``interim_count`` points in an
``interim_dim``-dimensional interim space; a shared MLP plus softmax builds a
row-stochastic attention map whose rows mix those interim points into
``out_points`` convex combinations; a shared FC maps each mixed point to 3D.
Because every attention row is a convex combination, all outputs live inside
the convex hull of the interim points, which is what pulls each transform's
points into a compact cluster.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor

ATTN_WIDTHS_DEFAULT = (64, 128)


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    """Trainable tensor drawn uniformly from [-s, s], s = 1/sqrt(fan_in)."""
    s = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)


def fc_layer(x, w, b, activation: str = "none") -> Tensor:
    """x @ w + b over the last axis, optionally ReLU-activated."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"fc_layer: input {x.shape} vs weights {tuple(w.shape)}")
    if activation not in ("none", "relu"):
        raise ConfigError(f"unknown activation {activation!r}")
    flat = x.data.ndim != 2
    if flat:
        lead = x.shape[:-1]
        x = T.reshape(x, (-1, x.shape[-1]))
    out = T.affine(x, w, b, relu_after=activation == "relu")
    if flat:
        out = T.reshape(out, (*lead, out.shape[-1]))
    return out


class Linear:
    """One fully connected layer with its own weights and bias."""

    def __init__(self, rng, d_in: int, d_out: int, activation: str = "none"):
        self.w = uniform_init(rng, d_in, (d_in, d_out))
        self.b = uniform_init(rng, d_in, (d_out,))
        self.activation = activation

    def __call__(self, x) -> Tensor:
        return fc_layer(x, self.w, self.b, self.activation)

    def parameters(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}

    @property
    def param_count(self) -> int:
        return self.w.size + self.b.size


class MLP:
    """Stacked FC layers, ReLU between all but the last.

    Applied to [batch, count, d] inputs the same weights act on every point
    independently (a shared per-point MLP); on [batch, d] it is a plain MLP.
    """

    def __init__(self, rng, widths, final_activation: str = "none"):
        widths = list(widths)
        if len(widths) < 2:
            raise ConfigError(f"MLP needs at least two widths, got {widths}")
        self.layers = [
            Linear(rng, a, b, "relu" if i < len(widths) - 2 else final_activation)
            for i, (a, b) in enumerate(zip(widths, widths[1:]))
        ]
        self.widths = widths

    def __call__(self, x) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self) -> dict[str, Tensor]:
        return {f"{i}.{k}": v for i, l in enumerate(self.layers) for k, v in l.parameters().items()}

    @property
    def param_count(self) -> int:
        return sum(l.param_count for l in self.layers)


def shared_mlp(points, mlp: MLP) -> Tensor:
    """Apply one MLP to every point of a [batch, count, d] tensor."""
    if points.shape[-1] != mlp.widths[0]:
        raise ShapeError(f"shared_mlp: points {points.shape} vs first width {mlp.widths[0]}")
    return mlp(points)


@dataclass(frozen=True)
class AttnTransformConfig:
    """Dimensions of one attention transform block.

    latent_dim: input feature size; interim_dim/interim_count: the interim
    point space; out_points: generated cloud size; attn_widths: hidden widths
    of the attention MLP (interim_dim, *attn_widths, out_points).
    """

    latent_dim: int = 128
    interim_dim: int = 32
    interim_count: int = 128
    out_points: int = 2048
    attn_widths: tuple[int, ...] = field(default=ATTN_WIDTHS_DEFAULT)

    def __post_init__(self):
        dims = (self.latent_dim, self.interim_dim, self.interim_count, self.out_points)
        if not all(isinstance(d, int) and d > 0 for d in dims):
            raise ConfigError(f"dimensions must be positive integers, got {dims}")
        if not self.attn_widths or not all(w > 0 for w in self.attn_widths):
            raise ConfigError(f"attn_widths must be nonempty positive, got {self.attn_widths}")
        object.__setattr__(self, "attn_widths", tuple(int(w) for w in self.attn_widths))


def attn_param_count(config: AttnTransformConfig) -> int:
    """Closed-form parameter count of one attention transform."""
    k1, k2, n, m = (
        config.latent_dim, config.interim_dim, config.interim_count, config.out_points,
    )
    interim_fc = k1 * (n * k2) + n * k2
    widths = (k2, *config.attn_widths, m)
    attn_mlp = sum(a * b + b for a, b in zip(widths, widths[1:]))
    map3d = k2 * 3 + 3
    return interim_fc + attn_mlp + map3d


class AttnTransform:
    """Latent vector -> point cloud via attention over interim points."""

    def __init__(self, config: AttnTransformConfig, rng: np.random.Generator):
        self.config = config
        c = config
        self.interim_fc = Linear(rng, c.latent_dim, c.interim_count * c.interim_dim)
        self.attn_mlp = MLP(rng, (c.interim_dim, *c.attn_widths, c.out_points))
        self.map3d = Linear(rng, c.interim_dim, 3)

    def __call__(self, f_in) -> tuple[Tensor, Tensor, Tensor]:
        """Transform latent features [batch, latent_dim].

        Returns (cloud [batch, m, 3], interim [batch, n, k2], attn [batch, m, n]);
        every attn row is nonnegative and sums to 1, so each aggregated point
        is a convex combination of the interim points.
        """
        c = self.config
        if f_in.data.ndim != 2 or f_in.shape[1] != c.latent_dim:
            raise ShapeError(f"attn transform: features {f_in.shape}, need [batch, {c.latent_dim}]")
        batch = f_in.shape[0]
        interim = T.reshape(self.interim_fc(f_in), (batch, c.interim_count, c.interim_dim))
        logits = self.attn_mlp(interim)  # [batch, n, m]
        attn = T.transpose(T.softmax(logits, axis=1), (0, 2, 1))  # [batch, m, n]
        aggregated = T.matmul(attn, interim)  # [batch, m, k2]
        cloud = self.map3d(aggregated)  # [batch, m, 3]
        return cloud, interim, attn

    def parameters(self) -> dict[str, Tensor]:
        out = {f"interim_fc.{k}": v for k, v in self.interim_fc.parameters().items()}
        out.update({f"attn_mlp.{k}": v for k, v in self.attn_mlp.parameters().items()})
        out.update({f"map3d.{k}": v for k, v in self.map3d.parameters().items()})
        return out

    @property
    def param_count(self) -> int:
        return self.interim_fc.param_count + self.attn_mlp.param_count + self.map3d.param_count


def fc_decoder_param_count(latent_dim: int, out_points: int) -> int:
    return latent_dim * out_points * 3 + out_points * 3


class FCDecoder:
    """Baseline: one fully connected layer latent -> m*3, reshaped to points.

    No weight sharing across points, so each point owns ~latent_dim*3
    parameters and the total grows with the output size.
    """

    def __init__(self, out_points: int, rng, latent_dim: int = 1024):
        self.latent_dim = latent_dim
        self.out_points = out_points
        self.fc = Linear(rng, latent_dim, out_points * 3)

    def __call__(self, f_in) -> Tensor:
        if f_in.shape[-1] != self.latent_dim:
            raise ShapeError(f"fc decoder: features {f_in.shape}, need [batch, {self.latent_dim}]")
        return T.reshape(self.fc(f_in), (f_in.shape[0], self.out_points, 3))

    def parameters(self) -> dict[str, Tensor]:
        return {f"fc.{k}": v for k, v in self.fc.parameters().items()}

    @property
    def param_count(self) -> int:
        return self.fc.param_count


def folding_grid(count: int) -> np.ndarray:
    """A count-point uniform lattice over [-0.5, 0.5]^2.

    Uses sqrt(count) x sqrt(count) when count is a perfect square, otherwise
    the most nearly square factor pair (e.g. 512 -> 16 x 32).
    """
    h = int(math.isqrt(count))
    while count % h:
        h -= 1
    w = count // h
    u = np.linspace(-0.5, 0.5, h) if h > 1 else np.zeros(1)
    v = np.linspace(-0.5, 0.5, w) if w > 1 else np.zeros(1)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    return np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)


class FoldingDecoder:
    """Baseline: deform a 2D lattice into a surface in two folding rounds.

    Each round concatenates the latent vector to every (grid or folded)
    point and runs a shared MLP down to 3D.
    """

    def __init__(self, out_points: int, rng, latent_dim: int = 512, hidden: int = 512):
        self.latent_dim = latent_dim
        self.grid = folding_grid(out_points)
        self.fold1 = MLP(rng, (latent_dim + 2, hidden, hidden, 3))
        self.fold2 = MLP(rng, (latent_dim + 3, hidden, hidden, 3))

    @property
    def out_points(self) -> int:
        return len(self.grid)

    def __call__(self, f_in) -> Tensor:
        if f_in.shape[-1] != self.latent_dim:
            raise ShapeError(f"folding decoder: features {f_in.shape}, need [batch, {self.latent_dim}]")
        batch, g = f_in.shape[0], len(self.grid)
        tiled = T.expand(T.reshape(f_in, (batch, 1, self.latent_dim)), (batch, g, self.latent_dim))
        grid = T.expand(Tensor(self.grid[None]), (batch, g, 2))
        xyz = self.fold1(T.concat([tiled, grid], axis=2))
        return self.fold2(T.concat([tiled, xyz], axis=2))

    def parameters(self) -> dict[str, Tensor]:
        out = {f"fold1.{k}": v for k, v in self.fold1.parameters().items()}
        out.update({f"fold2.{k}": v for k, v in self.fold2.parameters().items()})
        return out

    @property
    def param_count(self) -> int:
        return self.fold1.param_count + self.fold2.param_count
