"""Complete architectures: point-set encoder, single/multi-branch decoders,
and the two-stage completion network.

The completion network encodes a partial cloud to a 1024-d feature, maps it
per branch through a small FC net, and runs two attention transforms per
branch: one emits that branch's coarse patch, the other emits bias vectors
for the refinement stage, where the coarse patch and a farthest-point sample
of the input are concatenated and nudged by the biases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .layers import (
    ATTN_WIDTHS_DEFAULT,
    AttnTransform,
    AttnTransformConfig,
    FCDecoder,
    FoldingDecoder,
    Linear,
    MLP,
)
from .metrics import fps_indices
from .tensor import Tensor


class PointEncoder:
    """Shared per-point MLP followed by max pooling over points."""

    def __init__(self, rng, out_dim: int = 128, hidden=(64, 128)):
        self.out_dim = out_dim
        self.mlp = MLP(rng, (3, *hidden, out_dim))

    def __call__(self, clouds) -> Tensor:
        """[batch, n, 3] -> [batch, out_dim]; exactly permutation-invariant."""
        if clouds.data.ndim != 3 or clouds.shape[2] != 3:
            raise ShapeError(f"encoder expects [batch, n, 3], got {clouds.shape}")
        if clouds.shape[1] == 0:
            raise ContractError("cannot encode an empty cloud")
        return T.reduce_max(self.mlp(clouds), axis=1)

    def parameters(self):
        return {f"mlp.{k}": v for k, v in self.mlp.parameters().items()}


@dataclass(frozen=True)
class ReconstructionConfig:
    """Autoencoder configuration for the reconstruction task."""

    decoder: str = "attn"  # attn | fc | folding
    out_points: int = 512
    branches: int = 1
    latent_dim: int = 128
    interim_dim: int = 32
    interim_count: int = 128
    attn_widths: tuple = ATTN_WIDTHS_DEFAULT
    fc_latent_dim: int = 1024
    folding_latent_dim: int = 512
    folding_hidden: int = 512
    encoder_hidden: tuple = (64, 128)

    def __post_init__(self):
        if self.decoder not in ("attn", "fc", "folding"):
            raise ConfigError(f"unknown decoder {self.decoder!r}")
        if self.branches < 1:
            raise ConfigError(f"branches must be >= 1, got {self.branches}")
        if self.decoder == "attn" and self.out_points % self.branches:
            raise ConfigError(
                f"out_points={self.out_points} not divisible by branches={self.branches}"
            )
        if self.decoder != "attn" and self.branches != 1:
            raise ConfigError(f"{self.decoder} decoder supports a single branch only")

    @property
    def encoder_out_dim(self) -> int:
        return {"attn": self.latent_dim, "fc": self.fc_latent_dim,
                "folding": self.folding_latent_dim}[self.decoder]


class MultiBranchDecoder:
    """K independent attention transforms, each emitting one point cluster.

    The output cloud is the branch outputs concatenated in branch order;
    ``branch_ids`` records which branch generated each point.
    """

    def __init__(self, rng, branches: int, block_config: AttnTransformConfig):
        self.blocks = [AttnTransform(block_config, rng) for _ in range(branches)]
        self.branch_ids = np.repeat(np.arange(branches), block_config.out_points)

    @property
    def branches(self) -> int:
        return len(self.blocks)

    def __call__(self, f) -> Tensor:
        return T.concat([blk(f)[0] for blk in self.blocks], axis=1)

    def decode(self, f) -> tuple[Tensor, np.ndarray]:
        return self(f), self.branch_ids.copy()

    def parameters(self):
        return {
            f"branch{i}.{k}": v
            for i, blk in enumerate(self.blocks)
            for k, v in blk.parameters().items()
        }


class Autoencoder:
    """Encoder plus one of the three decoders, for reconstruction training."""

    def __init__(self, config: ReconstructionConfig, seed: int):
        self.config = config
        rng = np.random.default_rng(seed)
        self.encoder = PointEncoder(rng, config.encoder_out_dim, config.encoder_hidden)
        if config.decoder == "attn":
            block = AttnTransformConfig(
                latent_dim=config.latent_dim,
                interim_dim=config.interim_dim,
                interim_count=config.interim_count,
                out_points=config.out_points // config.branches,
                attn_widths=config.attn_widths,
            )
            self.decoder = MultiBranchDecoder(rng, config.branches, block)
        elif config.decoder == "fc":
            self.decoder = FCDecoder(config.out_points, rng, config.fc_latent_dim)
        else:
            self.decoder = FoldingDecoder(
                config.out_points, rng, config.folding_latent_dim, config.folding_hidden
            )

    def __call__(self, clouds) -> Tensor:
        return self.decoder(self.encoder(clouds))

    def reconstruct(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Single-cloud inference: (reconstructed points, branch ids or None)."""
        out = self(Tensor(np.asarray(points, dtype=np.float64)[None]))
        ids = self.decoder.branch_ids.copy() if isinstance(self.decoder, MultiBranchDecoder) else None
        return out.data[0], ids

    def parameters(self):
        out = {f"encoder.{k}": v for k, v in self.encoder.parameters().items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.parameters().items()})
        return out


@dataclass(frozen=True)
class CompletionConfig:
    """Two-stage completion network configuration."""

    branches: int = 4
    coarse_points: int = 64  # per-branch first-stage output
    latent_dim: int = 1024
    branch_dim: int = 128
    interim_dim: int = 32
    interim_count: int = 128
    attn_widths: tuple = ATTN_WIDTHS_DEFAULT
    feature_hidden: tuple = (1024, 1024)
    encoder_hidden: tuple = (64, 128)
    feature_mapping: bool = True  # False: one shared FC latent -> branch_dim

    def __post_init__(self):
        if self.branches < 1:
            raise ConfigError(f"branches must be >= 1, got {self.branches}")
        if self.coarse_points < 1:
            raise ConfigError(f"coarse_points must be >= 1, got {self.coarse_points}")

    @property
    def final_points(self) -> int:
        return 2 * self.branches * self.coarse_points


class CompletionNet:
    """K-branch coarse generation plus FPS-and-bias refinement."""

    def __init__(self, config: CompletionConfig, seed: int):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.encoder = PointEncoder(rng, c.latent_dim, c.encoder_hidden)
        self.shared_map = None
        if not c.feature_mapping:
            self.shared_map = Linear(rng, c.latent_dim, c.branch_dim)
        self.feature_maps = []
        self.coarse_blocks = []
        self.refine_blocks = []
        for _ in range(c.branches):
            if c.feature_mapping:
                self.feature_maps.append(
                    MLP(rng, (c.latent_dim, *c.feature_hidden, c.branch_dim))
                )
            self.coarse_blocks.append(AttnTransform(self._block_config(c.coarse_points), rng))
            self.refine_blocks.append(AttnTransform(self._block_config(2 * c.coarse_points), rng))

    def _block_config(self, out_points: int) -> AttnTransformConfig:
        c = self.config
        return AttnTransformConfig(
            latent_dim=c.branch_dim, interim_dim=c.interim_dim,
            interim_count=c.interim_count, out_points=out_points,
            attn_widths=c.attn_widths,
        )

    def branch_feature(self, f, branch: int) -> Tensor:
        if self.shared_map is not None:
            return self.shared_map(f)
        return self.feature_maps[branch](f)

    def forward(self, partial, mode: str = "full") -> tuple[Tensor, Tensor, np.ndarray]:
        """Complete a batch of partial clouds [batch, n, 3].

        Returns (coarse [batch, K*Mc, 3], final, branch_ids of final). The
        coarse stage is identical in both modes; vanilla returns it as the
        final output, full refines per branch by concatenating FPS draws of
        the coarse patch and the input and adding the refine-stage biases.
        """
        if mode not in ("vanilla", "full"):
            raise ConfigError(f"unknown completion mode {mode!r}")
        c = self.config
        mc = c.coarse_points
        f = self.encoder(partial)
        coarse_parts, final_parts = [], []
        if mode == "full" and partial.shape[1] < mc:
            raise ContractError(
                f"full mode needs at least {mc} partial points, got {partial.shape[1]}"
            )
        for b in range(c.branches):
            fb = self.branch_feature(f, b)
            coarse_b, _, _ = self.coarse_blocks[b](fb)
            coarse_parts.append(coarse_b)
            if mode == "full":
                idx_c = np.stack([fps_indices(coarse_b.data[i], mc) for i in range(coarse_b.shape[0])])
                idx_p = np.stack([fps_indices(partial.data[i], mc) for i in range(partial.shape[0])])
                base = T.concat([T.take_rows(coarse_b, idx_c), T.take_rows(partial, idx_p)], axis=1)
                bias, _, _ = self.refine_blocks[b](fb)
                final_parts.append(T.add(base, bias))
        coarse = T.concat(coarse_parts, axis=1)
        if mode == "vanilla":
            return coarse, coarse, np.repeat(np.arange(c.branches), mc)
        final = T.concat(final_parts, axis=1)
        return coarse, final, np.repeat(np.arange(c.branches), 2 * mc)

    def complete(self, partial_points: np.ndarray, mode: str = "full"):
        """Single-cloud inference: (coarse points, final points, branch ids)."""
        partial = Tensor(np.asarray(partial_points, dtype=np.float64)[None])
        coarse, final, ids = self.forward(partial, mode)
        return coarse.data[0], final.data[0], ids

    def parameters(self):
        out = {f"encoder.{k}": v for k, v in self.encoder.parameters().items()}
        if self.shared_map is not None:
            out.update({f"shared_map.{k}": v for k, v in self.shared_map.parameters().items()})
        for b in range(self.config.branches):
            if self.feature_maps:
                out.update({
                    f"branch{b}.feature_map.{k}": v
                    for k, v in self.feature_maps[b].parameters().items()
                })
            out.update({
                f"branch{b}.coarse.{k}": v for k, v in self.coarse_blocks[b].parameters().items()
            })
            out.update({
                f"branch{b}.refine.{k}": v for k, v in self.refine_blocks[b].parameters().items()
            })
        return out
