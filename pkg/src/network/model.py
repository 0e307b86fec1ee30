"""Shared-weight ViT encoder with pyramid taps and a single-projection decoder."""

from typing import NamedTuple

import torch
import torch.nn as nn

from src.core.errors import NonFiniteActivationError, ShapeError
from src.models.encoder import EncoderConfig, FeatureSource, LatentFeatures


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, N, C = x.shape
        qkv = (
            self.qkv(x)
            .reshape(B, N, 3, self.num_heads, C // self.num_heads)
            .permute(2, 0, 3, 1, 4)
        )
        q, k, v = qkv.unbind(0)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        x = (attn @ v).transpose(1, 2).reshape(B, N, C)
        return self.proj(x)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer block."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, max(1, int(dim * mlp_ratio)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class DualForward(NamedTuple):
    """Per-level (B, n, d) features of both branches and the (B, C, H, W, D) reconstruction."""

    features_full: list[torch.Tensor]
    features_masked: list[torch.Tensor]
    reconstruction: torch.Tensor


class EmimModel(nn.Module):
    """Encoder f and output projection g, shared by the full and masked branches.

    A token is the sum of per-modality linear projections of a position's
    blocks, a bias and the positional embedding. Masked (modality, position)
    cells contribute the learned ``mask_token[c]`` instead of their
    projection, so every position keeps a row in both branches.
    """

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        C, P, d = config.num_modalities, config.patch_voxels, config.embed_dim
        n = config.num_positions

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.patch_embed = nn.Linear(C * P, d)
            self.pos_embed = nn.Parameter(torch.zeros(n, d))
            self.mask_token = nn.Parameter(torch.zeros(C, d))
            self.blocks = nn.ModuleList(
                [Block(d, config.num_heads, config.mlp_ratio) for _ in range(config.depth)]
            )
            self.head = nn.Linear(d, C * P)
            self.initialize_weights()

        self.to(config.precision.dtype)

    def initialize_weights(self) -> None:
        torch.nn.init.normal_(self.pos_embed, std=0.02)
        torch.nn.init.normal_(self.mask_token, std=0.02)
        self.apply(self._init_weights)

    def _init_weights(self, m: nn.Module) -> None:
        if isinstance(m, nn.Linear):
            torch.nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.constant_(m.bias, 0)
        elif isinstance(m, nn.LayerNorm):
            nn.init.constant_(m.bias, 0)
            nn.init.constant_(m.weight, 1.0)

    @property
    def dtype(self) -> torch.dtype:
        return self.pos_embed.dtype

    def patchify(self, volumes: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W, D) → (B, n, C, ph*pw*pd)."""
        cfg = self.config
        B, C, H, W, D = volumes.shape
        if (C, H, W, D) != (cfg.num_modalities, *cfg.volume_dims):
            raise ShapeError(
                f"volume shape {(C, H, W, D)} does not match encoder "
                f"{(cfg.num_modalities, *cfg.volume_dims)}"
            )
        ph, pw, pd = cfg.patch_size
        gh, gw, gd = cfg.grid_shape
        x = volumes.reshape(B, C, gh, ph, gw, pw, gd, pd)
        x = x.permute(0, 2, 4, 6, 1, 3, 5, 7)
        return x.reshape(B, gh * gw * gd, C, ph * pw * pd)

    def unpatchify(self, x: torch.Tensor) -> torch.Tensor:
        """(B, n, C*ph*pw*pd) → (B, C, H, W, D)."""
        cfg = self.config
        B = x.shape[0]
        ph, pw, pd = cfg.patch_size
        gh, gw, gd = cfg.grid_shape
        x = x.reshape(B, gh, gw, gd, cfg.num_modalities, ph, pw, pd)
        x = x.permute(0, 4, 1, 5, 2, 6, 3, 7)
        return x.reshape(B, cfg.num_modalities, *cfg.volume_dims)

    def embed(self, patches: torch.Tensor, bits: torch.Tensor | None = None) -> torch.Tensor:
        """Token matrix (B, n, d) from (B, n, C, P) patches and optional (B, C, n) bits."""
        B, n, C, P = patches.shape
        if (n, C, P) != (
            self.config.num_positions,
            self.config.num_modalities,
            self.config.patch_voxels,
        ):
            raise ShapeError(f"patch tensor shape {tuple(patches.shape)} does not match encoder")
        weight = self.patch_embed.weight.view(-1, C, P)
        contrib = torch.einsum("bncp,dcp->bncd", patches, weight)
        if bits is None:
            bits = torch.zeros(B, C, n, dtype=torch.bool, device=patches.device)
        if bits.shape != (B, C, n):
            raise ShapeError(f"mask shape {tuple(bits.shape)} does not match (B, C, n)")
        cells = bits.transpose(1, 2).unsqueeze(-1)
        contrib = torch.where(cells, self.mask_token, contrib)
        return contrib.sum(dim=2) + self.patch_embed.bias + self.pos_embed

    def encoder_forward(
        self, tokens: torch.Tensor, taps: tuple[int, ...] | None = None
    ) -> list[torch.Tensor]:
        """Run the blocks, returning the token matrix after each tap layer."""
        taps = self.config.tap_layers if taps is None else taps
        unknown = set(taps) - set(self.config.tap_layers) - {0}
        if unknown:
            raise ShapeError(f"taps {sorted(unknown)} are not configured levels")
        features = [tokens] if 0 in taps else []
        x = tokens
        for index, block in enumerate(self.blocks, start=1):
            x = block(x)
            if not torch.isfinite(x).all():
                raise NonFiniteActivationError(index)
            if index in taps:
                features.append(x)
        return features

    def dual_forward(self, volumes: torch.Tensor, bits: torch.Tensor) -> DualForward:
        patches = self.patchify(volumes.to(self.dtype))
        features_full = self.encoder_forward(self.embed(patches))
        features_masked = self.encoder_forward(self.embed(patches, bits))
        final = features_masked[-1]
        reconstruction = self.unpatchify(self.head(final))
        return DualForward(features_full, features_masked, reconstruction)

    def latent_features(
        self, forward: DualForward, level: int, sample: int = 0
    ) -> tuple[LatentFeatures, LatentFeatures]:
        """Per-sample features of both branches at a 1-based pyramid level."""
        full = forward.features_full[level - 1][sample]
        masked = forward.features_masked[level - 1][sample]
        return (
            LatentFeatures.from_tensor(full, level, FeatureSource.FULL_INPUT),
            LatentFeatures.from_tensor(masked, level, FeatureSource.MASKED_INPUT),
        )
