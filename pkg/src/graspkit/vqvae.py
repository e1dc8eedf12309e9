"""Vector-quantized autoencoder: convolutional encoder, nearest-neighbour
codebook quantizer with a straight-through gradient path, reconstruction
decoder, and the phase-1 trainer that runs over all images, labelled or not.

The training objective is the sum of a reconstruction term (mean squared
error, i.e. a fixed-variance Gaussian likelihood), a dictionary term pulling
selected codebook rows toward the encoder output, and a beta-weighted
commitment term pulling the encoder toward its selected rows. Stop-gradients
route each term to exactly one component: reconstruction to decoder and (via
the straight-through copy) encoder, the dictionary term to the selected
codebook rows only, the commitment term to the encoder only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, FormatError, NumericError, TrainingDiverged
from .weights import load_into_module, module_arrays

log = logging.getLogger(__name__)

DOWNSAMPLE = 4


@dataclass
class VQVAEConfig:
    channels: int = 3
    hidden: int = 32
    k: int = 128
    d: int = 64
    beta: float = 0.25
    epochs: int = 60
    batch: int = 16
    lr: float = 1e-3
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        if self.k < 2 or self.d < 1:
            raise ConfigError(f"codebook needs k >= 2 and d >= 1, got k={self.k}, d={self.d}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")


@dataclass(eq=False)
class Codebook:
    """The K x D dictionary of discrete latent embeddings."""

    embeddings: torch.Tensor

    def __post_init__(self):
        if self.embeddings.ndim != 2:
            raise ConfigError("codebook embeddings must be a K x D matrix")
        k, d = self.embeddings.shape
        if k < 2 or d < 1:
            raise ConfigError(f"codebook needs K >= 2 and D >= 1, got {k} x {d}")
        if not torch.isfinite(self.embeddings).all():
            raise NumericError("codebook contains non-finite entries")

    @property
    def k(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.embeddings.shape[1]


@dataclass(eq=False)
class VQOutput:
    """One forward pass: pre-quantization grid, quantized grid, indices, recon.

    Tensors are batched channels-first: z_e and z_q are (B, D, h, w), indices
    (B, h, w), recon image-shaped. z_q rows equal codebook rows exactly.
    """

    z_e: torch.Tensor
    z_q: torch.Tensor
    indices: torch.Tensor
    recon: torch.Tensor


@dataclass(eq=False)
class VQLossBreakdown:
    recon_term: torch.Tensor
    dict_term: torch.Tensor
    commit_term: torch.Tensor
    beta: float
    total: torch.Tensor


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, hidden: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReLU(),
            nn.Conv2d(channels, hidden, 3, padding=1),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, 1),
        )

    def forward(self, x):
        return x + self.body(x)


class Encoder(nn.Module):
    """Two stride-2 blocks (x4 downsampling) plus two residual blocks."""

    def __init__(self, channels: int, hidden: int, d: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(channels, hidden, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(hidden, d, 4, stride=2, padding=1),
            ResidualBlock(d, hidden),
            ResidualBlock(d, hidden),
        )

    def forward(self, x):
        return self.net(x)


class Decoder(nn.Module):
    """Mirror of the encoder: residual blocks then two stride-2 transposed convs."""

    def __init__(self, channels: int, hidden: int, d: int):
        super().__init__()
        self.net = nn.Sequential(
            ResidualBlock(d, hidden),
            ResidualBlock(d, hidden),
            nn.ConvTranspose2d(d, hidden, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.ConvTranspose2d(hidden, hidden, 4, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, 3, padding=1),
        )

    def forward(self, z):
        return self.net(z)


def _check_divisible(shape, what: str):
    h, w = shape[-2], shape[-1]
    if h % DOWNSAMPLE or w % DOWNSAMPLE:
        raise ConfigError(
            f"{what} spatial dims must be divisible by {DOWNSAMPLE}, got {h}x{w}"
        )


def quantize(z_e: torch.Tensor, codebook) -> tuple[torch.Tensor, torch.Tensor]:
    """Nearest codebook row per cell (last dim is D); ties take the smallest index.

    Distances are evaluated in float64 so the winning index is stable, then the
    quantized grid is gathered from the live codebook so gradients reach the
    selected rows.
    """
    weight = codebook.embeddings if isinstance(codebook, Codebook) else codebook
    if z_e.shape[-1] != weight.shape[1]:
        raise ConfigError(
            f"cell dimensionality {z_e.shape[-1]} does not match codebook D={weight.shape[1]}"
        )
    if not torch.isfinite(z_e).all():
        raise NumericError("quantize received non-finite cells")
    flat = z_e.reshape(-1, z_e.shape[-1]).to(torch.float64)
    w64 = weight.detach().to(torch.float64)
    d2 = flat.pow(2).sum(1, keepdim=True) - 2.0 * flat @ w64.t() + w64.pow(2).sum(1)
    mins = d2.min(dim=1, keepdim=True).values
    k = weight.shape[0]
    candidates = torch.where(d2 == mins, torch.arange(k, device=d2.device), k)
    indices = candidates.min(dim=1).values
    z_q = F.embedding(indices.reshape(z_e.shape[:-1]), weight)
    return z_q, indices.reshape(z_e.shape[:-1])


class VQVAE(nn.Module):
    def __init__(self, config: VQVAEConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config.channels, config.hidden, config.d)
        self.codes = nn.Embedding(config.k, config.d)
        self.codes.weight.data.uniform_(-1.0 / config.k, 1.0 / config.k)
        self.decoder = Decoder(config.channels, config.hidden, config.d)

    def codebook(self) -> Codebook:
        return Codebook(self.codes.weight)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        _check_divisible(x.shape, "encoder input")
        return self.encoder(x)

    def decode(self, z_q: torch.Tensor) -> torch.Tensor:
        if z_q.shape[-3] != self.config.d:
            raise ConfigError(
                f"decoder expects {self.config.d} channels, got {z_q.shape[-3]}"
            )
        return self.decoder(z_q)

    def forward(self, x: torch.Tensor) -> VQOutput:
        z_e = self.encode(x)
        z_q_cl, indices = quantize(z_e.permute(0, 2, 3, 1), self.codes.weight)
        z_q = z_q_cl.permute(0, 3, 1, 2)
        z_st = z_e + (z_q - z_e).detach()
        recon = self.decoder(z_st)
        return VQOutput(z_e=z_e, z_q=z_q, indices=indices, recon=recon)


def vqvae_from_arrays(arrays: dict) -> VQVAE:
    """Rebuild a model from saved weight arrays, inferring K, D, hidden and
    channel count from the array shapes."""
    try:
        k, d = arrays["codes.weight"].shape
        hidden, channels = arrays["encoder.net.0.weight"].shape[:2]
    except KeyError as e:
        raise FormatError(f"weight archive missing array {e}") from None
    model = VQVAE(VQVAEConfig(channels=int(channels), hidden=int(hidden), k=int(k), d=int(d)))
    load_into_module(model, arrays)
    return model


def _as_model(weights) -> VQVAE:
    if isinstance(weights, VQVAE):
        return weights
    return vqvae_from_arrays(weights)


def encode(image, weights) -> torch.Tensor:
    """Encode one channels-last image (H, W, C) to its (H/4, W/4, D) cell grid.

    weights may be a VQVAE module or the array dict train_vqvae returns.
    """
    model = _as_model(weights)
    x = torch.as_tensor(np.asarray(image), dtype=torch.float32)
    if x.ndim != 3:
        raise ConfigError(f"encode expects an H x W x C image, got shape {tuple(x.shape)}")
    if x.shape[2] != model.config.channels:
        raise ConfigError(
            f"encode expects {model.config.channels} channels, got {x.shape[2]}"
        )
    _check_divisible((x.shape[0], x.shape[1]), "encoder input")
    with torch.no_grad():
        z = model.encoder(x.permute(2, 0, 1).unsqueeze(0))
    return z.squeeze(0).permute(1, 2, 0)


def decode(z_q, weights) -> torch.Tensor:
    """Decode a channels-last (h, w, D) cell grid to a (4h, 4w, C) image."""
    model = _as_model(weights)
    z = torch.as_tensor(np.asarray(z_q), dtype=torch.float32)
    if z.ndim != 3:
        raise ConfigError(f"decode expects an h x w x D grid, got shape {tuple(z.shape)}")
    if z.shape[2] != model.config.d:
        raise ConfigError(f"decode expects {model.config.d}-dim cells, got {z.shape[2]}")
    with torch.no_grad():
        out = model.decoder(z.permute(2, 0, 1).unsqueeze(0))
    return out.squeeze(0).permute(1, 2, 0)


def vq_loss(image: torch.Tensor, output: VQOutput, beta: float = 0.25) -> VQLossBreakdown:
    """Reconstruction + dictionary + beta * commitment.

    The dictionary and commitment terms are the squared L2 distance between
    each cell and its selected row (summed over D), averaged over cells.
    """
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    if output.recon.shape != image.shape:
        raise ConfigError(
            f"reconstruction shape {tuple(output.recon.shape)} does not match image {tuple(image.shape)}"
        )
    if output.z_q.shape != output.z_e.shape:
        raise ConfigError("z_q and z_e shapes differ")
    recon_term = F.mse_loss(output.recon, image)
    dict_term = (output.z_q - output.z_e.detach()).pow(2).sum(dim=-3).mean()
    commit_term = (output.z_e - output.z_q.detach()).pow(2).sum(dim=-3).mean()
    total = recon_term + dict_term + beta * commit_term
    return VQLossBreakdown(recon_term, dict_term, commit_term, beta, total)


def scenes_to_tensor(scenes) -> torch.Tensor:
    """Stack scene images into a (N, C, H, W) float tensor."""
    arr = np.stack([s.image for s in scenes]).astype(np.float32)
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


def train_vqvae(scenes, config: VQVAEConfig) -> tuple[dict, list]:
    """Phase-1 trainer over every provided scene (annotations are ignored).

    Returns (weight arrays, per-epoch loss history). Deterministic in
    config.seed: init, batch order and optimizer state all derive from it.
    """
    if not scenes:
        raise ConfigError("train_vqvae needs at least one scene")
    images = scenes_to_tensor(scenes)
    _check_divisible(images.shape, "training images")
    torch.manual_seed(config.seed)
    model = VQVAE(config)
    history: list[dict] = []
    if config.epochs == 0:
        return module_arrays(model), history
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    n = images.shape[0]
    step = 0
    done = False
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        batches = 0
        for start in range(0, n, config.batch):
            idx = torch.from_numpy(order[start : start + config.batch])
            x = images[idx]
            out = model(x)
            bd = vq_loss(x, out, beta=config.beta)
            if not torch.isfinite(bd.total):
                raise TrainingDiverged(
                    f"vqvae loss became non-finite at epoch {epoch}, step {step}"
                )
            opt.zero_grad()
            bd.total.backward()
            opt.step()
            sums += [
                bd.recon_term.item(),
                bd.dict_term.item(),
                bd.commit_term.item(),
                bd.total.item(),
            ]
            batches += 1
            step += 1
            if config.max_steps is not None and step >= config.max_steps:
                done = True
                break
        history.append(
            {
                "epoch": epoch,
                "recon": sums[0] / batches,
                "dict": sums[1] / batches,
                "commit": sums[2] / batches,
                "total": sums[3] / batches,
            }
        )
        if epoch % 50 == 0 or epoch == config.epochs - 1:
            log.debug("vqvae epoch %d: %s", epoch, history[-1])
        if done:
            break
    return module_arrays(model), history
