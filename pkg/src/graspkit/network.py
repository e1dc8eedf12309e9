"""Grasp networks: a configurable fully convolutional head emitting four
pixel-wise maps (quality, cos 2phi, sin 2phi, width), and the assembly that
runs a frozen encoder + codebook through a reinitialized decoder before the
head. Layer tables live in plain-text .cfg files so parameter counts are
reproducible from the repository alone."""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, FormatError
from .geometry import GraspMaps
from .vqvae import Decoder, Encoder, quantize
from .weights import checksum_arrays, load_into_module, subset

_KINDS = ("conv", "dilated-conv", "transposed-conv")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    filters: int
    kernel: int
    stride: int
    dilation: int = 1
    padding: int = 0
    output_padding: int = 0


@dataclass
class NetworkConfig:
    """Ordered layer table plus the four 1-per-map output heads."""

    input_channels: int
    layers: list
    head_count: int = 4
    head_kernel: int = 1

    def __post_init__(self):
        if self.head_count != 4:
            raise ConfigError("the grasp head emits exactly 4 maps")
        for spec in self.layers:
            if spec.kind not in _KINDS:
                raise ConfigError(f"unknown layer kind {spec.kind!r}")


def parse_network_config(source) -> NetworkConfig:
    """Parse a .cfg layer table.

    Lines: ``input_channels N``; ``conv|dilated-conv F K S DIL PAD``;
    ``transposed-conv F K S PAD OUTPAD``; ``heads COUNT KERNEL``.
    '#' starts a comment.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        path = Path(source)
        name = str(path)
        text = path.read_text()
    else:
        name, text = "<config text>", source
    input_channels = None
    layers: list[LayerSpec] = []
    head_count, head_kernel = 4, 1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key, args = parts[0], parts[1:]
        try:
            if key == "input_channels":
                (input_channels,) = map(int, args)
            elif key in ("conv", "dilated-conv"):
                f, k, s, dil, pad = map(int, args)
                layers.append(LayerSpec(key, f, k, s, dil, pad))
            elif key == "transposed-conv":
                f, k, s, pad, outpad = map(int, args)
                layers.append(LayerSpec(key, f, k, s, 1, pad, outpad))
            elif key == "heads":
                head_count, head_kernel = map(int, args)
            else:
                raise ConfigError(f"{name}:{lineno}: unknown directive {key!r}")
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{name}:{lineno}: malformed line {line!r}: {e}") from e
    if input_channels is None or not layers:
        raise ConfigError(f"{name}: config needs input_channels and at least one layer")
    return NetworkConfig(input_channels, layers, head_count, head_kernel)


def packaged_config(name: str) -> Path:
    """Path of a .cfg file shipped inside the package."""
    return Path(str(importlib.resources.files("graspkit").joinpath("configs", name)))


class GraspNetwork(nn.Module):
    """Shape-preserving fully convolutional network with four map heads.

    ``divisor`` is the spatial divisibility the input must satisfy so the
    stride/upsample chain lands back on the input size.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        features = []
        c = config.input_channels
        divisor = 1
        for spec in config.layers:
            if spec.kind in ("conv", "dilated-conv"):
                features.append(
                    nn.Conv2d(
                        c,
                        spec.filters,
                        spec.kernel,
                        stride=spec.stride,
                        padding=spec.padding,
                        dilation=spec.dilation,
                    )
                )
                divisor *= spec.stride
            else:
                features.append(
                    nn.ConvTranspose2d(
                        c,
                        spec.filters,
                        spec.kernel,
                        stride=spec.stride,
                        padding=spec.padding,
                        output_padding=spec.output_padding,
                    )
                )
            features.append(nn.ReLU())
            c = spec.filters
        self.features = nn.Sequential(*features)
        self.head_pad = nn.ZeroPad2d((0, config.head_kernel - 1, 0, config.head_kernel - 1))
        self.q_head = nn.Conv2d(c, 1, config.head_kernel)
        self.cos_head = nn.Conv2d(c, 1, config.head_kernel)
        self.sin_head = nn.Conv2d(c, 1, config.head_kernel)
        self.w_head = nn.Conv2d(c, 1, config.head_kernel)
        self.divisor = divisor
        self._check_shape_preserving()

    def _check_shape_preserving(self):
        probe = self.divisor * 4
        x = torch.zeros(1, self.config.input_channels, probe, probe)
        trace = []
        with torch.no_grad():
            for layer in self.features:
                x = layer(x)
                trace.append(f"{layer.__class__.__name__}: {tuple(x.shape[-2:])}")
        if x.shape[-2:] != (probe, probe):
            joined = "\n  ".join(trace)
            raise ConfigError(
                f"layer table is not shape-preserving for {probe}x{probe} input:\n  {joined}"
            )

    def forward(self, x):
        f = self.features(x)
        f = self.head_pad(f)
        return self.q_head(f), self.cos_head(f), self.sin_head(f), self.w_head(f)


def build_ggcnn2(config=None) -> GraspNetwork:
    """Build a grasp network from a NetworkConfig or a .cfg path.

    With no argument the shipped reference table is used.
    """
    if config is None:
        config = packaged_config("ggcnn2.cfg")
    if not isinstance(config, NetworkConfig):
        config = parse_network_config(config)
    return GraspNetwork(config)


def param_count(network: nn.Module) -> int:
    """Trainable parameter elements; frozen (requires_grad=False) arrays excluded."""
    return sum(p.numel() for p in network.parameters() if p.requires_grad)


class AssembledModel(nn.Module):
    """Frozen encoder + codebook, reinitialized decoder, grasp head.

    Forward: encode -> quantize -> decode -> head. Only decoder and head carry
    gradients; the encoder and codebook stay bit-identical through training.
    """

    def __init__(self, encoder: Encoder, codes: nn.Embedding, decoder: Decoder, head: GraspNetwork):
        super().__init__()
        self.encoder = encoder
        self.codes = codes
        self.decoder = decoder
        self.head = head
        self.encoder.requires_grad_(False)
        self.codes.requires_grad_(False)
        self.divisor = max(4, head.divisor)

    def forward(self, x):
        z_e = self.encoder(x)
        z_q, _ = quantize(z_e.permute(0, 2, 3, 1), self.codes.weight)
        recon = self.decoder(z_q.permute(0, 3, 1, 2))
        return self.head(recon)

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def frozen_arrays(self):
        from .weights import module_arrays

        arrays = module_arrays(self.encoder, "encoder.")
        arrays.update(module_arrays(self.codes, "codes."))
        return arrays

    def frozen_checksum(self) -> str:
        return checksum_arrays(self.frozen_arrays())


def _vq_dims_from_arrays(arrays) -> tuple[int, int, int, int]:
    try:
        k, d = arrays["codes.weight"].shape
        first = arrays["encoder.net.0.weight"]
    except KeyError as e:
        raise FormatError(f"archive is missing required array {e.args[0]!r}") from e
    hidden, channels = first.shape[0], first.shape[1]
    if d != arrays["encoder.net.2.weight"].shape[0]:
        raise FormatError("encoder output dim does not match codebook D")
    return channels, hidden, k, d


def assemble_rggcnn2(vqvae_arrays, head_config=None, seed: int = 0) -> AssembledModel:
    """Assemble the cascade from phase-1 weights.

    The encoder and codebook are copied in and frozen; the decoder is freshly
    initialized (never the phase-1 decoder values); the head follows
    ``head_config`` (defaults to the shipped reference table).
    """
    channels, hidden, k, d = _vq_dims_from_arrays(vqvae_arrays)
    if head_config is None:
        head_config = packaged_config("ggcnn2.cfg")
    if not isinstance(head_config, NetworkConfig):
        head_config = parse_network_config(head_config)
    if head_config.input_channels != channels:
        raise ConfigError(
            f"head expects {head_config.input_channels} input channels but the decoder emits {channels}"
        )
    torch.manual_seed(seed)
    encoder = Encoder(channels, hidden, d)
    codes = nn.Embedding(k, d)
    decoder = Decoder(channels, hidden, d)
    head = GraspNetwork(head_config)
    load_into_module(encoder, subset(vqvae_arrays, "encoder."), "encoder.")
    load_into_module(codes, subset(vqvae_arrays, "codes."), "codes.")
    return AssembledModel(encoder, codes, decoder, head)


def model_from_arrays(arrays, head_config=None):
    """Rebuild a trained model from an archive snapshot.

    Archives holding decoder/head arrays come back as an AssembledModel; bare
    head archives come back as a GraspNetwork.
    """
    if any(k.startswith("decoder.") for k in arrays):
        model = assemble_rggcnn2(arrays, head_config)
        load_into_module(model.decoder, subset(arrays, "decoder."), "decoder.")
        load_into_module(model.head, subset(arrays, "head."), "head.")
        return model
    if head_config is None:
        head_config = packaged_config("ggcnn2.cfg")
    model = build_ggcnn2(head_config)
    load_into_module(model, arrays)
    return model


def predict_maps(model: nn.Module, image: np.ndarray) -> GraspMaps:
    """Run a model on one HxWxC image in [0, 1] and assemble GraspMaps.

    Q is squashed by a sigmoid, the angle pair is normalized to unit length,
    and the width channel is rescaled to pixels and clamped nonnegative.
    """
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise ConfigError(f"expected an HxWxC image, got shape {arr.shape}")
    h, w = arr.shape[:2]
    divisor = getattr(model, "divisor", 1)
    if h % divisor or w % divisor:
        raise ConfigError(f"image dims must be divisible by {divisor}, got {h}x{w}")
    x = torch.from_numpy(arr).permute(2, 0, 1)[None]
    was_training = model.training
    model.eval()
    with torch.no_grad():
        q_raw, cos_raw, sin_raw, w_raw = model(x)
    model.train(was_training)
    q = torch.sigmoid(q_raw)[0, 0].numpy()
    cos = cos_raw[0, 0].numpy().astype(np.float64)
    sin = sin_raw[0, 0].numpy().astype(np.float64)
    norm = np.maximum(np.hypot(cos, sin), 1e-12)
    wm = np.maximum(w_raw[0, 0].numpy(), 0.0) * 150.0
    return GraspMaps(
        Q=q.astype(np.float32),
        cos2phi=(cos / norm).astype(np.float32),
        sin2phi=(sin / norm).astype(np.float32),
        W=wm.astype(np.float32),
    )
