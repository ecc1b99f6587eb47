"""Attention-gated multi-task GAN: generator, discriminator, attention gates.

The generator maps a normalized split measurement [b, M, 2] through a learned
dense projection onto the 28x28 grid, a 3-stage strided-conv encoder, and a
mirrored transpose-conv decoder whose skip connections pass through attention
gates; a classifier head reads the shared bottleneck. The discriminator reuses
the encoder stage layout and ends in a single sigmoid unit.

Spatial plan (28x28 input): 28 -> 14 -> 7 -> 4 under stride-2 same-padding
convs, mirrored exactly by the decoder (output sizes are pinned, not inferred),
so the image head always lands back on 28x28.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass(frozen=True)
class GanConfig:
    n_modes: int = 1024
    image_side: int = 28
    encoder_filters: int = 256
    decoder_filters: int = 64
    classifier_filters: int = 128
    kernel_size: int = 3
    n_classes: int = 10

    def tiny(self) -> "GanConfig":
        """Gradient-check variant: 4 filters per stage, same wiring."""
        return replace(self, encoder_filters=4, decoder_filters=4, classifier_filters=4)

    def spatial_sizes(self) -> list:
        sizes = [self.image_side]
        for _ in range(3):
            sizes.append(-(-sizes[-1] // 2))
        return sizes  # e.g. [28, 14, 7, 4]


class Conv:
    def __init__(self, name: str, cin: int, cout: int, rng, k: int = 3,
                 stride: int = 1):
        self.name = name
        self.stride = stride
        self.w = T.xavier_init((k, k, cin, cout), rng)
        self.b = T.zeros_param((cout,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.conv2d(x, self.w, stride=self.stride, padding="same"), self.b)

    def params(self) -> dict:
        return {f"{self.name}/w": self.w, f"{self.name}/b": self.b}


class ConvTranspose:
    """Stride-2 transpose conv; the caller pins the output size."""

    def __init__(self, name: str, cin: int, cout: int, rng, k: int = 3):
        self.name = name
        self.w = T.xavier_init((k, k, cout, cin), rng)  # adjoint orientation
        self.b = T.zeros_param((cout,))

    def __call__(self, x: Tensor, output_size) -> Tensor:
        y = T.conv2d_transpose(x, self.w, stride=2, padding="same",
                               output_size=output_size)
        return T.add(y, self.b)

    def params(self) -> dict:
        return {f"{self.name}/w": self.w, f"{self.name}/b": self.b}


class Dense:
    def __init__(self, name: str, cin: int, cout: int, rng):
        self.name = name
        self.w = T.xavier_init((cin, cout), rng)
        self.b = T.zeros_param((cout,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.dense(x, self.w, self.b)

    def params(self) -> dict:
        return {f"{self.name}/w": self.w, f"{self.name}/b": self.b}


class AttentionGate:
    """Per-location multiplicative mask in (0, 1) applied to skip features.

    ratio = sigmoid(psi(relu(Wg * gate + Wx * skip))); psi has a single output
    channel and the only bias in the block, so zeroed psi parameters give a
    flat ratio of 0.5. The mask broadcasts across the skip's channels.
    """

    def __init__(self, name: str, c_gate: int, c_skip: int, rng):
        self.name = name
        inter = max(1, min(c_gate, c_skip) // 2)
        self.w_gate = T.xavier_init((1, 1, c_gate, inter), rng)
        self.w_input = T.xavier_init((1, 1, c_skip, inter), rng)
        self.w_psi = T.xavier_init((1, 1, inter, 1), rng)
        self.b_psi = T.zeros_param((1,))

    def ratio(self, gate: Tensor, skip: Tensor) -> Tensor:
        if gate.shape[1:3] != skip.shape[1:3]:
            raise ShapeError(f"attention gate: spatial dims {gate.shape} vs {skip.shape}")
        mixed = T.relu(T.add(T.conv2d(gate, self.w_gate), T.conv2d(skip, self.w_input)))
        return T.sigmoid(T.add(T.conv2d(mixed, self.w_psi), self.b_psi))

    def __call__(self, gate: Tensor, skip: Tensor) -> Tensor:
        return T.mul(self.ratio(gate, skip), skip)

    def params(self) -> dict:
        return {f"{self.name}/w_gate": self.w_gate, f"{self.name}/w_input": self.w_input,
                f"{self.name}/w_psi": self.w_psi, f"{self.name}/b_psi": self.b_psi}


def attention_gate_forward(gate: AttentionGate, gate_signal: Tensor,
                           ag_input: Tensor) -> Tensor:
    return gate(gate_signal, ag_input)


class Generator:
    def __init__(self, cfg: GanConfig, rng):
        rng = np.random.default_rng(rng)
        self.cfg = cfg
        ef, df, cf = cfg.encoder_filters, cfg.decoder_filters, cfg.classifier_filters
        k = cfg.kernel_size
        side = cfg.image_side
        s = cfg.spatial_sizes()  # [28, 14, 7, 4]

        self.proj = Dense("g/proj", 2 * cfg.n_modes, side * side, rng)
        self.enc1 = Conv("g/enc1", 1, ef, rng, k=k, stride=2)
        self.enc2 = Conv("g/enc2", ef, ef, rng, k=k, stride=2)
        self.enc3 = Conv("g/enc3", ef, ef, rng, k=k, stride=2)

        self.up1 = ConvTranspose("g/up1", ef, df, rng, k=k)
        self.ag1 = AttentionGate("g/ag1", ef, ef, rng)
        self.dec1 = Conv("g/dec1", df + ef, df, rng, k=k)
        self.up2 = ConvTranspose("g/up2", df, df, rng, k=k)
        self.ag2 = AttentionGate("g/ag2", df, ef, rng)
        self.dec2 = Conv("g/dec2", df + ef, df, rng, k=k)
        self.up3 = ConvTranspose("g/up3", df, df, rng, k=k)
        self.ag3 = AttentionGate("g/ag3", df, 1, rng)
        self.dec3 = Conv("g/dec3", df + 1, df, rng, k=k)
        self.img_head = Conv("g/img_head", df, 1, rng, k=1)

        self.cls1 = Conv("g/cls1", ef, cf, rng, k=k)
        self.cls2 = Conv("g/cls2", cf, cf, rng, k=k)
        self.cls_head = Dense("g/cls_head", s[3] * s[3] * cf, cfg.n_classes, rng)
        self._sizes = s

    def forward(self, x: Tensor) -> tuple:
        """Normalized split measurements [b, M, 2] -> (image [b,28,28], probs [b,10])."""
        cfg = self.cfg
        if x.ndim != 3 or x.shape[1:] != (cfg.n_modes, 2):
            raise ShapeError(f"generator input must be [batch, {cfg.n_modes}, 2], got {x.shape}")
        b = x.shape[0]
        s = self._sizes

        f0 = T.relu(self.proj(T.reshape(x, (b, 2 * cfg.n_modes))))
        f0 = T.reshape(f0, (b, s[0], s[0], 1))
        e1 = T.relu(self.enc1(f0))
        e2 = T.relu(self.enc2(e1))
        e3 = T.relu(self.enc3(e2))

        c = T.relu(self.cls1(e3))
        c = T.relu(self.cls2(c))
        probs = T.softmax(self.cls_head(T.reshape(c, (b, -(-c.size // b)))))

        d = T.relu(self.up1(e3, (s[2], s[2])))
        gated = self.ag1(T.upsample_nearest(e3, (s[2], s[2])), e2)
        d = T.relu(self.dec1(T.concat([d, gated], axis=3)))

        d2 = T.relu(self.up2(d, (s[1], s[1])))
        gated = self.ag2(T.upsample_nearest(d, (s[1], s[1])), e1)
        d2 = T.relu(self.dec2(T.concat([d2, gated], axis=3)))

        d3 = T.relu(self.up3(d2, (s[0], s[0])))
        gated = self.ag3(T.upsample_nearest(d2, (s[0], s[0])), f0)
        d3 = T.relu(self.dec3(T.concat([d3, gated], axis=3)))

        img = T.sigmoid(self.img_head(d3))
        return T.reshape(img, (b, s[0], s[0])), probs

    def params(self) -> dict:
        out = {}
        for layer in (self.proj, self.enc1, self.enc2, self.enc3,
                      self.up1, self.ag1, self.dec1, self.up2, self.ag2, self.dec2,
                      self.up3, self.ag3, self.dec3, self.img_head,
                      self.cls1, self.cls2, self.cls_head):
            out.update(layer.params())
        return out

    def decoder_params(self) -> dict:
        out = {}
        for layer in (self.up1, self.ag1, self.dec1, self.up2, self.ag2, self.dec2,
                      self.up3, self.ag3, self.dec3):
            out.update(layer.params())
        return out


class Discriminator:
    """Encoder-shaped stack ending in one sigmoid authenticity score."""

    def __init__(self, cfg: GanConfig, rng):
        rng = np.random.default_rng(rng)
        self.cfg = cfg
        ef, k = cfg.encoder_filters, cfg.kernel_size
        s = cfg.spatial_sizes()
        self.enc1 = Conv("d/enc1", 1, ef, rng, k=k, stride=2)
        self.enc2 = Conv("d/enc2", ef, ef, rng, k=k, stride=2)
        self.enc3 = Conv("d/enc3", ef, ef, rng, k=k, stride=2)
        self.head = Dense("d/head", s[3] * s[3] * ef, 1, rng)

    def forward(self, image: Tensor) -> Tensor:
        """Image batch [b, side, side] -> authenticity probability [b, 1]."""
        side = self.cfg.image_side
        if image.ndim != 3 or image.shape[1:] != (side, side):
            raise ShapeError(f"discriminator input must be [batch, {side}, {side}], "
                             f"got {image.shape}")
        b = image.shape[0]
        h = T.reshape(image, (b, side, side, 1))
        h = T.relu(self.enc1(h))
        h = T.relu(self.enc2(h))
        h = T.relu(self.enc3(h))
        return T.sigmoid(self.head(T.reshape(h, (b, -(-h.size // b)))))

    def params(self) -> dict:
        out = {}
        for layer in (self.enc1, self.enc2, self.enc3, self.head):
            out.update(layer.params())
        return out


def param_count(params: dict) -> int:
    return sum(p.size for p in params.values())
