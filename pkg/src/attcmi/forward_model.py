"""Sensing-matrix synthesis and the linear measurement model g = H rho + n.

The sensing matrix is a synthetic surrogate for a measured frequency-diverse
aperture: either i.i.d. circular complex Gaussian entries ("gaussian" mode) or
a scalar Green's-function model ("greens" mode) where each measurement mode is
the product of randomly-weighted transmit and receive fields propagated to the
scene plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor

C0 = 299_792_458.0  # speed of light, m/s


class SingularityError(ValueError):
    """Propagation distance collapsed to zero in greens mode."""


class DegenerateDataError(ValueError):
    """Dataset statistics are unusable (e.g. a constant channel)."""


@dataclass
class SceneConfig:
    """Discretization of the imaged plane: N = pixels_x * pixels_y."""

    pixels_x: int = 28
    pixels_y: int = 28
    pixel_pitch: float = 0.01  # meters
    standoff: float = 0.5      # scene-plane distance from the aperture, meters

    @property
    def n_pixels(self) -> int:
        return self.pixels_x * self.pixels_y

    def validate(self) -> None:
        if self.pixels_x < 1 or self.pixels_y < 1:
            raise ValueError(f"pixel counts must be positive, got {self.pixels_x}x{self.pixels_y}")
        if self.pixel_pitch <= 0:
            raise ValueError(f"pixel_pitch must be positive, got {self.pixel_pitch}")
        if self.standoff < 0:
            raise ValueError(f"standoff must be non-negative, got {self.standoff}")

    def pixel_positions(self) -> np.ndarray:
        """[N, 3] pixel centers; grid centered on the axis at z = standoff."""
        xs = (np.arange(self.pixels_x) - (self.pixels_x - 1) / 2.0) * self.pixel_pitch
        ys = (np.arange(self.pixels_y) - (self.pixels_y - 1) / 2.0) * self.pixel_pitch
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        return np.column_stack([gx.ravel(), gy.ravel(),
                                np.full(self.n_pixels, self.standoff)])


@dataclass
class ApertureConfig:
    """Measurement-mode layout: M = n_freqs * n_positions.

    Defaults follow the X-band hybrid geometry: 64 frequencies over 8-12 GHz
    at 16 aperture positions on an 8 cm grid, 1024 modes in total.
    """

    n_freqs: int = 64
    f_min: float = 8e9
    f_max: float = 12e9
    n_positions: int = 16
    position_pitch: float = 0.08  # meters
    aperture_points: int = 100    # random radiator samples per panel
    panel_extent: float = 0.12    # panel side length, meters
    synthesis_mode: str = "gaussian"

    @property
    def n_modes(self) -> int:
        return self.n_freqs * self.n_positions

    def validate(self) -> None:
        if self.n_freqs < 1 or self.n_positions < 1 or self.aperture_points < 1:
            raise ValueError("mode counts must be positive")
        if not self.f_min < self.f_max:
            raise ValueError(f"need f_min < f_max, got {self.f_min} >= {self.f_max}")
        if self.position_pitch <= 0 or self.panel_extent <= 0:
            raise ValueError("pitch and panel extent must be positive")
        if self.synthesis_mode not in ("gaussian", "greens"):
            raise ValueError(f"unknown synthesis mode {self.synthesis_mode!r}")

    def frequencies(self) -> np.ndarray:
        return np.linspace(self.f_min, self.f_max, self.n_freqs)

    def position_grid(self) -> np.ndarray:
        """[n_positions, 2] aperture center (x, y), near-square centered grid."""
        rows = int(round(np.sqrt(self.n_positions)))
        while self.n_positions % rows:
            rows -= 1
        cols = self.n_positions // rows
        xs = (np.arange(cols) - (cols - 1) / 2.0) * self.position_pitch
        ys = (np.arange(rows) - (rows - 1) / 2.0) * self.position_pitch
        gx, gy = np.meshgrid(xs, ys, indexing="xy")
        return np.column_stack([gx.ravel(), gy.ravel()])


def greens_field(points: np.ndarray, weights: np.ndarray, targets: np.ndarray,
                 freq: float) -> np.ndarray:
    """Scalar field of weighted point sources propagated to target positions.

    field[n] = sum_q weights[q] * exp(-j*2*pi*f/c * r_qn) / (4*pi*r_qn).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    weights = np.asarray(weights, dtype=complex)
    r = np.linalg.norm(targets[None, :, :] - points[:, None, :], axis=2)  # [Q, N]
    if np.any(r < 1e-12):
        raise SingularityError("source point coincides with a scene pixel")
    k0 = 2.0 * np.pi * freq / C0
    return (weights[:, None] * np.exp(-1j * k0 * r) / (4.0 * np.pi * r)).sum(axis=0)


def synthesize_H(scene: SceneConfig, aperture: ApertureConfig, seed) -> np.ndarray:
    """Sensing matrix [M, N], complex128; deterministic for a fixed seed.

    Mode ordering is position-major: mode m = position * n_freqs + freq_index.
    """
    scene.validate()
    aperture.validate()
    rng = np.random.default_rng(seed)
    m, n = aperture.n_modes, scene.n_pixels
    if aperture.synthesis_mode == "gaussian":
        h = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
        return h / np.sqrt(2.0)

    if scene.standoff <= 0:
        raise SingularityError("greens mode needs a positive scene standoff")
    pixels = scene.pixel_positions()
    freqs = aperture.frequencies()
    centers = aperture.position_grid()
    half = aperture.panel_extent / 2.0
    q = aperture.aperture_points
    h = np.empty((m, n), dtype=complex)
    for p, (cx, cy) in enumerate(centers):
        for k, f in enumerate(freqs):
            row = np.ones(n, dtype=complex)
            for _panel in range(2):  # independent Tx and Rx panels
                pts = np.column_stack([
                    rng.uniform(cx - half, cx + half, q),
                    rng.uniform(cy - half, cy + half, q),
                    np.zeros(q),
                ])
                w = (rng.standard_normal(q) + 1j * rng.standard_normal(q)) / np.sqrt(2.0)
                row = row * greens_field(pts, w, pixels, f)
            h[p * aperture.n_freqs + k] = row
    return h


def forward_measure(h: np.ndarray, rho: np.ndarray, snr_db=None, seed=None) -> np.ndarray:
    """Back-scattered measurement g = H rho + n.

    Noise is circular complex Gaussian scaled so the expected noise energy
    satisfies 10*log10(||H rho||^2 / E||n||^2) = snr_db; snr_db=None disables it.
    """
    rho = np.asarray(rho, dtype=float).reshape(-1)
    if h.shape[1] != rho.size:
        raise ShapeError(f"H has {h.shape[1]} columns but rho has {rho.size} entries")
    g = h @ rho.astype(complex)
    if snr_db is None:
        return g
    rng = np.random.default_rng(seed)
    m = h.shape[0]
    sig = float(np.sum(np.abs(g) ** 2))
    var = sig * 10.0 ** (-snr_db / 10.0) / m
    n = np.sqrt(var / 2.0) * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
    return g + n


def split_complex(g: np.ndarray) -> Tensor:
    """Complex vector -> real Tensor [M, 2] with columns (re, im)."""
    g = np.asarray(g, dtype=complex).reshape(-1)
    return Tensor(np.column_stack([g.real, g.imag]))


def merge_complex(t) -> np.ndarray:
    """Inverse of :func:`split_complex`."""
    d = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=float)
    return d[:, 0] + 1j * d[:, 1]


@dataclass
class NormStats:
    """Per-channel statistics of a training set, reused verbatim at test time."""

    mean: np.ndarray  # shape [2]
    std: np.ndarray   # shape [2]


def normalize_dataset(inputs: np.ndarray) -> tuple:
    """Standardize stacked split measurements [count, M, 2] to zero mean, unit
    variance per channel; returns (normalized array, NormStats)."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 3 or x.shape[0] < 2:
        raise ValueError(f"need a stacked [count>=2, M, 2] array, got shape {x.shape}")
    mean = x.mean(axis=(0, 1))
    std = x.std(axis=(0, 1))
    if np.any(std <= 0):
        ch = int(np.argmin(std))
        raise DegenerateDataError(f"channel {ch} is constant (std=0); cannot normalize")
    return (x - mean) / std, NormStats(mean=mean, std=std)


def apply_normalization(inputs: np.ndarray, stats: NormStats) -> np.ndarray:
    return (np.asarray(inputs, dtype=float) - stats.mean) / stats.std
