"""Dataset construction and persistence.

Three binary formats:

* IDX (read-only ingestion): big-endian, magic 0x00000803 for images /
  0x00000801 for labels, as published for MNIST.
* matrix container "CMIM": magic, u32 version, u32 M, u32 N, then M*N
  complex128 entries (little-endian, interleaved re/im, row-major).
* dataset container "CMID": magic, u32 version, u32 M, u32 N, u32 count,
  f64 snr_db (NaN when noiseless), 32-byte SHA-256 of the matrix file,
  u64 seed; then per sample M complex128 (g), N f64 (rho), u32 label.

All native containers are little-endian; IDX is converted once at ingestion.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .forward_model import forward_measure
from .tensor import ShapeError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MATRIX_MAGIC = b"CMIM"
DATASET_MAGIC = b"CMID"
FORMAT_VERSION = 1


class FormatError(ValueError):
    """Malformed binary input; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _need(data: bytes, offset: int, count: int, what: str) -> None:
    if len(data) < offset + count:
        raise FormatError(f"truncated input: expected {count} bytes for {what}", offset)


# ---------------------------------------------------------------------------
# IDX ingestion
# ---------------------------------------------------------------------------


def parse_idx_images(data: bytes) -> np.ndarray:
    """IDX image payload -> float array [count, 28, 28] scaled to [0, 1]."""
    _need(data, 0, 4, "image magic")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}", 0)
    _need(data, 0, 16, "image header")
    _, count, rows, cols = struct.unpack_from(">IIII", data, 0)
    if (rows, cols) != (28, 28):
        raise FormatError(f"expected 28x28 images, header says {rows}x{cols}", 8)
    payload = count * rows * cols
    _need(data, 16, payload, f"{count} images")
    if len(data) != 16 + payload:
        raise FormatError(f"{len(data) - 16 - payload} trailing bytes after image payload",
                          16 + payload)
    pixels = np.frombuffer(data, dtype=np.uint8, count=payload, offset=16)
    return pixels.reshape(count, 28, 28).astype(np.float64) / 255.0


def parse_idx_labels(data: bytes) -> np.ndarray:
    """IDX label payload -> int array [count]."""
    _need(data, 0, 4, "label magic")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}", 0)
    _need(data, 0, 8, "label header")
    _, count = struct.unpack_from(">II", data, 0)
    _need(data, 8, count, f"{count} labels")
    if len(data) != 8 + count:
        raise FormatError(f"{len(data) - 8 - count} trailing bytes after label payload",
                          8 + count)
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise FormatError(f"label {labels.max()} out of range 0-9",
                          8 + int(np.argmax(labels > 9)))
    return labels


# ---------------------------------------------------------------------------
# synthetic block-glyph targets
# ---------------------------------------------------------------------------

_GLYPHS = [
    (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    (".###.", "#...#", "....#", "..##.", ".#...", "#....", "#####"),
    (".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."),
    ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    (".###.", "#....", "####.", "#...#", "#...#", "#...#", ".###."),
    ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
]

_GLYPH_H, _GLYPH_W = 7, 5


def _glyph_bitmap(digit: int) -> np.ndarray:
    rows = _GLYPHS[digit]
    return np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in rows])


def synth_targets(count: int, seed) -> tuple:
    """Block-digit glyphs at random position and scale on a 28x28 grid.

    Values are exactly {0, 1}; the label sequence is a shuffled round-robin
    deal so class counts stay within one of each other for any count.
    Returns (images [count, 28, 28], labels [count]).
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    labels = np.arange(count, dtype=np.int64) % 10
    rng.shuffle(labels)
    images = np.zeros((count, 28, 28))
    for i, digit in enumerate(labels):
        scale = int(rng.integers(2, 4))  # 2 or 3
        glyph = np.kron(_glyph_bitmap(int(digit)), np.ones((scale, scale)))
        gh, gw = glyph.shape
        top = int(rng.integers(0, 28 - gh + 1))
        left = int(rng.integers(0, 28 - gw + 1))
        images[i, top:top + gh, left:left + gw] = glyph
    return images, labels


# ---------------------------------------------------------------------------
# matrix container
# ---------------------------------------------------------------------------


def save_matrix(path, h: np.ndarray) -> None:
    h = np.ascontiguousarray(h, dtype=np.complex128)
    m, n = h.shape
    with open(path, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, m, n))
        f.write(h.astype("<c16").tobytes())


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    _need(data, 0, 16, "matrix header")
    if data[:4] != MATRIX_MAGIC:
        raise FormatError(f"bad matrix magic {data[:4]!r}", 0)
    version, m, n = struct.unpack_from("<III", data, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported matrix format version {version}", 4)
    payload = m * n * 16
    _need(data, 16, payload, f"{m}x{n} complex matrix")
    if len(data) != 16 + payload:
        raise FormatError(f"{len(data) - 16 - payload} trailing bytes", 16 + payload)
    return np.frombuffer(data, dtype="<c16", count=m * n, offset=16).reshape(m, n).copy()


def file_sha256(path) -> bytes:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.digest()


# ---------------------------------------------------------------------------
# dataset container
# ---------------------------------------------------------------------------


@dataclass
class Sample:
    g: np.ndarray      # complex, length M
    rho: np.ndarray    # real image, [py, px] in [0, 1]
    label: int


@dataclass
class Dataset:
    g: np.ndarray        # [count, M] complex128
    rho: np.ndarray      # [count, N] float64
    labels: np.ndarray   # [count] int64
    snr_db: float | None
    h_hash: bytes
    seed: int

    @property
    def count(self) -> int:
        return self.g.shape[0]

    @property
    def n_modes(self) -> int:
        return self.g.shape[1]

    @property
    def n_pixels(self) -> int:
        return self.rho.shape[1]

    def rho_square(self) -> np.ndarray:
        side = int(round(np.sqrt(self.n_pixels)))
        if side * side != self.n_pixels:
            raise ShapeError(f"{self.n_pixels} pixels is not a square image")
        return self.rho.reshape(self.count, side, side)

    def sample(self, i: int) -> Sample:
        return Sample(g=self.g[i], rho=self.rho_square()[i], label=int(self.labels[i]))


_HEADER = struct.Struct("<4sIIIId32sQ")


def build_dataset(images: np.ndarray, labels: np.ndarray, h: np.ndarray,
                  snr_db, seed: int, path, h_hash: bytes = b"\0" * 32) -> Dataset:
    """Simulate g = H rho + n for every image and write the container.

    Noise uses a per-sample RNG stream derived from (seed, sample index), so
    the output is identical no matter how samples would be parallelized.
    """
    images = np.asarray(images, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    count = images.shape[0]
    rho = images.reshape(count, -1)
    if rho.shape[1] != h.shape[1]:
        raise ShapeError(f"images have {rho.shape[1]} pixels but H has {h.shape[1]} columns")
    if labels.shape != (count,):
        raise ShapeError(f"{count} images but {labels.shape} labels")
    g = np.empty((count, h.shape[0]), dtype=np.complex128)
    for i in range(count):
        stream = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        g[i] = forward_measure(h, rho[i], snr_db=snr_db, seed=stream)
    ds = Dataset(g=g, rho=rho, labels=labels, snr_db=snr_db, h_hash=h_hash,
                 seed=int(seed))
    save_dataset(path, ds)
    return ds


def save_dataset(path, ds: Dataset) -> None:
    snr = float("nan") if ds.snr_db is None else float(ds.snr_db)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(DATASET_MAGIC, FORMAT_VERSION, ds.n_modes, ds.n_pixels,
                             ds.count, snr, ds.h_hash, ds.seed))
        for i in range(ds.count):
            f.write(ds.g[i].astype("<c16").tobytes())
            f.write(ds.rho[i].astype("<f8").tobytes())
            f.write(struct.pack("<I", int(ds.labels[i])))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        data = f.read()
    _need(data, 0, _HEADER.size, "dataset header")
    magic, version, m, n, count, snr, h_hash, seed = _HEADER.unpack_from(data, 0)
    if magic != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset format version {version}", 4)
    rec = m * 16 + n * 8 + 4
    _need(data, _HEADER.size, rec * count, f"{count} samples")
    if len(data) != _HEADER.size + rec * count:
        raise FormatError(f"{len(data) - _HEADER.size - rec * count} trailing bytes",
                          _HEADER.size + rec * count)
    g = np.empty((count, m), dtype=np.complex128)
    rho = np.empty((count, n))
    labels = np.empty(count, dtype=np.int64)
    off = _HEADER.size
    for i in range(count):
        g[i] = np.frombuffer(data, dtype="<c16", count=m, offset=off)
        off += m * 16
        rho[i] = np.frombuffer(data, dtype="<f8", count=n, offset=off)
        off += n * 8
        (label,) = struct.unpack_from("<I", data, off)
        if label > 9:
            raise FormatError(f"label {label} out of range 0-9", off)
        labels[i] = label
        off += 4
    return Dataset(g=g, rho=rho, labels=labels,
                   snr_db=None if np.isnan(snr) else snr, h_hash=h_hash, seed=seed)


# ---------------------------------------------------------------------------
# PGM output
# ---------------------------------------------------------------------------


def write_pgm(path, image: np.ndarray) -> None:
    """Binary P5 PGM, maxval 255; values clamped to [0, 1] then scaled."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ShapeError(f"PGM needs a 2-d image, got shape {img.shape}")
    u8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(u8.tobytes())
