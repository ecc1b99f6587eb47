"""Alternating adversarial training, checkpointing, deterministic orchestration.

Each step updates the discriminator first (generator frozen), then the
generator plus the uncertainty scalars (discriminator frozen). The generator
forward pass is recorded once per step and shared: the generator's parameters
do not change during the discriminator update, so only the discriminator is
re-run on the fake images for the generator objective.

Checkpoint container: magic "ATTG", little-endian, u32 version, then repeated
records {u32 name_len, name bytes, u8 rank, u32 dims..., f64 data...}. The
records hold every trainable tensor, both Adam moment sets and step counters,
normalization statistics, the RNG state, and the epoch counter; reloading
reproduces training bitwise in single-threaded mode.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as lo
from . import tensor as T
from .attgan import Discriminator, GanConfig, Generator
from .data_io import FormatError
from .forward_model import NormStats, normalize_dataset, split_complex
from .losses import LossBreakdown, UncertaintyParams
from .optim import Adam
from .tensor import Tensor

CHECKPOINT_MAGIC = b"ATTG"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite; the message names the first non-finite tensor."""


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_l1: float = 100.0
    seed: int = 0
    d_steps_per_g_step: int = 1
    snapshot_every: int = 0  # epochs between snapshots; 0 disables
    gan: GanConfig = field(default_factory=GanConfig)

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.d_steps_per_g_step < 1:
            raise ValueError("epochs must be >= 0, batch_size and d step ratio >= 1")
        if self.lr <= 0 or self.lambda_l1 < 0:
            raise ValueError("lr must be positive and lambda non-negative")


@dataclass
class TrainerState:
    """Everything a checkpoint persists."""

    cfg: GanConfig
    generator: Generator
    discriminator: Discriminator
    uncertainty: UncertaintyParams
    opt_g: Adam
    opt_d: Adam
    norm: NormStats
    rng: np.random.Generator
    seed: int
    epoch: int = 0
    step: int = 0

    def g_params(self) -> dict:
        return {**self.generator.params(), **self.uncertainty.named()}

    def d_params(self) -> dict:
        return self.discriminator.params()


def init_state(train_cfg: TrainConfig, norm: NormStats) -> TrainerState:
    gan = train_cfg.gan
    seed = train_cfg.seed
    generator = Generator(gan, rng=np.random.default_rng(np.random.SeedSequence([seed, 1])))
    discriminator = Discriminator(gan, rng=np.random.default_rng(np.random.SeedSequence([seed, 2])))
    uncertainty = UncertaintyParams.fresh(0.0)
    state = TrainerState(
        cfg=gan, generator=generator, discriminator=discriminator,
        uncertainty=uncertainty,
        opt_g=Adam({}, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps),
        opt_d=Adam({}, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps),
        norm=norm, rng=np.random.default_rng(np.random.SeedSequence([seed, 3])),
        seed=seed,
    )
    state.opt_g = Adam(state.g_params(), train_cfg.lr, train_cfg.beta1,
                       train_cfg.beta2, train_cfg.adam_eps)
    state.opt_d = Adam(state.d_params(), train_cfg.lr, train_cfg.beta1,
                       train_cfg.beta2, train_cfg.adam_eps)
    return state


def _first_non_finite(*graphs) -> str:
    for graph in graphs:
        for i, node in enumerate(graph.nodes):
            if not np.all(np.isfinite(node.out.data)):
                return f"{node.op} (node {i})"
    return "unknown tensor"


def train_step(batch, state: TrainerState, cfg: TrainConfig) -> LossBreakdown:
    """One alternating update; returns the full loss breakdown.

    ``batch`` is (x, rho, labels): normalized split measurements [b, M, 2],
    reference images [b, side, side], integer labels [b].
    """
    x_raw, rho_raw, labels = batch
    x = x_raw if isinstance(x_raw, Tensor) else Tensor(x_raw)
    real = rho_raw if isinstance(rho_raw, Tensor) else Tensor(rho_raw)

    g_graph = T.Graph()
    with g_graph:
        img, probs = state.generator.forward(x)

    # discriminator phase: generator outputs are detached constants
    fake_const = Tensor(img.data)
    l_d_value = 0.0
    for _ in range(cfg.d_steps_per_g_step):
        d_graph = T.Graph()
        with d_graph:
            d_fake = state.discriminator.forward(fake_const)
            d_real = state.discriminator.forward(real)
            l_d = lo.discriminator_loss(d_fake, d_real)
        l_d_value = l_d.item()
        if not np.isfinite(l_d_value):
            raise TrainingDivergedError(
                f"discriminator loss is {l_d_value}; first non-finite tensor: "
                f"{_first_non_finite(d_graph, g_graph)}")
        T.zero_grad(state.d_params().values())
        T.backward(l_d)
        state.opt_d.step()

    # generator phase: re-run only the (updated) discriminator on the fakes
    with g_graph:
        d_fake = state.discriminator.forward(img)
        l_cat = lo.categorical_loss(probs, labels)
        l_img, l_l1, l_adv = lo.image_loss_parts(img, real, d_fake, cfg.lambda_l1)
        l_g = lo.generator_total(l_cat, l_img, state.uncertainty)
    if not np.isfinite(l_g.item()):
        raise TrainingDivergedError(
            f"generator loss is {l_g.item()}; first non-finite tensor: "
            f"{_first_non_finite(g_graph)}")
    T.zero_grad(list(state.g_params().values()) + list(state.d_params().values()))
    T.backward(l_g)
    state.opt_g.step()

    state.step += 1
    return LossBreakdown(
        l_d=l_d_value, l_cat=l_cat.item(), l_l1=l_l1.item(), l_adv=l_adv.item(),
        l_img=l_img.item(), l_g_total=l_g.item(),
        sigma1=state.uncertainty.sigma1, sigma2=state.uncertainty.sigma2,
    )


LOG_HEADER = "step,epoch,l_d,l_cat,l_l1,l_adv,l_img,l_g,sigma1,sigma2"


def log_row(step: int, epoch: int, b: LossBreakdown) -> str:
    vals = [b.l_d, b.l_cat, b.l_l1, b.l_adv, b.l_img, b.l_g_total, b.sigma1, b.sigma2]
    return f"{step},{epoch}," + ",".join(repr(v) for v in vals)


def fit(dataset, cfg: TrainConfig, state: TrainerState = None, out_dir=None,
        log_cb=None):
    """Train on a data_io.Dataset; returns (state, per-step LossBreakdown list).

    Mini-batches are reshuffled every epoch with an RNG derived from
    (seed, epoch), so a run resumed from a checkpoint consumes exactly the
    same batch sequence as an uninterrupted one. When ``out_dir`` is given,
    the per-step CSV log and periodic snapshots are written there.
    """
    cfg.validate()
    if dataset.count < 1:
        raise ValueError("dataset is empty")
    x_all = np.stack([split_complex(g).data for g in dataset.g])
    if state is None:
        x_norm, norm = normalize_dataset(x_all)
        state = init_state(cfg, norm)
    else:
        x_norm = (x_all - state.norm.mean) / state.norm.std
        for opt in (state.opt_g, state.opt_d):  # hyperparams travel in cfg
            opt.lr, opt.beta1, opt.beta2, opt.eps = \
                cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps
    rho = dataset.rho_square()
    labels = dataset.labels

    rows = []
    out_dir = None if out_dir is None else Path(out_dir)
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.csv"
        fresh = state.step == 0 or not log_path.exists()
        log_file = open(log_path, "w" if fresh else "a")
        if fresh:
            log_file.write(LOG_HEADER + "\n")

    try:
        for epoch in range(state.epoch, cfg.epochs):
            order = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, 4, epoch])).permutation(dataset.count)
            for lo_idx in range(0, dataset.count, cfg.batch_size):
                sel = order[lo_idx : lo_idx + cfg.batch_size]
                breakdown = train_step((x_norm[sel], rho[sel], labels[sel]), state, cfg)
                rows.append(breakdown)
                if log_file is not None:
                    log_file.write(log_row(state.step, epoch, breakdown) + "\n")
                if log_cb is not None:
                    log_cb(state.step, epoch, breakdown)
            state.epoch = epoch + 1
            if out_dir is not None and cfg.snapshot_every and \
                    (epoch + 1) % cfg.snapshot_every == 0 and epoch + 1 < cfg.epochs:
                save_checkpoint(out_dir / f"checkpoint_epoch{epoch + 1:04d}.attg", state)
    finally:
        if log_file is not None:
            log_file.close()
    return state, rows


def normalize_inputs(state: TrainerState, g: np.ndarray) -> np.ndarray:
    """Split complex measurements [count, M] and apply the stored statistics."""
    x = np.stack([split_complex(row).data for row in g])
    return (x - state.norm.mean) / state.norm.std


def generator_infer(state: TrainerState, x_norm: np.ndarray,
                    batch_size: int = 64) -> tuple:
    """Batched no-grad inference: returns (images [n,side,side], probs [n,10])."""
    images, probs = [], []
    with T.no_grad():
        for lo_idx in range(0, x_norm.shape[0], batch_size):
            img, p = state.generator.forward(Tensor(x_norm[lo_idx : lo_idx + batch_size]))
            images.append(img.data)
            probs.append(p.data)
    return np.concatenate(images), np.concatenate(probs)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------


def _rng_to_words(rng: np.random.Generator) -> np.ndarray:
    st = rng.bit_generator.state
    words = []
    for val in (st["state"]["state"], st["state"]["inc"]):
        words.extend((val >> (32 * i)) & 0xFFFFFFFF for i in range(4))
    words.append(1 if st["has_uint32"] else 0)
    words.append(st["uinteger"])
    return np.array(words, dtype=np.float64)


def _rng_from_words(words: np.ndarray) -> np.random.Generator:
    ints = [int(w) for w in words]
    state = sum(ints[i] << (32 * i) for i in range(4))
    inc = sum(ints[4 + i] << (32 * i) for i in range(4))
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": state, "inc": inc},
        "has_uint32": ints[8],
        "uinteger": ints[9],
    }
    return rng


def _records(state: TrainerState) -> list:
    cfg = state.cfg
    recs = [
        ("cfg/n_modes", np.float64(cfg.n_modes)),
        ("cfg/image_side", np.float64(cfg.image_side)),
        ("cfg/encoder_filters", np.float64(cfg.encoder_filters)),
        ("cfg/decoder_filters", np.float64(cfg.decoder_filters)),
        ("cfg/classifier_filters", np.float64(cfg.classifier_filters)),
        ("cfg/kernel_size", np.float64(cfg.kernel_size)),
        ("cfg/n_classes", np.float64(cfg.n_classes)),
        ("meta/epoch", np.float64(state.epoch)),
        ("meta/step", np.float64(state.step)),
        ("meta/seed", np.float64(state.seed)),
        ("norm/mean", state.norm.mean),
        ("norm/std", state.norm.std),
        ("rng/state", _rng_to_words(state.rng)),
    ]
    for name, p in state.g_params().items():
        recs.append((name, p.data))
    for name, p in state.d_params().items():
        recs.append((name, p.data))
    for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        recs.append((f"{prefix}/t", np.float64(opt.t)))
        for name in opt.params:
            recs.append((f"{prefix}/m/{name}", opt.m[name]))
            recs.append((f"{prefix}/v/{name}", opt.v[name]))
    return recs


def save_checkpoint(path, state: TrainerState) -> None:
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, arr in _records(state):
            arr = np.asarray(arr, dtype=np.float64)
            encoded = name.encode()
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.astype("<f8").tobytes())


def _read_records(data: bytes) -> dict:
    if len(data) < 8:
        raise FormatError("truncated checkpoint header", 0)
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {data[:4]!r}", 0)
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint format version {version}", 4)
    recs = {}
    off = 8
    while off < len(data):
        if off + 4 > len(data):
            raise FormatError("truncated record name length", off)
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + name_len + 1 > len(data):
            raise FormatError("truncated record name", off)
        name = data[off : off + name_len].decode()
        off += name_len
        rank = data[off]
        off += 1
        if off + 4 * rank > len(data):
            raise FormatError(f"truncated dims of record {name!r}", off)
        dims = struct.unpack_from(f"<{rank}I", data, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        if off + 8 * n > len(data):
            raise FormatError(f"truncated data of record {name!r}", off)
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(dims)
        recs[name] = arr.copy()
        off += 8 * n
    return recs


def load_checkpoint(path) -> TrainerState:
    """Rebuild the full trainer state; no partial mutation on malformed input."""
    with open(path, "rb") as f:
        recs = _read_records(f.read())

    def take(name):
        if name not in recs:
            raise FormatError(f"checkpoint is missing record {name!r}", 0)
        return recs[name]

    gan = GanConfig(
        n_modes=int(take("cfg/n_modes")), image_side=int(take("cfg/image_side")),
        encoder_filters=int(take("cfg/encoder_filters")),
        decoder_filters=int(take("cfg/decoder_filters")),
        classifier_filters=int(take("cfg/classifier_filters")),
        kernel_size=int(take("cfg/kernel_size")), n_classes=int(take("cfg/n_classes")),
    )
    cfg = TrainConfig(gan=gan, seed=int(take("meta/seed")))
    norm = NormStats(mean=take("norm/mean"), std=take("norm/std"))
    state = init_state(cfg, norm)
    state.epoch = int(take("meta/epoch"))
    state.step = int(take("meta/step"))
    state.rng = _rng_from_words(take("rng/state"))
    for name, p in {**state.g_params(), **state.d_params()}.items():
        arr = take(name)
        if arr.shape != p.data.shape:
            raise FormatError(f"record {name!r} has shape {arr.shape}, "
                              f"expected {p.data.shape}", 0)
        p.data[...] = arr
    for prefix, opt in (("opt_g", state.opt_g), ("opt_d", state.opt_d)):
        opt.t = int(take(f"{prefix}/t"))
        for name in opt.params:
            opt.m[name][...] = take(f"{prefix}/m/{name}")
            opt.v[name][...] = take(f"{prefix}/v/{name}")
    return state
