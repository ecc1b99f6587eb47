"""Command-line pipeline: matrix synthesis, dataset build, classical
reconstruction, training, evaluation, and the speed benchmark.

Every subcommand is seeded, validates its flags before any work, writes all
artifacts under --out-dir, and drops a manifest.json describing the run.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import classical as cl
from . import data_io as dio
from . import forward_model as fm
from . import metrics as mt
from . import trainer as tr
from .attgan import GanConfig


def _add_common(sub):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--threads", type=int, default=1,
                     help="BLAS thread cap; 1 is the bit-exact reference mode")
    sub.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attcmi",
        description="computational microwave imaging simulator + attention-gated GAN")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth-matrix", help="synthesize and store a sensing matrix")
    _add_common(p)
    p.add_argument("--mode", choices=("gaussian", "greens"), default="gaussian")
    p.add_argument("--pixels-x", type=int, default=28)
    p.add_argument("--pixels-y", type=int, default=28)
    p.add_argument("--pixel-pitch", type=float, default=0.01)
    p.add_argument("--standoff", type=float, default=0.5)
    p.add_argument("--freqs", type=int, default=64)
    p.add_argument("--f-min", type=float, default=8e9)
    p.add_argument("--f-max", type=float, default=12e9)
    p.add_argument("--positions", type=int, default=16)
    p.add_argument("--position-pitch", type=float, default=0.08)
    p.add_argument("--aperture-points", type=int, default=100)

    p = subs.add_parser("build-dataset", help="simulate measurements for a target set")
    _add_common(p)
    p.add_argument("--matrix", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--snr-db", type=float, default=None,
                   help="measurement SNR; omit for noiseless")
    p.add_argument("--source", choices=("synth", "idx"), default="synth")
    p.add_argument("--idx-images", help="IDX image file (source=idx)")
    p.add_argument("--idx-labels", help="IDX label file (source=idx)")

    p = subs.add_parser("recon-classical", help="matched filter / least squares over a dataset")
    _add_common(p)
    p.add_argument("--matrix", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--solver", choices=("mf", "ls"), default="ls")
    p.add_argument("--ls-iters", type=int, default=100)
    p.add_argument("--ls-tol", type=float, default=1e-6)
    p.add_argument("--tikhonov", type=float, default=0.0)
    p.add_argument("--max-samples", type=int, default=0, help="0 = all")

    p = subs.add_parser("train", help="train the reconstruction GAN")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--lambda", dest="lambda_l1", type=float, default=100.0)
    p.add_argument("--d-steps", type=int, default=1)
    p.add_argument("--snapshot-every", type=int, default=0)
    p.add_argument("--encoder-filters", type=int, default=256)
    p.add_argument("--decoder-filters", type=int, default=64)
    p.add_argument("--classifier-filters", type=int, default=128)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")

    p = subs.add_parser("evaluate", help="run generator inference and score it")
    _add_common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--matrix", help="adds a least-squares column to the sheet")
    p.add_argument("--sheet-samples", type=int, default=8)
    p.add_argument("--ls-iters", type=int, default=100)
    p.add_argument("--ls-tol", type=float, default=1e-6)

    p = subs.add_parser("benchmark", help="per-sample wall time: solver vs generator")
    _add_common(p)
    p.add_argument("--matrix", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ls-iters", type=int, default=100)
    p.add_argument("--ls-tol", type=float, default=0.0,
                   help="0 disables early stopping so every run does --ls-iters")
    p.add_argument("--bench-samples", type=int, default=20)
    return parser


def _manifest(args, out_dir: Path, t0: float, inputs: list, outputs: list) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "command"}
    doc = {
        "subcommand": args.command,
        "config": cfg,
        "seed": args.seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "wall_time_s": time.perf_counter() - t0,
    }
    (out_dir / "manifest.json").write_text(json.dumps(doc, indent=2, default=str) + "\n")


def _load_pair(args):
    h = dio.load_matrix(args.matrix)
    ds = dio.load_dataset(args.dataset)
    if ds.h_hash != dio.file_sha256(args.matrix):
        raise ValueError(f"dataset {args.dataset} was not built from matrix "
                         f"{args.matrix} (hash mismatch)")
    if ds.n_modes != h.shape[0] or ds.n_pixels != h.shape[1]:
        raise ValueError(f"dataset {ds.n_modes}x{ds.n_pixels} does not match "
                         f"matrix {h.shape}")
    return h, ds


def cmd_synth_matrix(args, out_dir: Path) -> list:
    scene = fm.SceneConfig(pixels_x=args.pixels_x, pixels_y=args.pixels_y,
                           pixel_pitch=args.pixel_pitch, standoff=args.standoff)
    aperture = fm.ApertureConfig(n_freqs=args.freqs, f_min=args.f_min, f_max=args.f_max,
                                 n_positions=args.positions,
                                 position_pitch=args.position_pitch,
                                 aperture_points=args.aperture_points,
                                 synthesis_mode=args.mode)
    h = fm.synthesize_H(scene, aperture, seed=args.seed)
    out = out_dir / "matrix.cmim"
    dio.save_matrix(out, h)
    print(f"wrote {out} ({h.shape[0]}x{h.shape[1]})")
    return [out]


def cmd_build_dataset(args, out_dir: Path) -> list:
    h = dio.load_matrix(args.matrix)
    if args.source == "synth":
        images, labels = dio.synth_targets(args.samples, seed=args.seed)
    else:
        if not args.idx_images or not args.idx_labels:
            raise ValueError("source=idx needs --idx-images and --idx-labels")
        images = dio.parse_idx_images(Path(args.idx_images).read_bytes())
        labels = dio.parse_idx_labels(Path(args.idx_labels).read_bytes())
        if images.shape[0] != labels.shape[0]:
            raise ValueError(f"{images.shape[0]} images vs {labels.shape[0]} labels")
        if args.samples and args.samples < images.shape[0]:
            keep = np.random.default_rng(args.seed).choice(
                images.shape[0], size=args.samples, replace=False)
            images, labels = images[keep], labels[keep]
    out = out_dir / "dataset.cmid"
    dio.build_dataset(images, labels, h, snr_db=args.snr_db, seed=args.seed,
                      path=out, h_hash=dio.file_sha256(args.matrix))
    print(f"wrote {out} ({images.shape[0]} samples, snr_db={args.snr_db})")
    return [out]


def cmd_recon_classical(args, out_dir: Path) -> list:
    h, ds = _load_pair(args)
    cfg = cl.SolverConfig(max_iters=args.ls_iters, rel_tol=args.ls_tol,
                          tikhonov_alpha=args.tikhonov)
    cfg.validate()
    count = ds.count if args.max_samples == 0 else min(args.max_samples, ds.count)
    side = int(round(np.sqrt(ds.n_pixels)))
    rows = ["index,label,iterations,residual,wall_time_s,nmse"]
    outputs = []
    for i in range(count):
        if args.solver == "mf":
            res = cl.matched_filter(h, ds.g[i])
        else:
            res = cl.solve_ls(h, ds.g[i], cfg)
        err = mt.nmse(res.rho_rec, ds.rho[i])
        rows.append(f"{i},{ds.labels[i]},{res.iterations_used},"
                    f"{res.residual_norm!r},{res.wall_time_s!r},{err!r}")
        img = res.rho_rec.reshape(side, side)
        peak = img.max()
        pgm = out_dir / f"recon_{i:04d}.pgm"
        dio.write_pgm(pgm, img / peak if peak > 0 else img)
        outputs.append(pgm)
    csv = out_dir / "recon.csv"
    csv.write_text("\n".join(rows) + "\n")
    nmses = [float(r.split(",")[5]) for r in rows[1:]]
    print(f"{args.solver} over {count} samples: mean NMSE {np.mean(nmses):.4f}")
    return [csv] + outputs


def cmd_train(args, out_dir: Path) -> list:
    ds = dio.load_dataset(args.dataset)
    side = int(round(np.sqrt(ds.n_pixels)))
    gan = GanConfig(n_modes=ds.n_modes, image_side=side,
                    encoder_filters=args.encoder_filters,
                    decoder_filters=args.decoder_filters,
                    classifier_filters=args.classifier_filters)
    cfg = tr.TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                         lambda_l1=args.lambda_l1, seed=args.seed,
                         d_steps_per_g_step=args.d_steps,
                         snapshot_every=args.snapshot_every, gan=gan)
    cfg.validate()
    state = tr.load_checkpoint(args.resume) if args.resume else None

    def progress(step, epoch, b):
        if not args.quiet and step % 10 == 0:
            print(f"step {step} epoch {epoch}: l_d={b.l_d:.4f} l_cat={b.l_cat:.4f} "
                  f"l_l1={b.l_l1:.4f} l_g={b.l_g_total:.4f}", flush=True)

    state, _ = tr.fit(ds, cfg, state=state, out_dir=out_dir, log_cb=progress)
    ckpt = out_dir / "checkpoint.attg"
    tr.save_checkpoint(ckpt, state)
    print(f"wrote {ckpt} (epoch {state.epoch}, step {state.step})")
    return [ckpt, out_dir / "train_log.csv"]


def cmd_evaluate(args, out_dir: Path) -> list:
    ds = dio.load_dataset(args.dataset)
    state = tr.load_checkpoint(args.checkpoint)
    if ds.n_modes != state.cfg.n_modes:
        raise ValueError(f"dataset has {ds.n_modes} modes, checkpoint expects "
                         f"{state.cfg.n_modes}")
    x = tr.normalize_inputs(state, ds.g)
    t0 = time.perf_counter()
    images, probs = tr.generator_infer(state, x)
    infer_time = (time.perf_counter() - t0) / ds.count
    pred = probs.argmax(axis=1)
    truth = ds.rho_square()
    nmses = [mt.nmse(images[i], truth[i]) for i in range(ds.count)]
    ssims = [mt.ssim(images[i], truth[i]) for i in range(ds.count)]
    report = mt.build_report(nmses, ssims, pred, ds.labels,
                             mean_inference_time_s=infer_time)

    outputs = []
    for i in range(ds.count):
        pgm = out_dir / f"recon_{i:04d}.pgm"
        dio.write_pgm(pgm, images[i])
        outputs.append(pgm)
    (out_dir / "report.txt").write_text(report.to_text())
    (out_dir / "report.csv").write_text(report.to_csv())
    labels_csv = out_dir / "predicted_labels.csv"
    labels_csv.write_text("index,true,predicted\n" + "\n".join(
        f"{i},{ds.labels[i]},{pred[i]}" for i in range(ds.count)) + "\n")
    conf = report.confusion.astype(float)
    dio.write_pgm(out_dir / "confusion.pgm", conf / max(conf.max(), 1.0))

    # side-by-side sheet: truth | generator | least squares (optional)
    k = min(args.sheet_samples, ds.count)
    ls_col = None
    if args.matrix:
        h, _ = _load_pair(args)
        cfg = cl.SolverConfig(max_iters=args.ls_iters, rel_tol=args.ls_tol)
        side = truth.shape[1]
        ls_col = []
        for i in range(k):
            rec = cl.solve_ls(h, ds.g[i], cfg).rho_rec.reshape(side, side)
            ls_col.append(rec / rec.max() if rec.max() > 0 else rec)
    sheet = _comparison_sheet(truth[:k], images[:k], ls_col)
    dio.write_pgm(out_dir / "sheet.pgm", sheet)
    outputs += [out_dir / "report.txt", out_dir / "report.csv", labels_csv,
                out_dir / "confusion.pgm", out_dir / "sheet.pgm"]
    print(report.to_text())
    return outputs


def _comparison_sheet(truth, recon, ls_col=None, gap: int = 2) -> np.ndarray:
    cols = [truth, recon] + ([np.stack(ls_col)] if ls_col is not None else [])
    k, side = truth.shape[0], truth.shape[1]
    width = len(cols) * side + (len(cols) - 1) * gap
    sheet = np.ones((k * side + (k - 1) * gap, width))
    for i in range(k):
        r0 = i * (side + gap)
        for c, col in enumerate(cols):
            c0 = c * (side + gap)
            sheet[r0 : r0 + side, c0 : c0 + side] = col[i]
    return sheet


def cmd_benchmark(args, out_dir: Path) -> list:
    h, ds = _load_pair(args)
    state = tr.load_checkpoint(args.checkpoint)
    n = min(args.bench_samples, ds.count)
    if n < 10:
        raise ValueError(f"need >= 10 samples to benchmark, dataset has {n}")
    samples = list(ds.g[:n])
    tol = args.ls_tol if args.ls_tol > 0 else 1e-300
    ls_cfg = cl.SolverConfig(max_iters=args.ls_iters, rel_tol=tol)

    def run_ls(hh, g):
        return cl.solve_ls(hh, g, ls_cfg)

    def run_gan(hh, g):
        return tr.generator_infer(state, tr.normalize_inputs(state, g[None, :]),
                                  batch_size=1)

    ls_mean, ls_std = cl.time_reconstruction(run_ls, h, samples)
    gan_mean, gan_std = cl.time_reconstruction(run_gan, h, samples)
    csv = out_dir / "benchmark.csv"
    csv.write_text(
        "method,mean_s,std_s,samples\n"
        f"ls_{args.ls_iters}iters,{ls_mean!r},{ls_std!r},{n}\n"
        f"generator,{gan_mean!r},{gan_std!r},{n}\n")
    ratio = ls_mean / gan_mean if gan_mean > 0 else float("inf")
    print(f"ls @ {args.ls_iters} iters: {ls_mean * 1e3:.1f} ms/sample; "
          f"generator: {gan_mean * 1e3:.1f} ms/sample; speedup {ratio:.1f}x")
    return [csv]


_COMMANDS = {
    "synth-matrix": cmd_synth_matrix,
    "build-dataset": cmd_build_dataset,
    "recon-classical": cmd_recon_classical,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print(f"error: --threads must be >= 1, got {args.threads}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=args.threads):
            outputs = _COMMANDS[args.command](args, out_dir)
        inputs = [getattr(args, name) for name in ("matrix", "dataset", "checkpoint",
                                                   "idx_images", "idx_labels")
                  if getattr(args, name, None)]
        _manifest(args, out_dir, t0, inputs, outputs)
    except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
