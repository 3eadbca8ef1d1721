"""Command-line entry point: ``rrvq <command> [flags]``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 for
runtime failures (I/O, divergence, failed checks).
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import codec, data, entropy
from .config import ConfigError, ModelConfig, TrainSchedule, config_text, load_config, replace
from .training import (
    TrainingDiverged, elbo_grad_check, evaluate, load_checkpoint, restore_model, tiny_config, train,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", required=True, help="checkpoint file written by 'train'")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rrvq", description="Hierarchical discrete VAEs with relaxed-responsibility quantisation.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="write colour-swatch images as PPM files")
    _common(p)
    p.add_argument("--n", type=int, default=100, help="number of images (default: 100)")
    p.add_argument("--side", type=int, default=8, help="image side in pixels (default: 8)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--grid", help="also write all images tiled into this PPM")

    p = sub.add_parser("train", help="train a model and keep the best checkpoint")
    _common(p)
    p.add_argument("--config", help="flat 'key = value' model/schedule file")
    p.add_argument("--data", default="swatches", help="'swatches' or a directory of PPM images (default: swatches)")
    p.add_argument("--eval-data", help="directory of PPM images for evaluation (default: generated or --data)")
    p.add_argument("--n-train", type=int, default=1024, help="generated training swatches (default: 1024)")
    p.add_argument("--n-eval", type=int, default=256, help="generated evaluation swatches (default: 256)")
    p.add_argument("--epochs", type=int, help="override max_epochs from the config")
    p.add_argument("--out", required=True, help="run directory for log.csv and model.ckpt")

    p = sub.add_parser("eval", help="ELBO and bits per dim on a dataset")
    _common(p)
    _add_model(p)
    p.add_argument("--data", default="swatches", help="'swatches' or a directory of PPM images (default: swatches)")
    p.add_argument("--n", type=int, default=256, help="generated swatches to evaluate (default: 256)")
    p.add_argument("--mode", choices=("hard", "relaxed", "mode"), default="hard",
                   help="latent sampling mode (default: hard)")
    p.add_argument("--out", help="write a one-row CSV summary here")

    p = sub.add_parser("sample", help="ancestral samples as a PPM grid")
    _common(p)
    _add_model(p)
    p.add_argument("--n", type=int, default=64, help="number of samples (default: 64)")
    p.add_argument("--mode", choices=("hard", "mode"), default="hard", help="per-layer latent choice (default: hard)")
    p.add_argument("--out", required=True, help="output PPM grid")

    p = sub.add_parser("reconstruct", help="posterior-mode reconstructions as a PPM grid")
    _common(p)
    _add_model(p)
    p.add_argument("--in", dest="inp", required=True, help="PPM image or directory of PPM images")
    p.add_argument("--out", required=True, help="output PPM grid (inputs above reconstructions)")

    p = sub.add_parser("layerwise", help="resample one layer, keeping modes elsewhere")
    _common(p)
    _add_model(p)
    p.add_argument("--in", dest="inp", required=True, help="PPM image")
    p.add_argument("--layer", type=int, required=True, help="layer to resample, 1 = closest to the data")
    p.add_argument("--n", type=int, default=16, help="number of resamples (default: 16)")
    p.add_argument("--out", required=True, help="output PPM grid")

    p = sub.add_parser("entropy", help="worst-case entropy curves (exact and approximate)")
    _common(p)
    p.add_argument("--K", type=int, default=256, help="number of categories (default: 256)")
    p.add_argument("--delta", type=float, default=1.0, help="extra distance of the other entries (default: 1)")
    p.add_argument("--d-min", type=float, default=10.0, help="smallest distance (default: 10)")
    p.add_argument("--d-max", type=float, default=30.0, help="largest distance (default: 30)")
    p.add_argument("--d-step", type=float, default=1.0, help="distance step (default: 1)")
    p.add_argument("--c", type=float, default=0.0, help="common logit offset for the softmax case (default: 0)")
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("mc-entropy", help="entropy of responsibilities for random codebooks")
    _common(p)
    p.add_argument("--K", type=int, default=256, help="codebook size (default: 256)")
    p.add_argument("--d-e", type=int, default=32, help="embedding dimension (default: 32)")
    p.add_argument("--radius", type=float, default=0.5, help="codebook sphere radius (default: 0.5)")
    p.add_argument("--trials", type=int, default=1000, help="codebooks per distance (default: 1000)")
    p.add_argument("--d-values", default="1,2,3,4,5", help="comma-separated distances (default: 1,2,3,4,5)")
    p.add_argument("--solid", action="store_true", help="sample inside the ball instead of on its surface")
    p.add_argument("--out", required=True, help="output CSV")

    p = sub.add_parser("compress", help="encode a PPM image as a latent bitstream")
    _common(p)
    _add_model(p)
    p.add_argument("--in", dest="inp", required=True, help="input PPM")
    p.add_argument("--out", required=True, help="output bitstream")

    p = sub.add_parser("decompress", help="decode a latent bitstream to a PPM image")
    _common(p)
    _add_model(p)
    p.add_argument("--in", dest="inp", required=True, help="input bitstream")
    p.add_argument("--out", required=True, help="output PPM")

    p = sub.add_parser("grad-check", help="finite-difference check of the ELBO gradients")
    _common(p)
    p.add_argument("--config", help="model config file (default: a tiny two-layer model)")
    p.add_argument("--batch", type=int, default=2, help="random images in the batch (default: 2)")
    p.add_argument("--step", type=float, default=3e-4, help="finite-difference step (default: 3e-4)")
    p.add_argument("--tol", type=float, default=1e-4, help="maximum relative deviation (default: 1e-4)")
    p.add_argument("--max-entries", type=int, help="check at most this many entries per parameter")
    return parser


# -- helpers --------------------------------------------------------------------------
def _print_resolved(args, cfg: ModelConfig | None = None, schedule: TrainSchedule | None = None) -> None:
    print("# resolved configuration")
    for k, v in sorted(vars(args).items()):
        if v is not None:
            print(f"arg.{k} = {v}")
    if cfg is not None:
        sys.stdout.write(config_text(cfg, schedule))
    sys.stdout.flush()


def _load_images(spec: str, n: int, side: int, seed: int) -> np.ndarray:
    if spec == "swatches":
        return data.gen_swatches(n, side, seed)
    return data.load_ppm_dir(spec, side)


def _load_input(path: str) -> np.ndarray:
    p = Path(path)
    return data.load_ppm_dir(p) if p.is_dir() else data.read_ppm(p)[None]


# -- commands -------------------------------------------------------------------------
def cmd_gen_data(args) -> None:
    _print_resolved(args)
    images = data.gen_swatches(args.n, args.side, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = len(str(args.n - 1))
    for i, im in enumerate(images):
        data.write_ppm(out / f"swatch_{i:0{width}d}.ppm", im)
    if args.grid:
        data.write_ppm(args.grid, data.image_grid(images))
    print(f"wrote {args.n} images to {out}")


def cmd_train(args) -> None:
    cfg, schedule = load_config(args.config) if args.config else (ModelConfig(), TrainSchedule())
    if args.epochs is not None:
        schedule = replace(schedule, max_epochs=args.epochs)
    _print_resolved(args, cfg, schedule)
    seeds = np.random.SeedSequence(args.seed).spawn(3)
    if args.data == "swatches":
        train_x = data.gen_swatches(args.n_train, cfg.image_side, np.random.default_rng(seeds[0]))
        eval_x = data.gen_swatches(args.n_eval, cfg.image_side, np.random.default_rng(seeds[1]))
    else:
        train_x = data.load_ppm_dir(args.data, cfg.image_side)
        eval_x = data.load_ppm_dir(args.eval_data, cfg.image_side) if args.eval_data else train_x
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg, schedule, train_x, eval_x, np.random.default_rng(seeds[2]),
                   checkpoint_path=out / "model.ckpt", log_path=out / "log.csv")
    if result.log:
        last = result.final("eval")
        print(f"best eval elbo {result.best_eval_elbo:.4f} nats at epoch {result.best_epoch}; "
              f"final eval bpd {last['bpd']:.4f}")


def cmd_eval(args) -> None:
    model = restore_model(args.model)
    _print_resolved(args, model.cfg)
    x = _load_images(args.data, args.n, model.cfg.image_side, args.seed + 1)
    elbo = evaluate(model, x, np.random.default_rng(args.seed), mode=args.mode)
    bpd = -elbo / (model.cfg.n_dims * np.log(2.0))
    print(f"elbo_nats = {elbo:.6f}")
    print(f"bpd = {bpd:.6f}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("n,mode,elbo_nats,bpd\n")
            fh.write(f"{len(x)},{args.mode},{elbo:.10g},{bpd:.10g}\n")


def cmd_sample(args) -> None:
    model = restore_model(args.model)
    _print_resolved(args, model.cfg)
    images = model.sample(args.n, np.random.default_rng(args.seed), mode=args.mode)
    data.write_ppm(args.out, data.image_grid(images))
    print(f"mean intra-image std {data.intra_image_std(images * 255).mean():.4f} levels")


def cmd_reconstruct(args) -> None:
    model = restore_model(args.model)
    _print_resolved(args, model.cfg)
    x = _load_input(args.inp)
    recon, _ = model.reconstruct(x)
    cols = len(x)
    data.write_ppm(args.out, data.image_grid(np.concatenate([x, recon]), cols=cols))


def cmd_layerwise(args) -> None:
    model = restore_model(args.model)
    _print_resolved(args, model.cfg)
    x = data.read_ppm(args.inp)
    images, _ = model.layerwise_resample(x, args.layer, args.n, np.random.default_rng(args.seed))
    data.write_ppm(args.out, data.image_grid(images))


def cmd_entropy(args) -> None:
    _print_resolved(args)
    if args.d_step <= 0 or args.d_max < args.d_min:
        raise UsageError("entropy: need --d-step > 0 and --d-max >= --d-min")
    n = int(np.floor((args.d_max - args.d_min) / args.d_step + 1e-9)) + 1
    ds = args.d_min + args.d_step * np.arange(n)
    entropy.write_curve_csv(args.out, entropy.entropy_curve(args.K, args.delta, ds, args.c))
    print(f"wrote {n} rows to {args.out}")


def cmd_mc_entropy(args) -> None:
    _print_resolved(args)
    try:
        ds = [float(v) for v in args.d_values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"mc-entropy: bad --d-values {args.d_values!r}") from None
    rows = entropy.mc_codebook_entropy(ds, args.trials, K=args.K, d_e=args.d_e, radius=args.radius,
                                       rng=np.random.default_rng(args.seed), solid=args.solid)
    entropy.write_mc_csv(args.out, rows)
    for r in rows:
        print(f"d={r.d:g} mean={r.mean_H:.4e} min={r.min_H:.4e} worst={r.worst_exact:.4e}")


def cmd_compress(args) -> None:
    model = restore_model(args.model)
    _print_resolved(args, model.cfg)
    bs = codec.compress(model, data.read_ppm(args.inp))
    Path(args.out).write_bytes(bs.to_bytes())
    print(f"{bs.n_bits} payload bits, compression ratio {codec.compression_ratio(model.cfg):.4f}")


def cmd_decompress(args) -> None:
    model = restore_model(args.model)
    _print_resolved(args, model.cfg)
    bs = codec.LatentBitstream.from_bytes(Path(args.inp).read_bytes())
    data.write_ppm(args.out, codec.decompress(model, bs))


def cmd_grad_check(args) -> None:
    cfg = load_config(args.config)[0] if args.config else tiny_config()
    _print_resolved(args, cfg)
    from .model import HierarchicalVAE

    rng = np.random.default_rng(args.seed)
    model = HierarchicalVAE(cfg, rng)
    x = rng.integers(0, 256, size=(args.batch, 3, cfg.image_side, cfg.image_side))
    report = elbo_grad_check(model, x, seed=args.seed, step=args.step, tol=args.tol, max_entries=args.max_entries)
    print(report)
    if not report.passed:
        raise RuntimeError(f"gradient check failed: {report}")


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "sample": cmd_sample,
    "reconstruct": cmd_reconstruct, "layerwise": cmd_layerwise, "entropy": cmd_entropy,
    "mc-entropy": cmd_mc_entropy, "compress": cmd_compress, "decompress": cmd_decompress,
    "grad-check": cmd_grad_check,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
