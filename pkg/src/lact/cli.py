"""Command-line interface.

Every subcommand writes a ``<output>.manifest.json`` next to its main output
holding the full argument set and package version, which is enough to rerun it.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as lio
from .metrics import mcc
from .neural import load_autoencoder, save_autoencoder, train_autoencoder
from .neural.autoencoder import reconstruction_error
from .phantoms import PhantomSpec, ScanSpec, disk_mask, generate_phantom, generate_phantoms, simulate_scan
from .radon import fbp_reconstruct
from .reconstruct import ConfigError, ReconConfig, binarize, reconstruct
from . import search

logger = logging.getLogger("lact")


class UsageError(Exception):
    pass


def _manifest(args: argparse.Namespace, output, extra: dict | None = None) -> None:
    fields = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    payload = {"command": args.command, "version": __version__, "args": fields}
    if extra:
        payload.update(extra)
    lio.write_json(Path(str(output) + ".manifest.json"), payload)


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return value
    return parse


def _nonneg(kind):
    def parse(text):
        value = kind(text)
        if value < 0:
            raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
        return value
    return parse


def _int_list(text):
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive")
    return values


def _mask_for(args, side: int):
    if args.no_mask:
        return None
    if args.mask:
        mask = lio.read_image(args.mask)
        if mask.shape != (side, side):
            raise UsageError(f"mask shape {mask.shape} does not match image side {side}")
        return mask
    return disk_mask(side, args.mask_radius)


def _auto_prior(patch_size: int, side: int, epochs: int, seed: int):
    logger.info("no --ae-model given; training a %dx%d patch autoencoder on 8 generated phantoms", patch_size,
                patch_size)
    images = generate_phantoms(8, side=side, seed=seed)
    return train_autoencoder(images, patch_size, seed=seed, epochs=epochs).model


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate_phantoms(args) -> None:
    if args.min_holes > args.max_holes:
        raise UsageError(f"--min-holes {args.min_holes} exceeds --max-holes {args.max_holes}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).generate_state(args.count)
    written = []
    for k, s in enumerate(seeds):
        spec = PhantomSpec(side=args.side, hole_count=(args.min_holes, args.max_holes), seed=int(s))
        img = generate_phantom(spec)
        path = out / f"phantom_{k:03d}.csv"
        lio.write_matrix_csv(path, img)
        if args.pgm:
            lio.write_pgm(path.with_suffix(".pgm"), img)
        written.append({"file": path.name, "seed": int(s)})
    _manifest(args, out / "phantoms", {"outputs": written})


def cmd_simulate(args) -> None:
    img = lio.read_image(args.image)
    scan = ScanSpec(arc_deg=args.arc, angle_step_deg=args.step, start_angle_deg=args.start,
                    noise_sigma=args.noise, seed=args.seed)
    lio.write_sinogram(args.out, simulate_scan(img, scan))
    _manifest(args, args.out)


def cmd_train_ae(args) -> None:
    if args.images:
        images = [lio.read_image(p) for p in args.images]
    else:
        images = generate_phantoms(args.count, side=args.side, seed=args.seed)
    result = train_autoencoder(images, args.patch_size, seed=args.seed, epochs=args.epochs)
    save_autoencoder(args.out, result.model)
    extra = {"final_loss": result.final_loss}
    if len(result.heldout_patches):
        extra["heldout_mae"] = reconstruction_error(result.model, result.heldout_patches)
    print(f"final loss {result.final_loss:.6f}")
    _manifest(args, args.out, extra)


def cmd_reconstruct(args) -> None:
    sino = lio.read_sinogram(args.sino, image_side=args.side)
    n = sino.geometry.image_side
    cfg = ReconConfig(use_dip=args.dip, alpha=args.alpha, lambda_tv=args.lambda_tv, lambda_psr=args.lambda_psr,
                      patch_size=args.patch_size, lr=args.lr, n_iter=args.n_iter, seed=args.seed,
                      mask=_mask_for(args, n), ae_model_path=str(args.ae_model) if args.ae_model else None)
    cfg.validate()
    model = None
    if cfg.lambda_psr > 0:
        model = load_autoencoder(args.ae_model) if args.ae_model else _auto_prior(cfg.patch_size, n, args.ae_epochs,
                                                                                   args.seed)
    result = reconstruct(sino, cfg, ae_model=model)
    lio.write_image(args.out, result.image)
    if args.binary_out:
        lio.write_image(args.binary_out, binarize(result.image))
    lio.write_matrix_csv(Path(str(args.out) + ".loss.csv"), np.asarray(result.loss_trace)[:, None])
    _manifest(args, args.out, {"config": cfg.to_dict(), "final_loss": result.loss_trace[-1],
                               "mask_offset": [result.offset.dx, result.offset.dy]})


def cmd_fbp(args) -> None:
    sino = lio.read_sinogram(args.sino, image_side=args.side)
    img = fbp_reconstruct(sino, filter_alpha=args.alpha)
    mask = _mask_for(args, sino.geometry.image_side)
    if mask is not None:
        img = img * mask
    lio.write_image(args.out, img)
    if args.binary_out:
        lio.write_image(args.binary_out, binarize(img))
    _manifest(args, args.out)


def cmd_score(args) -> None:
    pred = lio.read_image(args.pred)
    truth = lio.read_image(args.truth)
    if args.binarize:
        pred = binarize(pred)
    print(repr(mcc(pred, truth)))


def _suite_from(args) -> search.Suite:
    return search.make_suite(count=args.count, side=args.side, arc_deg=args.arc, noise_sigma=args.noise,
                             seed=args.data_seed)


def cmd_hparam_search(args) -> None:
    space = search.SearchSpace(patch_size=args.patch_sizes, n_iter=args.n_iter_choices)
    suite = _suite_from(args)
    records = search.hparam_search(suite, args.trials, seed=args.seed, space=space, ae_epochs=args.ae_epochs,
                                   workers=args.workers)
    search.write_text(args.out, search.trials_csv(records))
    search.write_text(Path(str(args.out) + ".timings.csv"), search.timings_csv(records))
    for rank, r in enumerate(search.rank_trials(records)[:3], start=1):
        print(f"#{rank} trial {r.trial}: total MCC {r.total:.4f}")
    _manifest(args, args.out)


def cmd_ablate(args) -> None:
    if args.from_trials:
        configs = search.best_per_exclusion(search.read_trials_csv(args.from_trials))
    else:
        configs = {name: replace(cfg, seed=args.seed) for name, cfg in search.TABLE1_CONFIGS.items()}
    suite = _suite_from(args)
    rows = search.ablate(configs, suite, ae_epochs=args.ae_epochs, seed=args.seed, workers=args.workers)
    table = search.ablation_table(rows)
    search.write_text(args.out, table)
    sys.stdout.write(table)
    _manifest(args, args.out)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_mask_flags(p) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--mask", type=Path, help="support mask image (CSV or PGM)")
    group.add_argument("--no-mask", action="store_true", help="do not constrain the support")
    p.add_argument("--mask-radius", type=_positive(float), default=0.45,
                   help="radius of the default disk mask as a fraction of the side (default 0.45)")


def _add_suite_flags(p) -> None:
    p.add_argument("--count", type=_positive(int), default=4, help="phantoms in the evaluation suite")
    p.add_argument("--side", type=_positive(int), default=128)
    p.add_argument("--arc", type=_positive(float), default=30.0, help="scan arc in degrees")
    p.add_argument("--noise", type=_nonneg(float), default=0.01)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--ae-epochs", type=_positive(int), default=100)
    p.add_argument("--workers", type=_nonneg(int), default=None, help="worker processes (0 = all CPUs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lact", description="Limited-angle CT reconstruction toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-phantoms", parents=[common], help="write random disk phantoms as CSV")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--count", type=_positive(int), default=8)
    p.add_argument("--side", type=_positive(int), default=128)
    p.add_argument("--min-holes", type=_nonneg(int), default=2)
    p.add_argument("--max-holes", type=_nonneg(int), default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pgm", action="store_true", help="also write PGM previews")
    p.set_defaults(func=cmd_generate_phantoms)

    p = sub.add_parser("simulate", parents=[common], help="simulate a limited-arc sinogram")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--arc", type=_nonneg(float), default=30.0)
    p.add_argument("--step", type=_positive(float), default=0.5)
    p.add_argument("--start", type=float, default=0.0)
    p.add_argument("--noise", type=_nonneg(float), default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-ae", parents=[common], help="train the patch autoencoder")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--patch-size", type=_positive(int), default=40)
    p.add_argument("--images", type=Path, nargs="*", help="training images; default: generated phantoms")
    p.add_argument("--count", type=_positive(int), default=8)
    p.add_argument("--side", type=_positive(int), default=128)
    p.add_argument("--epochs", type=_positive(int), default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_ae)

    p = sub.add_parser("reconstruct", parents=[common], help="iterative reconstruction of one sinogram")
    p.add_argument("--sino", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--binary-out", type=Path)
    p.add_argument("--side", type=_positive(int), help="image side (default: detector bins)")
    p.add_argument("--dip", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--alpha", type=_nonneg(float), default=6.0)
    p.add_argument("--lambda-tv", type=_nonneg(float), default=0.01)
    p.add_argument("--lambda-psr", type=_nonneg(float), default=0.2)
    p.add_argument("--patch-size", type=_positive(int), default=40)
    p.add_argument("--lr", type=_positive(float), default=0.001)
    p.add_argument("--n-iter", type=_positive(int), default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ae-model", type=Path, help="trained autoencoder; trained on the fly when omitted")
    p.add_argument("--ae-epochs", type=_positive(int), default=100)
    _add_mask_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("fbp", parents=[common], help="filtered back projection baseline")
    p.add_argument("--sino", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--binary-out", type=Path)
    p.add_argument("--side", type=_positive(int))
    p.add_argument("--alpha", type=_nonneg(float), default=0.0)
    _add_mask_flags(p)
    p.set_defaults(func=cmd_fbp)

    p = sub.add_parser("score", parents=[common], help="print the MCC between two binary images")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--binarize", action="store_true", help="Otsu-threshold the prediction first")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("hparam-search", parents=[common], help="random hyperparameter search on generated data")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--trials", type=_positive(int), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-sizes", type=_int_list, default=(20, 30, 40))
    p.add_argument("--n-iter-choices", type=_int_list, default=(300, 400, 800, 1200))
    _add_suite_flags(p)
    p.set_defaults(func=cmd_hparam_search)

    p = sub.add_parser("ablate", parents=[common], help="five-row ablation table")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--from-trials", type=Path, help="take the best row per exclusion from a trials CSV")
    p.add_argument("--seed", type=int, default=0)
    _add_suite_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad usage
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, ConfigError) as exc:
        parser.error(str(exc))
    except (lio.ParseError, FileNotFoundError, ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"lact {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
