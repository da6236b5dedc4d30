"""``sarmonet`` command line: simulate, train, infer, eval, detect, ablate.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import (ConfigError, DegenerateInputError, DomainError, IngestionError, NumericError,
                     ParameterError, ShapeError, UsageError)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _set_threads(n: int | None) -> None:
    if not n:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        # only effective if BLAS has not started its pool yet
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)
        return
    threadpool_limits(n)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    return cfg.with_overrides(seed=args.seed)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    from .fileio import atomic_write_bytes

    atomic_write_bytes(path, text.encode("utf-8"))


def _quicklook(path_stem: Path, image) -> Path:
    from .fileio import write_quicklook

    try:
        import PIL  # noqa: F401
        path = path_stem.with_suffix(".png")
    except ImportError:
        path = path_stem.with_suffix(".pgm")
    write_quicklook(path, image)
    return path


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: RunConfig) -> int:
    from .fileio import save_dataset
    from .speckle import build_dataset

    train, val = build_dataset(cfg.dataset())
    manifest = save_dataset(_out(args), train, val)
    print(f"{len(train)} train + {len(val)} val patches -> {manifest}")
    return EXIT_OK


def _dataset(args, cfg: RunConfig):
    from .fileio import load_dataset
    from .speckle import build_dataset

    if getattr(args, "data", None):
        return load_dataset(args.data)
    return build_dataset(cfg.dataset())


def cmd_train(args, cfg: RunConfig) -> int:
    from .train import latest_checkpoint, train

    out = _out(args)
    tcfg = cfg.train()
    data, val = _dataset(args, cfg)
    resume = None
    if args.resume:
        resume = latest_checkpoint(out) if args.resume == "latest" else Path(args.resume)
        if resume is None:
            raise UsageError(f"no checkpoint to resume from in {out}")

    def report(res):
        if res.step % 50 == 0:
            s = res.log.steps[-1]
            print(f"step {s['step']:6d} epoch {s['epoch']:3d} total {s['total']:.5g} "
                  f"l2 {s['l2']:.5g} kl {s['kl']:.5g} grad {s['grad']:.5g} lr {s['lr']:g}",
                  flush=True)

    res = train(tcfg, data, val if len(val) else None, out_dir=out, resume=resume, callback=report)
    _write(out / "train_log.csv", res.log.to_csv())
    if res.log.epochs:
        cols = list(res.log.epochs[0])
        rows = [",".join(cols)] + [",".join(repr(float(e[c])) for c in cols) for e in res.log.epochs]
        _write(out / "val_log.csv", "\n".join(rows) + "\n")
    _write(out / "config.txt", cfg.dump())
    print(f"trained {res.step} steps -> {out / 'model.monw'}")
    return EXIT_OK


def cmd_infer(args, cfg: RunConfig) -> int:
    from .fileio import read_image, write_sarf
    from .metrics import ratio_image
    from .nn import load_weights, predict

    model = load_weights(args.weights)
    out = _out(args)
    for src in args.inputs:
        img = read_image(src)
        xhat = predict(model, img).astype(np.float64)
        ratio = ratio_image(img, xhat)
        stem = Path(src).stem
        write_sarf(out / f"{stem}_filtered.sarf", xhat)
        write_sarf(out / f"{stem}_ratio.sarf", ratio)
        _quicklook(out / f"{stem}_filtered", xhat)
        _quicklook(out / f"{stem}_ratio", ratio)
        print(f"{src}: {img.shape[0]}x{img.shape[1]} -> {out / (stem + '_filtered.sarf')}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    from .fileio import read_image
    from .metrics import evaluate, select_homogeneous_rois

    noisy, filt = read_image(args.noisy), read_image(args.filtered)
    clean = read_image(args.clean) if args.clean else None
    if args.require_reference and clean is None:
        raise UsageError("--require-reference given without --clean")
    if noisy.shape != filt.shape or (clean is not None and clean.shape != noisy.shape):
        raise ShapeError("noisy, filtered and clean images must have the same shape")
    size = min(cfg.get("roi_size"), *noisy.shape)
    roi = select_homogeneous_rois(noisy, size=size, n=cfg.get("roi_count"))
    rep = evaluate(noisy, filt, clean, roi=roi, permutations=cfg.get("permutations"),
                   seed=cfg.get("seed"))
    _write(_out(args) / "metrics.csv", rep.to_csv(label=Path(args.filtered).stem))
    print(rep.table(Path(args.filtered).stem))
    return EXIT_OK


def cmd_detect(args, cfg: RunConfig) -> int:
    from .detect import detect, validate_populations
    from .fileio import atomic_write_bytes, encode_pbm, read_image
    from .metrics import ratio_image

    if args.ratio:
        ratio = read_image(args.ratio)
    elif args.noisy and args.filtered:
        ratio = ratio_image(read_image(args.noisy), read_image(args.filtered))
    else:
        raise UsageError("detect needs --ratio or both --noisy and --filtered")
    mask = detect(ratio, cfg.detect())
    out = _out(args)
    atomic_write_bytes(out / "eh_mask.pbm", encode_pbm(mask.flags))
    _write(out / "eh_points.csv", mask.coordinates_csv())
    msg = f"{int(mask.flags.sum())} extremely heterogeneous points"
    sar_path = args.sar or args.noisy
    if sar_path:
        sar = read_image(sar_path)
        if sar.shape != mask.flags.shape:
            raise ShapeError(f"SAR image {sar.shape} and ratio {mask.flags.shape} differ")
        rep = validate_populations(sar, mask)
        _write(out / "fit_summary.csv", rep.summary_csv())
        _write(out / "fit_curves.csv", rep.curves_csv())
        if rep.inconclusive:
            msg += " (population fit inconclusive: empty population)"
    print(msg)
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    from .train import ablation_table, run_ablation

    data, test = _dataset(args, cfg)
    if len(test) == 0:
        raise ConfigError("ablation needs a nonempty validation split")
    variants = args.variants.split(",") if args.variants else None
    kw = {"variants": variants} if variants else {}
    rows, _ = run_ablation(cfg.train(), data, test,
                           callback=lambda name, res: print(f"variant {name}: {res.step} steps",
                                                            flush=True), **kw)
    table = ablation_table(rows)
    _write(_out(args) / "ablation.csv", table)
    print(table, end="")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value run configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="override the configured master seed")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: .)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="limit BLAS threads")

    p = _Parser(prog="sarmonet", description=__doc__.split("\n")[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="synthesize a speckled patch dataset")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", parents=[common], help="train the network")
    s.add_argument("--data", help="dataset directory written by 'simulate' (default: build from config)")
    s.add_argument("--resume", help="checkpoint .monw to resume from, or 'latest' in --out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="despeckle images")
    s.add_argument("--weights", required=True, help="MONW weight file")
    s.add_argument("inputs", nargs="+", help="SARF, PGM or PNG amplitude images")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", parents=[common], help="compute quality metrics")
    s.add_argument("--noisy", required=True)
    s.add_argument("--filtered", required=True)
    s.add_argument("--clean", help="reference image; enables SSIM, MSE and SNR")
    s.add_argument("--require-reference", action="store_true",
                   help="fail unless --clean is given")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("detect", parents=[common], help="flag extremely heterogeneous points")
    s.add_argument("--ratio", help="ratio image")
    s.add_argument("--noisy", help="noisy image (with --filtered instead of --ratio)")
    s.add_argument("--filtered")
    s.add_argument("--sar", help="amplitude image for the population fit (default: --noisy)")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("ablate", parents=[common], help="compare the four loss variants")
    s.add_argument("--data", help="dataset directory written by 'simulate'")
    s.add_argument("--variants", help="comma-separated subset of L2,Lkl,Lgrad,L")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("out", "."), ("threads", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        _set_threads(args.threads)
        cfg = _load_config(args)
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"sarmonet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"sarmonet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (IngestionError, ParameterError, ShapeError, DomainError, DegenerateInputError,
            OSError, ValueError) as exc:
        print(f"sarmonet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
