"""Command-line entry point: ``rdnet <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as C
from . import gradcheck as GC
from . import model as M
from . import plotting
from .config import RunConfig, load_config
from .degrade import degrade
from .errors import ConfigError, RdnError
from .images import list_images, modcrop, read_image, write_image
from .metrics import EvalReport, evaluate_pair, self_ensemble
from .train import read_loss_log, train

log = logging.getLogger("rdnet")


def _threads() -> int:
    raw = os.environ.get("RDN_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _limit_blas(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=n)


def _image_seed(seed: int, name: str) -> int:
    # independent of processing order, so parallel runs match serial ones
    return (seed * 0x9E3779B1 + zlib.crc32(name.encode())) % (2 ** 63)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


# ---------------------------------------------------------------------------

def cmd_degrade(args) -> int:
    run = _load_run_config(args)
    src = run.hq_dir or run.train_dir
    if not src:
        raise ConfigError("missing required config key: hq_dir")
    run.require("lq_dir")
    spec = run.degradation_spec()
    if spec is None:
        raise ConfigError(f"task {run.task!r} has no built-in degradation; set 'degradation'")
    files = list_images(src)
    out_dir = Path(run.lq_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not files:
        log.warning("no images found in %s", src)
        return 0

    def one(path: Path):
        try:
            img = read_image(path)
            if spec.scale > 1:
                img = modcrop(img, spec.scale)
            lq = degrade(img, replace(spec, seed=_image_seed(run.seed, path.name)))
            write_image(out_dir / path.name, lq)
            return None
        except (OSError, RdnError) as exc:
            return f"{path}: {exc}"

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        errors = [e for e in pool.map(one, files) if e]
    for e in errors:
        log.error("%s", e)
    log.info("wrote %d of %d images to %s", len(files) - len(errors), len(files), out_dir)
    return 1 if errors else 0


def _training_pairs(run: RunConfig, cfg: M.RdnConfig):
    hq_files = list_images(run.train_dir)
    if not hq_files:
        raise ConfigError(f"no training images in {run.train_dir}")
    spec = None if run.lq_dir else run.degradation_spec()
    if spec is None and not run.lq_dir:
        raise ConfigError("missing required config key: lq_dir (no built-in degradation for this task)")
    pairs = []
    for path in hq_files:
        hq = read_image(path)
        if cfg.scale > 1:
            hq = modcrop(hq, cfg.scale)
        if run.lq_dir:
            lq = read_image(Path(run.lq_dir) / path.name)
        else:
            lq = degrade(hq, replace(spec, seed=_image_seed(run.seed, path.name)))
        pairs.append((lq, hq))
    return pairs


def cmd_train(args) -> int:
    run = _load_run_config(args)
    run.require("train_dir", "ckpt_dir")
    cfg = run.model_config()
    tcfg = run.train_config()
    params = state = None
    start = 0
    if args.resume:
        ck = C.load_checkpoint(args.resume)
        if ck.cfg != cfg:
            raise ConfigError(f"checkpoint {args.resume} was trained with a different model config")
        params, state, start = ck.params, ck.state, ck.epoch
        log.info("resuming from %s at epoch %d", args.resume, start)
    else:
        params = M.init_params(cfg, tcfg.seed, scheme=run.init)
    pairs = _training_pairs(run, cfg)
    ckpt_dir = Path(run.ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = Path(run.report_path) if run.report_path else ckpt_dir / "loss.csv"
    if not args.resume and log_path.exists():
        log_path.unlink()
    train(cfg, pairs, tcfg, params=params, state=state, start_epoch=start,
          ckpt_dir=ckpt_dir, log_path=log_path)
    rows = read_loss_log(log_path)
    if rows:
        plotting.plot_loss_curve(rows, log_path.with_suffix(".png"))
    return 0


def _predict(ck: C.Checkpoint, img: np.ndarray) -> np.ndarray:
    return M.rdn_forward(img[None].astype(np.float32), ck.params, ck.cfg)[0]


def cmd_infer(args) -> int:
    ck = C.load_checkpoint(args.checkpoint)
    img = read_image(args.input)
    if img.shape[0] != ck.cfg.in_channels:
        raise ConfigError(f"{args.input} has {img.shape[0]} channels, model expects {ck.cfg.in_channels}")
    if args.ensemble:
        out = self_ensemble(lambda x: _predict(ck, x), img)
    else:
        out = _predict(ck, img)
    write_image(args.output, out)
    return 0


def cmd_eval(args) -> int:
    preds = {p.stem: p for p in list_images(args.pred_dir)}
    gts = {p.stem: p for p in list_images(args.gt_dir)}
    if set(preds) != set(gts):
        missing_pred = sorted(set(gts) - set(preds))
        missing_gt = sorted(set(preds) - set(gts))
        raise ConfigError(f"file sets differ: missing predictions {missing_pred}, "
                          f"missing ground truth {missing_gt}")
    report_path = Path(args.report or (load_config(args.config).report_path if args.config else None)
                       or "eval.csv")

    def one(stem):
        pred, gt = read_image(preds[stem]), read_image(gts[stem])
        if pred.shape != gt.shape:
            raise ConfigError(f"{stem}: prediction {pred.shape} and ground truth {gt.shape} differ")
        return (stem, *evaluate_pair(pred, gt, args.shave))

    report = EvalReport()
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        for row in pool.map(one, sorted(gts)):
            report.add(*row)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(report_path)
    if report.rows:
        plotting.plot_eval_report(report, report_path.with_suffix(".png"))
    log.info("mean PSNR %.4f dB, mean SSIM %.4f over %d images",
             report.mean_psnr, report.mean_ssim, len(report.rows))
    return 0


def cmd_count_params(args) -> int:
    cfg = _load_run_config(args).model_config()
    closed = M.count_params(cfg)
    built = M.scalar_count(M.init_params(cfg, 0))
    print(f"closed-form: {closed:,} ({closed / 1e6:.1f}M)")
    print(f"constructed: {built:,}")
    return 0 if closed == built else 1


def cmd_gradcheck(args) -> int:
    corrupt = os.environ.get("RDN_GRADCHECK_CORRUPT") == "1"
    seed = args.seed if args.seed is not None else 0
    if args.config and not args.tiny:
        cfg = load_config(args.config).model_config()
        results = [GC.check_model(cfg, seed, corrupt=corrupt, per_tensor=8)]
    else:
        results = GC.run_suite(seed, corrupt=corrupt)
    failed = 0
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{status:4s} {r.name:40s} max_rel_err={r.max_rel_err:.3e} checked={r.n_checked}"
              f" skipped={r.n_skipped}")
        failed += not r.ok
    worst = max(r.max_rel_err for r in results)
    print(f"{'PASS' if not failed else 'FAIL'}: {len(results)} checks, max rel. err {worst:.3e} "
          f"(tolerance {GC.TOL:g})")
    return 1 if failed else 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdnet", description="Residual dense network toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("degrade", help="generate LQ images from an HQ directory")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--resume", metavar="PATH")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="restore one image with a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--ensemble", action="store_true", help="average over the 8 flips/rotations")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="Y-channel PSNR/SSIM of predictions against ground truth")
    s.add_argument("pred_dir")
    s.add_argument("gt_dir")
    s.add_argument("--shave", type=int, default=0)
    s.add_argument("--report", metavar="PATH", help="CSV output (default: config report_path or eval.csv)")
    s.add_argument("--config")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("count-params", help="closed-form and constructed parameter counts")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_count_params)

    s = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    s.add_argument("--config")
    s.add_argument("--tiny", action="store_true", help="run the built-in tiny-config suite")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    limiter = _limit_blas(_threads())
    try:
        return args.func(args)
    except (RdnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
