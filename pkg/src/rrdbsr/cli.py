"""Command-line entry point: train, sr, interp, eval, feat-stats, fit-niqe, report.

Failures print one JSON line to stderr, e.g. ``{"error": "config", "field": "schedule.gan.lr0", ...}``.
Exit codes: 0 ok, 2 usage, 3 configuration, 4 invalid argument, 5 training diverged, 130 interrupted.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import secrets
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError, TrainingDiverged
from .manifest import RunManifest, sha256_file

log = logging.getLogger("rrdbsr")

IMAGE_SUFFIXES = {".png", ".bmp", ".tif", ".tiff"}


class UsageError(Exception):
    pass


def _images(path) -> list[Path]:
    path = Path(path)
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if path.is_file():
        return [path]
    raise ValueError(f"no such image or directory: {path}")


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    seed = secrets.randbits(31)
    log.warning("no --seed given; drew seed %d", seed)
    return seed


# -- train -------------------------------------------------------------------
def cmd_train(args) -> int:
    from .config import load_config
    from .data import PairedDataset
    from .features import VGG19Extractor
    from .params import load_checkpoint, save_checkpoint
    from .trainer import Trainer

    cfg = load_config(args.config)
    seed = _seed(args)
    out = Path(args.out)
    manifest = cfg.manifest
    if manifest is None:
        raise ConfigurationError("data.manifest is required for training", field="data.manifest")
    if not manifest.is_file():
        raise ConfigurationError(f"dataset manifest not found: {manifest}", field="data.manifest")
    sched = cfg.schedule(args.stage)
    if args.iters is not None:
        sched = replace(sched, total_iters=args.iters)

    run = RunManifest("train", seed=seed, config_hash=cfg.digest(),
                      dataset_manifest_hash=sha256_file(manifest), inputs={"stage": args.stage})
    extractor, pretrained, disc_cfg = None, None, None
    if args.stage == "gan":
        opts_percep = cfg.losses.get("use_perceptual", True)
        if opts_percep:
            extractor = VGG19Extractor.from_file(cfg.vgg_weights)
            run.external_weights["vgg19"] = extractor.weights_sha256
        pre_path = Path(args.pretrained) if args.pretrained else cfg.pretrained()
        if pre_path is None:
            raise ConfigurationError("GAN stage needs schedule.gan.pretrained or --pretrained",
                                     field="schedule.gan.pretrained")
        pretrained = load_checkpoint(pre_path, expect_kind="generator")
        run.inputs["pretrained"] = sha256_file(pre_path)
        disc_cfg = cfg.disc_config()

    dataset = PairedDataset.from_manifest(manifest, cfg.scale, cfg.lr_dir)
    opts = cfg.trainer_options(log_path=str(out / "train_log.jsonl"), checkpoint_dir=str(out),
                               deterministic=args.deterministic, prefetch=0 if args.deterministic else 4)
    out.mkdir(parents=True, exist_ok=True)
    if not args.resume and (out / "train_log.jsonl").exists():
        (out / "train_log.jsonl").unlink()
    trainer = Trainer(cfg.generator, sched, dataset, seed, pretrained=pretrained, disc_config=disc_cfg,
                      extractor=extractor, options=opts)
    if args.resume:
        trainer.load_state(args.resume)
        run.inputs["resume"] = sha256_file(args.resume)
    trainer.run()
    trainer.checkpoint()
    save_checkpoint(out / f"generator_{args.stage}.ckpt", trainer.generator_params())
    run.write(out)
    print(json.dumps({"iteration": trainer.iteration, "out": str(out)}))
    return 0


# -- sr ----------------------------------------------------------------------
def cmd_sr(args) -> int:
    from .data import read_image, write_image
    from .generator import super_resolve
    from .interpolation import back_project
    from .params import load_checkpoint

    params = load_checkpoint(args.ckpt, expect_kind="generator")
    out = Path(args.out)
    for p in _images(args.inp):
        lr = torch.from_numpy(read_image(p))
        sr = super_resolve(params, lr)
        if args.backproject:
            sr = back_project(sr.double(), lr.double(), args.backproject)
        write_image(out / (p.stem + ".png"), sr)
    RunManifest("sr", inputs={"ckpt": sha256_file(args.ckpt), "backproject": args.backproject}).write(out)
    return 0


# -- interp ------------------------------------------------------------------
def cmd_interp(args) -> int:
    from .data import read_image, write_image
    from .generator import super_resolve
    from .interpolation import SWEEP, interpolate_parameters
    from .params import load_checkpoint, save_checkpoint

    psnr = load_checkpoint(args.psnr, expect_kind="generator")
    gan = load_checkpoint(args.gan, expect_kind="generator")
    if args.alpha == "sweep":
        alphas = SWEEP
    else:
        try:
            alphas = (float(args.alpha),)
        except ValueError:
            raise UsageError(f"--alpha must be a number in [0, 1] or 'sweep', got {args.alpha!r}")
    out = Path(args.out)
    images = _images(args.inp) if args.inp else []
    for a in alphas:
        params = interpolate_parameters(psnr, gan, a)
        save_checkpoint(out / f"interp_{a:.1f}.ckpt", params)
        for p in images:
            sr = super_resolve(params, torch.from_numpy(read_image(p)))
            write_image(out / f"alpha_{a:.1f}" / (p.stem + ".png"), sr)
    RunManifest("interp", inputs={"psnr": sha256_file(args.psnr), "gan": sha256_file(args.gan),
                                  "alpha": list(alphas)}).write(out)
    return 0


# -- eval --------------------------------------------------------------------
def _read_ma(path) -> dict:
    scores = {}
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].startswith("#") or row[0] in ("image", "filename"):
                continue
            scores[Path(row[0]).stem] = float(row[1])
    return scores


def cmd_eval(args) -> int:
    from .data import read_image
    from .metrics import NiqeModel, QualityReport, QualityRow, niqe, perceptual_index, psnr_y, ssim_y

    sr_files = {p.stem: p for p in _images(args.sr)}
    hr_files = {p.stem: p for p in _images(args.hr)} if args.hr else {}
    ma = _read_ma(args.ma_scores) if args.ma_scores else {}
    model = NiqeModel.load(args.niqe_model) if args.niqe_model else NiqeModel.default()
    report = QualityReport(convention=f"luma=BT.601 unit-peak; border_crop={args.border_crop}; "
                                      f"niqe patch={model.patch_size}")
    for name in sorted(sr_files):
        sr = read_image(sr_files[name])
        row = QualityRow(name)
        if name in hr_files:
            hr = read_image(hr_files[name])
            if hr.shape != sr.shape:
                raise ValueError(f"{name}: SR {sr.shape} and HR {hr.shape} differ")
            row.psnr_y = psnr_y(sr, hr, args.border_crop)
            row.ssim_y = ssim_y(sr, hr, args.border_crop)
        if not args.no_niqe:
            row.niqe = niqe(sr, model)
            if name in ma:
                row.perceptual_index = perceptual_index(ma[name], row.niqe)
        report.rows.append(row)
    report.write_csv(args.report)
    RunManifest("eval", inputs={"sr": str(args.sr), "hr": str(args.hr), "border_crop": args.border_crop}
                ).write(Path(args.report).parent)
    print(json.dumps({k: v for k, v in report.means().items() if v is not None}))
    return 0


# -- feat-stats --------------------------------------------------------------
def cmd_feat_stats(args) -> int:
    from .data import read_image
    from .features import VGG19Extractor, activation_sparsity, default_weights_path, normalize_layer_id

    weights = Path(args.vgg_weights) if args.vgg_weights else default_weights_path()
    extractor = VGG19Extractor.from_file(weights)
    layers = [normalize_layer_id(l) for l in args.layers.split(",")]
    img = torch.from_numpy(read_image(args.img)).unsqueeze(0)
    with torch.no_grad():
        taps = extractor.taps(img, layers)
    for layer in layers:
        pre = taps[layer]
        post = torch.relu(pre)
        print(json.dumps({
            "layer": layer,
            "activated_fraction": activation_sparsity(pre),
            "pre_nonzero_fraction": float((pre != 0).float().mean()),
            "post_nonzero_fraction": float((post != 0).float().mean()),
        }))
    return 0


# -- fit-niqe ----------------------------------------------------------------
def cmd_fit_niqe(args) -> int:
    from .data import load_manifest, read_image
    from .metrics.niqe import fit_niqe_model

    src = Path(args.images)
    paths = load_manifest(src) if src.suffix == ".txt" else _images(src)
    model = fit_niqe_model([read_image(p) for p in paths], args.patch_size, args.sharpness)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(json.dumps({"images": len(paths), "out": str(out)}))
    return 0


# -- report ------------------------------------------------------------------
def cmd_report(args) -> int:
    from .metrics import QualityReport

    report, stored = QualityReport.read_csv(args.report)
    recomputed = report.means()
    consistent = all(
        (stored.get(k) is None and v is None) or (stored.get(k) is not None and v is not None
                                                   and (stored[k] == v or np.isclose(stored[k], v)))
        for k, v in recomputed.items())
    print(json.dumps({"images": len(report.rows), "means": recomputed, "consistent": consistent,
                      "convention": report.convention}))
    return 0 if consistent else 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rrdbsr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run the psnr or gan training stage")
    t.add_argument("--config", required=True)
    t.add_argument("--stage", choices=("psnr", "gan"), required=True)
    t.add_argument("--resume")
    t.add_argument("--deterministic", action="store_true")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", default="runs/latest")
    t.add_argument("--pretrained", help="override schedule.gan.pretrained")
    t.add_argument("--iters", type=int, help="override the stage's total_iters")
    t.set_defaults(fn=cmd_train)

    s = sub.add_parser("sr", help="super-resolve images with a generator checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--backproject", type=int, default=0, metavar="N")
    s.set_defaults(fn=cmd_sr)

    i = sub.add_parser("interp", help="blend psnr and gan generator parameters")
    i.add_argument("--psnr", required=True)
    i.add_argument("--gan", required=True)
    i.add_argument("--alpha", required=True, help="value in [0, 1] or 'sweep' for 0, 0.2, ..., 1")
    i.add_argument("--out", required=True)
    i.add_argument("--in", dest="inp", help="optional LR image or directory to render per alpha")
    i.set_defaults(fn=cmd_interp)

    e = sub.add_parser("eval", help="PSNR/SSIM on luma, NIQE and perceptual index")
    e.add_argument("--sr", required=True)
    e.add_argument("--hr")
    e.add_argument("--ma-scores")
    e.add_argument("--border-crop", type=int, default=4)
    e.add_argument("--report", required=True)
    e.add_argument("--niqe-model")
    e.add_argument("--no-niqe", action="store_true")
    e.set_defaults(fn=cmd_eval)

    f = sub.add_parser("feat-stats", help="activated fraction of VGG19 features per layer")
    f.add_argument("--img", required=True)
    f.add_argument("--layers", default="22,54")
    f.add_argument("--vgg-weights")
    f.set_defaults(fn=cmd_feat_stats)

    n = sub.add_parser("fit-niqe", help="fit a pristine NIQE model from a directory or manifest")
    n.add_argument("--images", required=True)
    n.add_argument("--out", required=True)
    n.add_argument("--patch-size", type=int, default=96)
    n.add_argument("--sharpness", type=float, default=0.75)
    n.set_defaults(fn=cmd_fit_niqe)

    r = sub.add_parser("report", help="check and summarise an eval report")
    r.add_argument("--report", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def _fail(category: str, message: str, code: int, field: str | None = None) -> int:
    rec = {"error": category, "message": message}
    if field:
        rec["field"] = field
    print(json.dumps(rec), file=sys.stderr)
    return code


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except UsageError as e:
        return _fail("usage", str(e), 2)
    except ConfigurationError as e:
        return _fail("config", str(e), 3, e.field)
    except TrainingDiverged as e:
        return _fail("diverged", str(e), 5)
    except (ValueError, FileNotFoundError) as e:
        return _fail("invalid-argument", str(e), 4)
    except KeyboardInterrupt:
        return _fail("interrupted", "interrupted", 130)


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
