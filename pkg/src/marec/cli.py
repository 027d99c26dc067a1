"""Command-line entry point.

Subcommands:
  run      train one experiment (config file + flag overrides, or a preset)
  table    collect evaluation tables with deltas vs a baseline run
  figures  export reconstructions, error maps and learner-weight summaries
  count    parameter accounting table at paper or desk scale
  ingest   import a directory of grayscale slices into a corpus
"""

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import kspace, metrics, models, train
from .config import PRESETS, ExperimentConfig
from .errors import MarecError


def _config_from_args(args):
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        base = cfg.to_dict()
    else:
        base = PRESETS[args.preset]().to_dict()
    overrides = {
        "regime": args.regime, "model": args.model, "pn_kind": args.pn_kind,
        "epochs": args.epochs, "warmup_epochs": args.warmup_epochs,
        "warm_start": args.warm_start, "acceleration": args.acceleration,
        "output_root": args.output_root, "extent": args.extent,
        "slices_per_anatomy": args.slices, "ingest_dir": args.ingest_dir,
        "data_seed": args.data_seed, "init_seed": args.init_seed,
        "mask_seed": args.mask_seed, "shuffle_seed": args.shuffle_seed,
    }
    env_root = os.environ.get("MAREC_OUTPUT_ROOT")
    if env_root and args.output_root is None:
        base["output_root"] = env_root
    for key, val in overrides.items():
        if val is not None:
            base[key] = val
    if args.anatomy:
        base["anatomies"] = tuple(args.anatomy)
    if args.cold_start:
        base["cold_start"] = True
    return ExperimentConfig.from_dict(base)


def cmd_run(args):
    cfg = _config_from_args(args)
    run_dir = train.run_regime(cfg, run_dir=args.run_dir, resume=args.resume)
    print(f"run complete: {run_dir}")
    return 0


def _final_scores(run_dir):
    """Best-checkpoint per-anatomy scores recomputed from a run directory."""
    run_dir = Path(run_dir)
    cfg = ExperimentConfig.load(run_dir / "config.json")
    ckpt = run_dir / "best.npz"
    if not ckpt.exists():
        ckpt = run_dir / "final.npz"
    trainer = train.Trainer(cfg)
    arrays, _ = models.load_checkpoint(ckpt)
    models.restore_model(trainer.model, arrays)
    return cfg, trainer.evaluate("val"), trainer


def _eval_manifest(cfg):
    return {
        "anatomies": list(cfg.anatomies), "extent": cfg.extent,
        "slices_per_anatomy": cfg.slices_per_anatomy,
        "val_fraction": cfg.val_fraction, "data_seed": cfg.data_seed,
        "mask_seed": cfg.mask_seed, "acceleration": cfg.acceleration,
        "center_fraction": cfg.center_fraction, "ingest_dir": cfg.ingest_dir,
    }


def cmd_table(args):
    base_cfg, base_scores, _ = _final_scores(args.baseline)
    rows = []
    for rd in [args.baseline] + args.run_dirs:
        cfg, scores, _ = _final_scores(rd)
        if _eval_manifest(cfg) != _eval_manifest(base_cfg):
            diff = {k: (v, _eval_manifest(base_cfg)[k])
                    for k, v in _eval_manifest(cfg).items()
                    if v != _eval_manifest(base_cfg)[k]}
            raise MarecError(f"run {rd} evaluated on a different set than the "
                            f"baseline; differing fields: {diff}")
        training = "+".join(a[:1].upper() for a in cfg.anatomies)
        row = {"regime": cfg.regime, "model": f"{cfg.model}+{cfg.pn_kind}",
               "training_anatomy": training, "run": str(rd)}
        for label in base_cfg.anatomies:
            if label in scores:
                row[f"{label}_psnr"] = round(scores[label]["psnr"], 4)
                row[f"{label}_ssim"] = round(scores[label]["ssim"] * 100, 4)
                row[f"{label}_dpsnr"] = round(
                    scores[label]["psnr"] - base_scores[label]["psnr"], 4)
                row[f"{label}_dssim"] = round(
                    (scores[label]["ssim"] - base_scores[label]["ssim"]) * 100, 4)
        rows.append(row)
    cols = ["regime", "model", "training_anatomy"]
    for label in base_cfg.anatomies:
        cols += [f"{label}_psnr", f"{label}_ssim", f"{label}_dpsnr", f"{label}_dssim"]
    cols.append("run")
    out = Path(args.output) if args.output else None
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=cols, restval="")
        w.writeheader()
        w.writerows(rows)
    finally:
        if out:
            fh.close()
            print(f"wrote {out}")
    return 0


def cmd_figures(args):
    run_dir = Path(args.run_dir)
    cfg, scores, trainer = _final_scores(run_dir)
    fig_dir = run_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    for idx, label in enumerate(cfg.anatomies):
        mask = trainer.masks[(label, "val")]
        val = [e["slice"] for e in trainer._cache[label] if e["slice"].split == "val"]
        if not val:
            continue
        s = val[0]
        meas = kspace.undersample(s.image, mask)
        if cfg.model == "dccnn":
            rec = trainer.model.reconstruct(meas, mask, s.anatomy, mode="eval")
        else:
            rec = trainer.model.reconstruct(kspace.zero_filled(meas, mask),
                                            s.anatomy, mode="eval")
        data_mod.export_grayscale(fig_dir / f"{label}_recon.png", rec.magnitude(), bits=8)
        emap = metrics.error_map(rec.magnitude(), s.image.magnitude())
        # fixed scale: 0 -> black, clip value -> white
        from PIL import Image
        arr = (emap / 0.1 * 255).round().astype(np.uint8)
        Image.fromarray(arr, mode="L").save(fig_dir / f"{label}_error.png")
    rows = metrics.learner_weight_summary(trainer.model)
    summary = fig_dir / "learner_weights.csv"
    with open(summary, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["block", "anatomy", "learner", "mean_weight"])
        w.writeheader()
        w.writerows(rows)
    if not rows:
        print("note: all-shared model, learner weight summary is empty")
    print(f"wrote figures to {fig_dir}")
    return 0


def cmd_count(args):
    if args.scale == "paper":
        cfg = models.DccnnConfig()
    else:
        cfg = models.desk_dccnn_config()
    rows = metrics.count_report(cfg)
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=["fashion", "model", "shared",
                                           "specific_per_anatomy", "sum"])
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.output:
            fh.close()
            print(f"wrote {args.output}")
    return 0


def cmd_ingest(args):
    slices, errors = data_mod.ingest_external(args.directory, args.label,
                                              args.extent, args.extent)
    for fname, why in errors:
        print(f"skipped {fname}: {why}", file=sys.stderr)
    out = Path(args.output)
    datasets = {args.label: slices}
    n_val = max(1, int(round(len(slices) * 0.25))) if slices else 0
    for s in slices[len(slices) - n_val :]:
        s.split = "val"
    data_mod.save_corpus(out, datasets, seed=0)
    print(f"ingested {len(slices)} slices ({len(errors)} skipped) into {out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="marec",
                                description="multi-anatomy MRI reconstruction")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train one experiment")
    r.add_argument("--config", help="JSON config file")
    r.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    r.add_argument("--regime", choices=("oaon", "maon", "mapn"))
    r.add_argument("--model", choices=("dccnn", "unet"))
    r.add_argument("--pn-kind", dest="pn_kind",
                   choices=("pn0", "pn1", "pn2", "pn3", "pn4", "pn4_shared"))
    r.add_argument("--anatomy", action="append",
                   help="anatomy label (repeat; one label selects oaon data)")
    r.add_argument("--epochs", type=int)
    r.add_argument("--warmup-epochs", dest="warmup_epochs", type=int)
    r.add_argument("--warm-start", dest="warm_start")
    r.add_argument("--cold-start", dest="cold_start", action="store_true")
    r.add_argument("--acceleration", type=int)
    r.add_argument("--extent", type=int)
    r.add_argument("--slices", type=int)
    r.add_argument("--ingest-dir", dest="ingest_dir")
    r.add_argument("--data-seed", dest="data_seed", type=int)
    r.add_argument("--init-seed", dest="init_seed", type=int)
    r.add_argument("--mask-seed", dest="mask_seed", type=int)
    r.add_argument("--shuffle-seed", dest="shuffle_seed", type=int)
    r.add_argument("--output-root", dest="output_root")
    r.add_argument("--run-dir", dest="run_dir")
    r.add_argument("--resume", action="store_true")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("table", help="evaluation table with deltas")
    t.add_argument("baseline", help="baseline run directory (deltas vs this)")
    t.add_argument("run_dirs", nargs="*", help="additional run directories")
    t.add_argument("--output", "-o")
    t.set_defaults(func=cmd_table)

    f = sub.add_parser("figures", help="error maps and learner weights")
    f.add_argument("run_dir")
    f.set_defaults(func=cmd_figures)

    c = sub.add_parser("count", help="parameter accounting table")
    c.add_argument("--scale", default="paper", choices=("paper", "desk"))
    c.add_argument("--output", "-o")
    c.set_defaults(func=cmd_count)

    i = sub.add_parser("ingest", help="import grayscale slices")
    i.add_argument("directory")
    i.add_argument("--label", default="external")
    i.add_argument("--extent", type=int, default=64)
    i.add_argument("--output", "-o", default="corpus")
    i.set_defaults(func=cmd_ingest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MarecError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
