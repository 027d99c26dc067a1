"""Training regimes: one-anatomy experts (oaon), naive mixed training (maon),
and the shared/specific parameterized fashion (mapn) with warm-up freezing of
the shared 3x3 convolutions.

Epoch plans are derived deterministically from (shuffle_seed, epoch), so a
resumed run replays exactly the batches an uninterrupted run would have seen.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as data_mod
from . import kspace, metrics, models
from .config import ExperimentConfig
from .errors import ConfigurationError, DataError, NumericError
from .optim import Adam

METRIC_COLUMNS = ("epoch", "anatomy", "split", "psnr", "ssim", "loss")


def frozen_shared_names(registry):
    """Names of the shared 3x3 conv weights (the tensors warm-up freezes)."""
    return {n for n, t in registry.shared.items()
            if n.endswith(".conv.w") and t.data.shape[-1] == 3}


def build_model_from_config(cfg):
    if cfg.model == "dccnn":
        mc = models.DccnnConfig(cfg.cascades, cfg.blocks_per_subcnn, cfg.channels,
                                cfg.residual, cfg.dc_mode)
    elif cfg.model == "unet":
        mc = models.UNetConfig(cfg.unet_levels, cfg.unet_base_channels)
    else:
        raise ConfigurationError(f"unknown model kind: {cfg.model!r}")
    return models.build_model(cfg.model, cfg.pn_kind, list(cfg.anatomies), mc, cfg.init_seed)


def load_datasets(cfg):
    if cfg.ingest_dir:
        slices, errors = data_mod.ingest_external(
            cfg.ingest_dir, cfg.anatomies[0], cfg.extent, cfg.extent
        )
        if not slices:
            raise DataError(f"no usable slices in {cfg.ingest_dir}")
        for fname, why in errors:
            print(f"skipped {fname}: {why}")
        n_val = max(1, int(round(len(slices) * cfg.val_fraction)))
        for s in slices[len(slices) - n_val :]:
            s.split = "val"
        return {cfg.anatomies[0]: slices}
    return data_mod.make_dataset(
        list(cfg.anatomies), cfg.slices_per_anatomy, cfg.extent, cfg.extent,
        cfg.data_seed, val_fraction=cfg.val_fraction,
    )


def make_masks(cfg, epoch=None):
    """One mask per (anatomy, split); optionally resampled per epoch."""
    masks = {}
    for idx, label in enumerate(cfg.anatomies):
        for si, split in enumerate(("train", "val")):
            seed = cfg.mask_seed + 2 * idx + si
            if epoch is not None and split == "train":
                seed += 7919 * (epoch + 1)
            masks[(label, split)] = kspace.make_cartesian_mask(
                cfg.extent, cfg.acceleration, cfg.center_fraction, seed
            )
    return masks


def _slice_channels(s):
    return np.stack([s.image.real, s.image.imag])


class Trainer:
    """Owns the model, per-partition Adam states and the epoch loop."""

    def __init__(self, cfg, run_dir=None):
        self.cfg = cfg
        self.run_dir = Path(run_dir) if run_dir else None
        self.model = build_model_from_config(cfg)
        self.registry = self.model.registry
        self.datasets = load_datasets(cfg)
        self.masks = make_masks(cfg)
        self.frozen = frozen_shared_names(self.registry)
        self.shared_opt = Adam(lr=cfg.lr)
        self.spec_opts = [Adam(lr=cfg.lr) for _ in cfg.anatomies]
        self.epoch = 0
        self.best_psnr = -np.inf
        if cfg.regime == "mapn" and cfg.warm_start:
            arrays, _ = models.load_checkpoint(cfg.warm_start)
            models.warm_start_from_shared(self.model, arrays)
        self._cache = self._precompute()

    # -- data plumbing -----------------------------------------------------

    def _precompute(self):
        """Per-slice target channels and measured k-space per split mask."""
        cache = {}
        for label, slices in self.datasets.items():
            entries = []
            for s in slices:
                mask = self.masks[(s.anatomy.label, s.split)]
                meas = kspace.undersample(s.image, mask)
                entries.append({
                    "slice": s,
                    "target": _slice_channels(s),
                    "meas": np.stack([meas.real, meas.imag]),
                })
            cache[label] = entries
        return cache

    def _refresh_train_masks(self, epoch):
        self.masks = make_masks(self.cfg, epoch=epoch)
        self._cache = self._precompute()

    def epoch_plan(self, epoch):
        labels = list(self.cfg.anatomies)
        counts = [len([s for s in self.datasets[l] if s.split == "train"]) for l in labels]
        regime = "oaon" if self.cfg.regime == "oaon" else "maon"
        return data_mod.make_epoch_plan(
            counts, self.cfg.batch_size, self.cfg.shuffle_seed + epoch, regime
        )

    def _batch_arrays(self, anat_idx, indices):
        label = self.cfg.anatomies[anat_idx]
        train_entries = [e for e in self._cache[label] if e["slice"].split == "train"]
        chosen = [train_entries[i] for i in indices]
        target = np.stack([e["target"] for e in chosen])
        meas = np.stack([e["meas"] for e in chosen])
        return meas, target

    # -- stepping ----------------------------------------------------------

    def forward_batch(self, anat_idx, meas, mode):
        label = self.cfg.anatomies[anat_idx]
        mask = self.masks[(label, "train")]
        self.model.switch_anatomy(anat_idx)
        st = ad.Tensor(meas)
        if self.cfg.model == "dccnn":
            return self.model.forward_kspace(st, mask, mode)
        zf = kspace.ifft2_op(st)
        return self.model.forward(zf, mode)

    def train_step(self, anat_idx, meas, target, batch_id=""):
        """One optimization step on an anatomy-pure batch; returns the loss."""
        cfg = self.cfg
        rec = self.forward_batch(anat_idx, meas, "train")
        loss = ad.l1_loss(rec, ad.Tensor(target))
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss at batch {batch_id!r}")
        self.registry.zero_grad()
        loss.backward()
        in_warmup = cfg.regime == "mapn" and self.epoch < cfg.warmup_epochs
        skip = self.frozen if in_warmup else ()
        self.shared_opt.step(self.registry.shared, skip=skip)
        self.spec_opts[anat_idx].step(self.registry.specific[anat_idx])
        self.registry.zero_grad()
        return value

    def train_epoch(self):
        cfg = self.cfg
        if cfg.mask_resample_per_epoch:
            self._refresh_train_masks(self.epoch)
        plan = self.epoch_plan(self.epoch)
        losses = {label: [] for label in cfg.anatomies}
        for bi, (anat_idx, indices) in enumerate(plan.batches):
            meas, target = self._batch_arrays(anat_idx, indices)
            value = self.train_step(anat_idx, meas, target,
                                    batch_id=f"epoch{self.epoch}/batch{bi}")
            losses[cfg.anatomies[anat_idx]].append(value)
        if (cfg.regime == "mapn" and cfg.reset_adam_after_warmup
                and self.epoch == cfg.warmup_epochs - 1):
            self.shared_opt.states.clear()
        self.epoch += 1
        return {label: float(np.mean(v)) if v else float("nan")
                for label, v in losses.items()}

    # -- evaluation --------------------------------------------------------

    def evaluate(self, split="val"):
        """Per-anatomy PSNR/SSIM means and stds on the given split."""
        out = {}
        for idx, label in enumerate(self.cfg.anatomies):
            mask = self.masks[(label, split)]
            self.model.switch_anatomy(idx)
            ps, ss = [], []
            for e in self._cache[label]:
                s = e["slice"]
                if s.split != split:
                    continue
                meas_img = kspace.undersample(s.image, mask)
                if self.cfg.model == "dccnn":
                    rec = self.model.reconstruct(meas_img, mask, s.anatomy, mode="eval")
                else:
                    rec = self.model.reconstruct(kspace.zero_filled(meas_img, mask),
                                                 s.anatomy, mode="eval")
                tgt = s.image.magnitude()
                ps.append(metrics.psnr(rec.magnitude(), tgt))
                ss.append(metrics.ssim(rec.magnitude(), tgt))
            out[label] = {
                "psnr": float(np.mean(ps)), "psnr_std": float(np.std(ps)),
                "ssim": float(np.mean(ss)), "ssim_std": float(np.std(ss)),
            }
        return out

    # -- persistence -------------------------------------------------------

    def _state_arrays(self):
        arrays = models.checkpoint_arrays(self.model)
        arrays.update(self.shared_opt.state_arrays("adam|shared"))
        for i, opt in enumerate(self.spec_opts):
            arrays.update(opt.state_arrays(f"adam|spec{i}"))
        arrays["__epoch__"] = np.array(self.epoch)
        arrays["__best_psnr__"] = np.array(self.best_psnr)
        return arrays

    def save_state(self, path):
        arrays = self._state_arrays()
        meta = json.dumps(self.cfg.to_dict(), sort_keys=True)
        arrays["__meta__"] = np.frombuffer(meta.encode(), dtype=np.uint8)
        np.savez(path, **arrays)

    def load_state(self, path):
        arrays, _ = models.load_checkpoint(path)
        models.restore_model(self.model, arrays)
        self.shared_opt.load_state_arrays("adam|shared", arrays)
        for i, opt in enumerate(self.spec_opts):
            opt.load_state_arrays(f"adam|spec{i}", arrays)
        self.epoch = int(arrays["__epoch__"])
        self.best_psnr = float(arrays["__best_psnr__"])


def _append_metrics(path, rows):
    new = not path.exists()
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if new:
            w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow(r)


def run_regime(cfg, run_dir=None, resume=False, quiet=False):
    """Execute a full training run; returns the run directory path.

    Artifacts: config.json (with hash), mask files, append-only metrics.csv,
    best.npz (by mean validation PSNR), state.npz (resumable), final.npz.
    """
    if run_dir is None:
        run_dir = Path(cfg.output_root) / f"{cfg.regime}_{cfg.model}_{cfg.pn_kind}_{cfg.hash()}"
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    trainer = Trainer(cfg, run_dir)
    state_path = run_dir / "state.npz"
    if resume:
        if not state_path.exists():
            raise DataError(f"cannot resume: {state_path} does not exist")
        trainer.load_state(state_path)
    else:
        cfg.save(run_dir / "config.json")
        (run_dir / "config.hash").write_text(cfg.hash() + "\n")
        for (label, split), mask in trainer.masks.items():
            (run_dir / f"mask_{label}_{split}.txt").write_text(mask.serialize() + "\n")

    while trainer.epoch < cfg.epochs:
        losses = trainer.train_epoch()
        epoch = trainer.epoch - 1
        rows = [(epoch, label, "train", "", "", f"{losses[label]:.10f}")
                for label in cfg.anatomies]
        if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
            scores = trainer.evaluate("val")
            for label in cfg.anatomies:
                rows.append((epoch, label, "val",
                             f"{scores[label]['psnr']:.6f}",
                             f"{scores[label]['ssim']:.8f}", ""))
            mean_psnr = float(np.mean([scores[l]["psnr"] for l in cfg.anatomies]))
            if mean_psnr > trainer.best_psnr:
                trainer.best_psnr = mean_psnr
                models.save_checkpoint(run_dir / "best.npz", trainer.model,
                                       cfg.to_dict())
            if not quiet:
                msg = " ".join(f"{l}:{scores[l]['psnr']:.2f}dB" for l in cfg.anatomies)
                print(f"epoch {epoch}: {msg}")
        _append_metrics(run_dir / "metrics.csv", rows)
        trainer.save_state(state_path)
    models.save_checkpoint(run_dir / "final.npz", trainer.model, cfg.to_dict())
    return run_dir


def zero_filled_scores(cfg):
    """Per-anatomy zero-filled baseline PSNR/SSIM on the validation split."""
    datasets = data_mod.make_dataset(list(cfg.anatomies), cfg.slices_per_anatomy,
                                     cfg.extent, cfg.extent, cfg.data_seed,
                                     val_fraction=cfg.val_fraction)
    masks = make_masks(cfg)
    out = {}
    for label in cfg.anatomies:
        mask = masks[(label, "val")]
        ps, ss = [], []
        for s in datasets[label]:
            if s.split != "val":
                continue
            zf = kspace.zero_filled(kspace.undersample(s.image, mask), mask)
            ps.append(metrics.psnr(zf.magnitude(), s.image.magnitude()))
            ss.append(metrics.ssim(zf.magnitude(), s.image.magnitude()))
        out[label] = {"psnr": float(np.mean(ps)), "ssim": float(np.mean(ss))}
    return out
