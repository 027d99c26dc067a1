"""Synthetic multi-anatomy phantoms, preprocessing, splits and batch plans.

Three stand-in anatomy profiles (knee/brain/cardiac) produce piecewise-smooth
ellipse composites with deliberately different intensity laws and geometry so
their histograms separate cleanly. Preprocessing mirrors the usual single-coil
pipeline: crop/pad, per-slice z-score of the magnitude, clip to [-6, 6], zero
phase.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .blocks import AnatomyId
from .errors import ConfigurationError, DataError
from .kspace import IMAGE, ComplexImage

CLIP = 6.0


@dataclass
class AnatomyProfile:
    """Generator parameters giving one synthetic anatomy its own intensity
    distribution and structure priors."""

    label: str
    background: float
    n_shapes: tuple          # (min, max) ellipse count
    intensity: tuple         # (low, high) of uniform fill intensity
    axis_range: tuple        # (min, max) semi-axis as fraction of extent
    eccentricity: float      # max |1 - b/a|
    texture_amp: float
    texture_freq: float
    rings: bool = False      # draw annuli instead of filled ellipses


def default_profiles():
    return {
        "knee": AnatomyProfile(
            label="knee", background=0.05, n_shapes=(6, 10),
            intensity=(0.55, 1.0), axis_range=(0.05, 0.18), eccentricity=0.8,
            texture_amp=0.06, texture_freq=6.0,
        ),
        "brain": AnatomyProfile(
            label="brain", background=0.25, n_shapes=(3, 6),
            intensity=(0.3, 0.6), axis_range=(0.12, 0.35), eccentricity=0.35,
            texture_amp=0.03, texture_freq=3.0,
        ),
        "cardiac": AnatomyProfile(
            label="cardiac", background=0.0, n_shapes=(2, 4),
            intensity=(0.7, 1.0), axis_range=(0.1, 0.28), eccentricity=0.3,
            texture_amp=0.02, texture_freq=2.0, rings=True,
        ),
    }


@dataclass
class Slice:
    image: ComplexImage
    anatomy: AnatomyId
    split: str
    index: int


def _ellipse_mask(H, W, cy, cx, ay, ax, theta):
    yy, xx = np.mgrid[0:H, 0:W]
    y = (yy - cy) / H
    x = (xx - cx) / W
    ct, st = np.cos(theta), np.sin(theta)
    u = x * ct + y * st
    v = -x * st + y * ct
    return (u / ax) ** 2 + (v / ay) ** 2 <= 1.0


def raw_phantom(profile, H, W, rng):
    """One nonnegative magnitude image drawn from the profile."""
    img = np.full((H, W), profile.background)
    n = rng.integers(profile.n_shapes[0], profile.n_shapes[1] + 1)
    for _ in range(n):
        cy = rng.uniform(0.25 * H, 0.75 * H)
        cx = rng.uniform(0.25 * W, 0.75 * W)
        a = rng.uniform(*profile.axis_range)
        b = a * (1.0 - rng.uniform(0, profile.eccentricity))
        theta = rng.uniform(0, np.pi)
        level = rng.uniform(*profile.intensity)
        mask = _ellipse_mask(H, W, cy, cx, a, b, theta)
        if profile.rings:
            inner = _ellipse_mask(H, W, cy, cx, 0.6 * a, 0.6 * b, theta)
            mask = mask & ~inner
        img[mask] = level
    # smooth low-frequency texture so slices are not piecewise constant
    yy, xx = np.mgrid[0:H, 0:W]
    for _ in range(3):
        fy = rng.uniform(0.5, profile.texture_freq)
        fx = rng.uniform(0.5, profile.texture_freq)
        ph = rng.uniform(0, 2 * np.pi)
        img += profile.texture_amp * np.sin(2 * np.pi * (fy * yy / H + fx * xx / W) + ph)
    return np.clip(img, 0.0, None)


def center_crop_or_pad(img, H, W):
    h, w = img.shape
    out = np.zeros((H, W))
    sy, ty = max(0, (h - H) // 2), max(0, (H - h) // 2)
    sx, tx = max(0, (w - W) // 2), max(0, (W - w) // 2)
    ch, cw = min(h, H), min(w, W)
    out[ty : ty + ch, tx : tx + cw] = img[sy : sy + ch, sx : sx + cw]
    return out


def preprocess(raw, H=None, W=None):
    """Crop/pad, z-score the magnitude, clip to [-CLIP, CLIP], zero phase.

    Returns the processed real image; raises DataError for zero-variance
    slices (nothing to normalize).
    """
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw < 0):
        raise DataError("preprocess expects a nonnegative magnitude image")
    if H is not None:
        raw = center_crop_or_pad(raw, H, W)
    std = raw.std()
    if std == 0:
        raise DataError("zero-variance slice rejected")
    out = (raw - raw.mean()) / std
    return np.clip(out, -CLIP, CLIP)


def generate_phantoms(profile, count, H, W, seed, anatomy=None, val_fraction=0.25):
    """Deterministic list of preprocessed Slices for one profile."""
    rng = np.random.default_rng(seed)
    anatomy = anatomy or AnatomyId(0, profile.label)
    n_val = int(round(count * val_fraction))
    slices = []
    for i in range(count):
        img = preprocess(raw_phantom(profile, H, W, rng))
        split = "val" if i >= count - n_val else "train"
        slices.append(Slice(ComplexImage.from_real(img, IMAGE), anatomy, split, i))
    return slices


def make_dataset(labels, count_per_anatomy, H, W, seed, profiles=None, val_fraction=0.25):
    """Per-anatomy slice lists with equal cardinality; keyed by label."""
    profiles = profiles or default_profiles()
    out = {}
    for idx, label in enumerate(labels):
        if label not in profiles:
            raise ConfigurationError(f"no profile named {label!r}")
        anat = AnatomyId(idx, label)
        out[label] = generate_phantoms(
            profiles[label], count_per_anatomy, H, W, seed + 1000 * idx, anat, val_fraction
        )
    return out


def split_of(dataset, split):
    return [s for s in dataset if s.split == split]


@dataclass
class BatchPlan:
    """Ordered anatomy-pure mini-batches for one epoch."""

    batches: list  # of (anatomy_index, [slice indices])


def make_epoch_plan(per_anatomy_counts, batch_size, seed, regime="maon"):
    """Round-robin plan over anatomy-pure batches.

    `per_anatomy_counts`: list of train-slice counts, one per anatomy; all
    must be equal (fairness) unless a single anatomy is planned (oaon).
    Remainder slices beyond a full batch are dropped so every batch is full.
    """
    if regime == "oaon":
        if len(per_anatomy_counts) != 1:
            raise ConfigurationError("oaon plans cover exactly one anatomy")
    elif len(set(per_anatomy_counts)) > 1:
        raise ConfigurationError(f"unequal slice counts across anatomies: {per_anatomy_counts}")
    rng = np.random.default_rng(seed)
    orders = []
    for n in per_anatomy_counts:
        if n < batch_size:
            raise ConfigurationError("fewer slices than one batch")
        orders.append(rng.permutation(n))
    n_batches = per_anatomy_counts[0] // batch_size
    batches = []
    for bi in range(n_batches):
        for ai, order in enumerate(orders):
            batches.append((ai, list(order[bi * batch_size : (bi + 1) * batch_size])))
    return BatchPlan(batches)


# -- serialization and ingestion -------------------------------------------


def save_corpus(dirpath, datasets, seed):
    """Write slices as .npy plus a manifest with checksums."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": seed, "slices": []}
    for label, slices in datasets.items():
        for s in slices:
            fname = f"{label}_{s.split}_{s.index:04d}.npy"
            np.save(d / fname, s.image.real)
            digest = hashlib.sha256((d / fname).read_bytes()).hexdigest()
            manifest["slices"].append(
                {"file": fname, "label": label, "split": s.split,
                 "index": s.index, "sha256": digest}
            )
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_corpus(dirpath):
    d = Path(dirpath)
    mf = d / "manifest.json"
    if not mf.exists():
        raise DataError(f"no manifest in {dirpath}")
    manifest = json.loads(mf.read_text())
    labels = []
    for rec in manifest["slices"]:
        if rec["label"] not in labels:
            labels.append(rec["label"])
    datasets = {label: [] for label in labels}
    for rec in manifest["slices"]:
        arr = np.load(d / rec["file"])
        anat = AnatomyId(labels.index(rec["label"]), rec["label"])
        datasets[rec["label"]].append(
            Slice(ComplexImage.from_real(arr, IMAGE), anat, rec["split"], rec["index"])
        )
    return datasets


def export_grayscale(path, img, bits=16):
    """Save a real image as 8/16-bit grayscale PNG (linear min/max scaling)."""
    from PIL import Image

    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    scale = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
    if bits == 16:
        arr = (scale * 65535).round().astype(np.uint16)
        Image.fromarray(arr).save(path)
    else:
        arr = (scale * 255).round().astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path)


def ingest_external(dirpath, label, H, W, anatomy_index=0):
    """Read grayscale images from a directory and run them through
    preprocessing. Unreadable or degenerate files are reported and skipped.

    Returns (slices, errors) where errors is a list of (filename, reason).
    """
    from PIL import Image

    d = Path(dirpath)
    if not d.is_dir():
        raise DataError(f"not a directory: {dirpath}")
    slices, errors = [], []
    anat = AnatomyId(anatomy_index, label)
    files = sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() != ".json")
    for i, p in enumerate(files):
        try:
            with Image.open(p) as im:
                arr = np.asarray(im.convert("I"), dtype=np.float64)
            img = preprocess(arr, H, W)
        except DataError as e:
            errors.append((p.name, str(e)))
            continue
        except Exception as e:  # unreadable file: report, keep going
            errors.append((p.name, f"unreadable: {e}"))
            continue
        slices.append(Slice(ComplexImage.from_real(img, IMAGE), anat, "train", i))
    return slices, errors
