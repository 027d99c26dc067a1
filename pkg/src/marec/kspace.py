"""MRI physics layer: complex images, Cartesian masks, undersampling and the
hard data-consistency projection, plus differentiable FFT ops for the
unrolled network.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import fourier
from .errors import ConfigurationError

IMAGE = "image"
KSPACE = "kspace"


@dataclass
class ComplexImage:
    """H x W complex field with a domain tag (image or k-space)."""

    real: np.ndarray
    imag: np.ndarray
    domain: str = IMAGE

    def __post_init__(self):
        self.real = np.asarray(self.real, dtype=np.float64)
        self.imag = np.asarray(self.imag, dtype=np.float64)
        if self.real.shape != self.imag.shape:
            raise ConfigurationError("real/imag shapes differ")
        if self.domain not in (IMAGE, KSPACE):
            raise ConfigurationError(f"unknown domain tag: {self.domain!r}")

    @classmethod
    def from_complex(cls, arr, domain):
        arr = np.asarray(arr, dtype=np.complex128)
        return cls(arr.real.copy(), arr.imag.copy(), domain)

    @classmethod
    def from_real(cls, arr, domain=IMAGE):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.copy(), np.zeros_like(arr), domain)

    def to_complex(self):
        return self.real + 1j * self.imag

    @property
    def shape(self):
        return self.real.shape

    def magnitude(self):
        return np.hypot(self.real, self.imag)


@dataclass
class SamplingMask:
    """1-D Cartesian pattern: a sampled column spans all k-space rows."""

    columns: np.ndarray
    acceleration: int
    center_fraction: float
    seed: int

    def __post_init__(self):
        self.columns = np.asarray(self.columns, dtype=bool)

    @property
    def width(self):
        return self.columns.size

    def density(self):
        return float(self.columns.mean())

    def serialize(self):
        bits = "".join("1" if b else "0" for b in self.columns)
        return f"{self.width} {self.acceleration} {self.center_fraction!r} {self.seed} : {bits}"

    @classmethod
    def deserialize(cls, line):
        head, _, bits = line.partition(":")
        parts = head.split()
        if len(parts) != 4:
            raise ConfigurationError(f"bad mask line: {line!r}")
        w, accel, cf, seed = int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3])
        bits = bits.strip()
        if len(bits) != w:
            raise ConfigurationError("mask bitstring length mismatch")
        cols = np.array([c == "1" for c in bits])
        return cls(cols, accel, cf, seed)


def make_cartesian_mask(width, acceleration, center_fraction, seed):
    """Deterministic 1-D Cartesian mask: full center plus uniform random columns.

    Total sampled columns is round(width / acceleration); the center block of
    round(center_fraction * width) low-frequency columns around DC is always
    kept, the remainder drawn uniformly without replacement.
    """
    if acceleration < 1:
        raise ConfigurationError("acceleration must be >= 1")
    n_total = int(round(width / acceleration))
    if n_total < 1 or n_total > width:
        raise ConfigurationError(f"cannot sample {n_total} of {width} columns")
    if acceleration == 1:
        return SamplingMask(np.ones(width, dtype=bool), 1, center_fraction, seed)
    n_center = max(1, int(round(center_fraction * width)))
    if n_center > n_total:
        raise ConfigurationError(
            f"center block ({n_center} cols) exceeds the sampling budget ({n_total})"
        )
    cols = np.zeros(width, dtype=bool)
    start = width // 2 - n_center // 2
    cols[start : start + n_center] = True
    rest = np.flatnonzero(~cols)
    rng = np.random.default_rng(seed)
    extra = rng.choice(rest, size=n_total - n_center, replace=False)
    cols[extra] = True
    return SamplingMask(cols, acceleration, center_fraction, seed)


def undersample(x, mask):
    """Forward model: masked k-space of an image-domain ComplexImage."""
    if x.domain != IMAGE:
        raise ConfigurationError("undersample expects an image-domain input")
    ks = fourier.fft2c(x.to_complex())
    ks = ks * mask.columns[None, :]
    return ComplexImage.from_complex(ks, KSPACE)


def data_consistency(pred, measured, mask):
    """Hard DC: measured values at sampled columns, prediction elsewhere."""
    if pred.shape != measured.shape:
        raise ConfigurationError("data_consistency shape mismatch")
    if pred.domain != KSPACE or measured.domain != KSPACE:
        raise ConfigurationError("data_consistency operates in k-space")
    keep = mask.columns[None, :]
    out = np.where(keep, measured.to_complex(), pred.to_complex())
    return ComplexImage.from_complex(out, KSPACE)


def zero_filled(measured, mask):
    """Zero-filled reconstruction: inverse FFT of the undersampled k-space."""
    if measured.domain != KSPACE:
        raise ConfigurationError("zero_filled expects k-space input")
    return ComplexImage.from_complex(fourier.ifft2c(measured.to_complex()), IMAGE)


def to_network(x):
    """ComplexImage -> Tensor[1,2,H,W] (channel 0 real, channel 1 imaginary)."""
    return ad.Tensor(np.stack([x.real, x.imag])[None])


def from_network(t, domain=IMAGE):
    """Tensor[B,2,H,W] (B==1) or array -> ComplexImage."""
    data = t.data if isinstance(t, ad.Tensor) else np.asarray(t)
    if data.ndim == 4:
        if data.shape[0] != 1:
            raise ConfigurationError("from_network expects a single-item batch")
        data = data[0]
    if data.ndim != 3 or data.shape[0] != 2:
        raise ConfigurationError(f"expected 2-channel data, got shape {data.shape}")
    return ComplexImage(data[0].copy(), data[1].copy(), domain)


# -- differentiable FFT / DC on 2-channel tensors --------------------------


def _pair_to_complex(data):
    return data[:, 0] + 1j * data[:, 1]


def _complex_to_pair(arr):
    return np.stack([arr.real, arr.imag], axis=1)


def fft2_op(x):
    """Centered orthonormal FFT on a (B,2,H,W) tensor.

    The transform is unitary as a real-linear map, so the adjoint used in the
    backward pass is the inverse transform.
    """
    out_data = _complex_to_pair(fourier.fft2c(_pair_to_complex(x.data)))

    def bwd(g):
        if x.requires_grad:
            ad._accumulate(x, _complex_to_pair(fourier.ifft2c(_pair_to_complex(g))))

    return ad._make(out_data, (x,), bwd, "fft2")


def ifft2_op(k):
    """Inverse of fft2_op on a (B,2,H,W) tensor."""
    out_data = _complex_to_pair(fourier.ifft2c(_pair_to_complex(k.data)))

    def bwd(g):
        if k.requires_grad:
            ad._accumulate(k, _complex_to_pair(fourier.fft2c(_pair_to_complex(g))))

    return ad._make(out_data, (k,), bwd, "ifft2")


def dc_op(pred_k, measured_k, mask):
    """Hard data consistency on (B,2,H,W) k-space tensors (differentiable)."""
    keep = ad.Tensor(mask.columns.astype(np.float64)[None, None, None, :])
    inv = ad.Tensor(1.0 - keep.data)
    return ad.add(ad.mul(pred_k, inv), ad.mul(measured_k, keep))
