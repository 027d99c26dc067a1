"""Reconstruction networks assembled from PN blocks.

Dccnn: n_cascades sub-CNNs (stacks of PN blocks with a global residual)
interleaved with hard data-consistency projections in k-space. UNet: 4-level
encoder/decoder on the zero-filled image with shared transposed-conv
up-sampling and skip concatenation.
"""

import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kspace
from .blocks import AnatomyId, ParamRegistry, PnBlock, kaiming_uniform
from .errors import ConfigurationError, DataError

CHECKPOINT_VERSION = 1


@dataclass
class DccnnConfig:
    cascades: int = 5
    blocks_per_subcnn: int = 5
    channels: int = 64
    residual: bool = True
    dc_mode: str = "hard"     # hard replacement, or soft with a learnable weight
    dc_lambda_init: float = 10.0


@dataclass
class UNetConfig:
    levels: int = 4
    base_channels: int = 32


def desk_dccnn_config():
    return DccnnConfig(cascades=2, blocks_per_subcnn=3, channels=16)


def desk_unet_config():
    return UNetConfig(levels=4, base_channels=8)


class Dccnn:
    kind = "dccnn"

    def __init__(self, pn_kind, anatomies, config, seed):
        self.pn_kind = pn_kind
        self.config = config
        self.registry = ParamRegistry(anatomies)
        rng = np.random.default_rng(seed)
        self.cascades = []
        c = config.channels
        for ci in range(config.cascades):
            blocks = []
            for bi in range(config.blocks_per_subcnn):
                cin = 2 if bi == 0 else c
                cout = 2 if bi == config.blocks_per_subcnn - 1 else c
                last = bi == config.blocks_per_subcnn - 1
                blocks.append(
                    PnBlock(self.registry, f"casc{ci}.blk{bi}", cin, cout, pn_kind,
                            rng, activation=not last)
                )
            self.cascades.append(blocks)
        if config.dc_mode == "soft":
            self.registry.add_shared("dc.lam", np.array(config.dc_lambda_init))
        elif config.dc_mode != "hard":
            raise ConfigurationError(f"unknown dc_mode: {config.dc_mode!r}")
        self.registry.census()

    def _dc(self, k, s, mask):
        if self.config.dc_mode == "hard":
            return kspace.dc_op(k, s, mask)
        lam = self.registry.shared["dc.lam"]
        keep = ad.Tensor(mask.columns.astype(np.float64)[None, None, None, :])
        inv = ad.Tensor(1.0 - keep.data)
        blended = (k + ad.mul(lam, s)) * ad.power(ad.add(lam, ad.Tensor(1.0)), -1.0)
        return ad.add(ad.mul(k, inv), ad.mul(blended, keep))

    def switch_anatomy(self, anatomy):
        self.registry.switch(anatomy)

    def forward_kspace(self, s, mask, mode):
        """s: (B,2,H,W) measured k-space Tensor; returns the image Tensor."""
        x = kspace.ifft2_op(s)
        for blocks in self.cascades:
            h = x
            for blk in blocks:
                h = blk(h, mode)
            y = ad.add(x, h) if self.config.residual else h
            k = kspace.fft2_op(y)
            k = self._dc(k, s, mask)
            x = kspace.ifft2_op(k)
        return x

    def reconstruct(self, s, mask, anatomy, mode="eval"):
        """ComplexImage (k-space) in, ComplexImage (image) out."""
        if s.domain != kspace.KSPACE:
            raise ConfigurationError("dccnn expects measured k-space input")
        self.switch_anatomy(anatomy)
        st = ad.Tensor(np.stack([s.real, s.imag])[None])
        out = self.forward_kspace(st, mask, mode)
        return kspace.from_network(out, kspace.IMAGE)


class UNet:
    kind = "unet"

    def __init__(self, pn_kind, anatomies, config, seed):
        self.pn_kind = pn_kind
        self.config = config
        self.registry = ParamRegistry(anatomies)
        rng = np.random.default_rng(seed)
        reg = self.registry
        L = config.levels
        b = config.base_channels
        self.enc = []
        cin = 2
        for l in range(L):
            ch = b * (2**l)
            self.enc.append([
                PnBlock(reg, f"enc{l}.blk0", cin, ch, pn_kind, rng),
                PnBlock(reg, f"enc{l}.blk1", ch, ch, pn_kind, rng),
            ])
            cin = ch
        bch = b * (2**L)
        self.bottleneck = [
            PnBlock(reg, "bott.blk0", cin, bch, pn_kind, rng),
            PnBlock(reg, "bott.blk1", bch, bch, pn_kind, rng),
        ]
        self.dec = []
        up_in = bch
        for l in reversed(range(L)):
            ch = b * (2**l)
            # shared transposed conv halves channels and doubles extent
            reg.add_shared(f"dec{l}.up.w", kaiming_uniform(rng, (up_in, ch, 2, 2), up_in * 4))
            reg.add_shared(f"dec{l}.up.b", np.zeros(ch))
            self.dec.append((l, [
                PnBlock(reg, f"dec{l}.blk0", ch * 2, ch, pn_kind, rng),
                PnBlock(reg, f"dec{l}.blk1", ch, ch, pn_kind, rng),
            ]))
            up_in = ch
        # plain output conv: no normalization or activation on the estimate
        reg.add_shared("out.conv.w", kaiming_uniform(rng, (2, b, 3, 3), b * 9))
        reg.add_shared("out.conv.b", np.zeros(2))
        self.registry.census()

    def switch_anatomy(self, anatomy):
        self.registry.switch(anatomy)

    def forward(self, x, mode):
        """x: (B,2,H,W) zero-filled image Tensor; same-shape output."""
        H, W = x.data.shape[2], x.data.shape[3]
        div = 2**self.config.levels
        if H % div or W % div:
            raise ConfigurationError(f"extents {H}x{W} not divisible by {div}")
        reg = self.registry
        skips = []
        h = x
        for blocks in self.enc:
            for blk in blocks:
                h = blk(h, mode)
            skips.append(h)
            h = ad.max_pool2(h)
        for blk in self.bottleneck:
            h = blk(h, mode)
        for (l, blocks), skip in zip(self.dec, reversed(skips)):
            h = ad.conv2d_transpose(h, reg.shared[f"dec{l}.up.w"], reg.shared[f"dec{l}.up.b"])
            h = ad.concat([skip, h], axis=1)
            for blk in blocks:
                h = blk(h, mode)
        return ad.conv2d(h, reg.shared["out.conv.w"], reg.shared["out.conv.b"], padding=1)

    def reconstruct(self, x_u, anatomy, mode="eval"):
        """Zero-filled ComplexImage in, reconstructed ComplexImage out."""
        if x_u.domain != kspace.IMAGE:
            raise ConfigurationError("unet expects a zero-filled image input")
        self.switch_anatomy(anatomy)
        t = ad.Tensor(np.stack([x_u.real, x_u.imag])[None])
        return kspace.from_network(self.forward(t, mode), kspace.IMAGE)


def build_model(kind, pn_kind, anatomies, config=None, seed=0):
    """Construct a network and return it (registry attached as .registry)."""
    anatomies = [a if isinstance(a, AnatomyId) else AnatomyId(i, a)
                 for i, a in enumerate(anatomies)]
    if kind == "dccnn":
        return Dccnn(pn_kind, anatomies, config or DccnnConfig(), seed)
    if kind == "unet":
        return UNet(pn_kind, anatomies, config or UNetConfig(), seed)
    raise ConfigurationError(f"unknown model kind: {kind}")


# -- checkpointing ---------------------------------------------------------


def checkpoint_arrays(model):
    """Flat name->array mapping with partition tags encoded in the keys."""
    reg = model.registry
    out = {"__version__": np.array(CHECKPOINT_VERSION)}
    for name, t in reg.shared.items():
        out[f"shared|{name}"] = t.data
    for name, a in reg.shared_buffers.items():
        out[f"sharedbuf|{name}"] = a
    for anat, params, bufs in zip(reg.anatomies, reg.specific, reg.specific_buffers):
        for name, t in params.items():
            out[f"specific|{anat.label}|{name}"] = t.data
        for name, a in bufs.items():
            out[f"specificbuf|{anat.label}|{name}"] = a
    return out


def save_checkpoint(path, model, config_dict=None, extra_arrays=None):
    arrays = checkpoint_arrays(model)
    if extra_arrays:
        arrays.update(extra_arrays)
    meta = json.dumps(config_dict or {}, sort_keys=True)
    arrays["__meta__"] = np.frombuffer(meta.encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    with np.load(path) as z:
        arrays = {k: z[k].copy() for k in z.files}
    meta = {}
    if "__meta__" in arrays:
        meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    return arrays, meta


def restore_model(model, arrays, strict=True):
    """Load checkpoint arrays into a model with matching layout."""
    reg = model.registry
    def take(key, target_shape):
        if key not in arrays:
            if strict:
                raise DataError(f"checkpoint missing tensor {key}")
            return None
        a = arrays[key]
        if a.shape != target_shape:
            raise DataError(f"shape mismatch for {key}: {a.shape} vs {target_shape}")
        return a
    for name, t in reg.shared.items():
        a = take(f"shared|{name}", t.data.shape)
        if a is not None:
            t.data = a.astype(np.float64).copy()
    for name, arr in reg.shared_buffers.items():
        a = take(f"sharedbuf|{name}", arr.shape)
        if a is not None:
            arr[...] = a
    for anat, params, bufs in zip(reg.anatomies, reg.specific, reg.specific_buffers):
        for name, t in params.items():
            a = take(f"specific|{anat.label}|{name}", t.data.shape)
            if a is not None:
                t.data = a.astype(np.float64).copy()
        for name, arr in bufs.items():
            a = take(f"specificbuf|{anat.label}|{name}", arr.shape)
            if a is not None:
                arr[...] = a


def warm_start_from_shared(model, arrays):
    """Initialize a per-anatomy model from an all-shared (pn0) checkpoint.

    Shared conv weights are copied by name; shared BN affine weights and
    running stats are replicated into every anatomy's specific set. Adapter
    convs stay at their neutral zeros, so a pn1/pn3/pn4 model starts exactly
    at the source model's function.
    """
    reg = model.registry
    copied = 0
    for name, t in reg.shared.items():
        key = f"shared|{name}"
        if key in arrays:
            if arrays[key].shape != t.data.shape:
                raise DataError(f"warm start shape mismatch for {name}: "
                                f"{arrays[key].shape} vs {t.data.shape}")
            t.data = arrays[key].astype(np.float64).copy()
            copied += 1
    for d in reg.specific:
        for name, t in d.items():
            key = f"shared|{name}"
            if key in arrays:
                if arrays[key].shape != t.data.shape:
                    raise DataError(f"warm start shape mismatch for {name}")
                t.data = arrays[key].astype(np.float64).copy()
                copied += 1
    for bufs in reg.specific_buffers:
        for name, arr in bufs.items():
            key = f"sharedbuf|{name}"
            if key in arrays:
                arr[...] = arrays[key]
    for name, arr in reg.shared_buffers.items():
        key = f"sharedbuf|{name}"
        if key in arrays:
            arr[...] = arrays[key]
    if copied == 0:
        raise DataError("warm start found no matching tensors")
    return copied
