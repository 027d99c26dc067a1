"""Convolution block family with anatomy-shared and anatomy-specific learners.

Every block owns a shared 3x3 conv (bias-free; normalization supplies the
shift) and, depending on its kind, per-anatomy add-ons:

  pn0         Conv - BN - LeakyReLU, everything shared
  pn1         per-anatomy BN, all else shared
  pn2         per-anatomy BN + squeeze/excite channel gate (two dense layers)
  pn3         per-anatomy BN + series 1x1 conv on the block output channels
  pn4         per-anatomy BN + parallel 1x1 conv from the block input
  pn4_shared  three parallel 1x1 convs and BN, all shared (ablation variant)

The ParamRegistry keeps the shared/specific partition by name; an anatomy
switch selects which specific set subsequent forward passes read.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError

PN_KINDS = ("pn0", "pn1", "pn2", "pn3", "pn4", "pn4_shared")
SHARED_KINDS = ("pn0", "pn4_shared")


@dataclass(frozen=True)
class AnatomyId:
    index: int
    label: str


class ParamRegistry:
    """Named tensors and buffers partitioned into one shared set and N
    per-anatomy specific sets (identical name/shape layout across anatomies).
    """

    def __init__(self, anatomies):
        if len(set(a.label for a in anatomies)) != len(anatomies):
            raise ConfigurationError("anatomy labels must be unique")
        self.anatomies = list(anatomies)
        self.shared = {}
        self.specific = [{} for _ in anatomies]
        self.shared_buffers = {}
        self.specific_buffers = [{} for _ in anatomies]
        self.active = 0

    # -- registration ------------------------------------------------------

    def add_shared(self, name, data):
        if name in self.shared:
            raise ConfigurationError(f"duplicate shared name: {name}")
        t = ad.Tensor(data, requires_grad=True)
        self.shared[name] = t
        return t

    def add_specific(self, name, data):
        """Register one tensor per anatomy, all starting from the same values."""
        out = []
        for d in self.specific:
            if name in d:
                raise ConfigurationError(f"duplicate specific name: {name}")
            t = ad.Tensor(np.array(data, copy=True), requires_grad=True)
            d[name] = t
            out.append(t)
        return out

    def add_shared_buffer(self, name, data):
        arr = np.asarray(data, dtype=np.float64).copy()
        self.shared_buffers[name] = arr
        return arr

    def add_specific_buffer(self, name, data):
        out = []
        for d in self.specific_buffers:
            arr = np.array(data, dtype=np.float64, copy=True)
            d[name] = arr
            out.append(arr)
        return out

    # -- switching and access ----------------------------------------------

    def switch(self, anatomy):
        idx = anatomy.index if isinstance(anatomy, AnatomyId) else int(anatomy)
        if not 0 <= idx < len(self.anatomies):
            raise ConfigurationError(f"unknown anatomy index: {idx}")
        self.active = idx

    def get_specific(self, name):
        return self.specific[self.active][name]

    def get_specific_buffer(self, name):
        return self.specific_buffers[self.active][name]

    def active_specific(self):
        return self.specific[self.active]

    def all_params(self):
        """Iterate (partition_tag, name, tensor) over every trainable tensor."""
        for name, t in self.shared.items():
            yield "shared", name, t
        for anat, d in zip(self.anatomies, self.specific):
            for name, t in d.items():
                yield f"specific:{anat.label}", name, t

    def zero_grad(self):
        for _, _, t in self.all_params():
            t.grad = None

    # -- invariants and accounting -----------------------------------------

    def census(self):
        """Assert the partition invariants; returns the full name set."""
        shared_names = set(self.shared)
        spec_names = set(self.specific[0]) if self.specific else set()
        for d in self.specific:
            if set(d) != spec_names:
                raise ConfigurationError("specific name sets differ across anatomies")
            for n in spec_names:
                if d[n].data.shape != self.specific[0][n].data.shape:
                    raise ConfigurationError(f"specific shape mismatch for {n}")
        if shared_names & spec_names:
            raise ConfigurationError("shared and specific name sets overlap")
        return shared_names | spec_names

    def partition_report(self):
        """Exact parameter counts per partition; buffers count as specific or
        shared state alongside the trainable tensors (running statistics are
        part of what an anatomy carries)."""
        self.census()
        shared = sum(t.data.size for t in self.shared.values())
        shared += sum(a.size for a in self.shared_buffers.values())
        per_anat = 0
        if self.specific:
            per_anat = sum(t.data.size for t in self.specific[0].values())
            per_anat += sum(a.size for a in self.specific_buffers[0].values())
        n = len(self.anatomies)
        return {
            "shared_count": int(shared),
            "specific_count_per_anatomy": int(per_anat),
            "total": int(shared + n * per_anat),
        }


def kaiming_uniform(rng, shape, fan_in, slope=0.01):
    gain = np.sqrt(2.0 / (1.0 + slope**2))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class BatchNorm:
    """BN layer whose affine weights and running stats live in a registry."""

    def __init__(self, reg, name, channels, shared, momentum=0.1, eps=1e-5):
        self.reg = reg
        self.name = name
        self.shared = shared
        self.momentum = momentum
        self.eps = eps
        gamma = np.ones(channels)
        beta = np.zeros(channels)
        mean = np.zeros(channels)
        var = np.ones(channels)
        if shared:
            reg.add_shared(f"{name}.gamma", gamma)
            reg.add_shared(f"{name}.beta", beta)
            reg.add_shared_buffer(f"{name}.mean", mean)
            reg.add_shared_buffer(f"{name}.var", var)
        else:
            reg.add_specific(f"{name}.gamma", gamma)
            reg.add_specific(f"{name}.beta", beta)
            reg.add_specific_buffer(f"{name}.mean", mean)
            reg.add_specific_buffer(f"{name}.var", var)

    def __call__(self, x, mode):
        if self.shared:
            gamma = self.reg.shared[f"{self.name}.gamma"]
            beta = self.reg.shared[f"{self.name}.beta"]
            mean = self.reg.shared_buffers[f"{self.name}.mean"]
            var = self.reg.shared_buffers[f"{self.name}.var"]
        else:
            gamma = self.reg.get_specific(f"{self.name}.gamma")
            beta = self.reg.get_specific(f"{self.name}.beta")
            mean = self.reg.get_specific_buffer(f"{self.name}.mean")
            var = self.reg.get_specific_buffer(f"{self.name}.var")
        return ad.batchnorm(x, gamma, beta, mean, var, mode, self.momentum, self.eps)


class PnBlock:
    """One Conv-BN-LeakyReLU unit configured as one of the PN kinds.

    `activation=False` drops the trailing LeakyReLU (used on the last block
    of a sub-CNN so reconstruction residuals are unconstrained in sign).
    """

    def __init__(self, reg, name, cin, cout, kind, rng, activation=True,
                 slope=0.01, se_reduction=2):
        if kind not in PN_KINDS:
            raise ConfigurationError(f"unknown block kind: {kind}")
        self.reg = reg
        self.name = name
        self.cin = cin
        self.cout = cout
        self.kind = kind
        self.activation = activation
        self.slope = slope
        w = kaiming_uniform(rng, (cout, cin, 3, 3), fan_in=cin * 9, slope=slope)
        reg.add_shared(f"{name}.conv.w", w)
        self.bn = BatchNorm(reg, f"{name}.bn", cout, shared=kind in SHARED_KINDS)
        if kind == "pn2":
            hidden = max(1, cout // se_reduction)
            reg.add_specific(f"{name}.se.fc1.w", kaiming_uniform(rng, (hidden, cout), cout, slope))
            reg.add_specific(f"{name}.se.fc2.w", kaiming_uniform(rng, (cout, hidden), hidden, slope))
        elif kind == "pn3":
            # series adapters start at zero: the block begins exactly at pn1
            reg.add_specific(f"{name}.adapt.w", np.zeros((cout, cout, 1, 1)))
        elif kind == "pn4":
            reg.add_specific(f"{name}.adapt.w", np.zeros((cout, cin, 1, 1)))
        elif kind == "pn4_shared":
            for i in range(3):
                reg.add_shared(f"{name}.par{i}.w", np.zeros((cout, cin, 1, 1)))

    def __call__(self, x, mode):
        reg = self.reg
        w = reg.shared[f"{self.name}.conv.w"]
        kind = self.kind
        if kind in ("pn0", "pn1"):
            y = self.bn(ad.conv2d(x, w, padding=1), mode)
        elif kind == "pn2":
            h = self.bn(ad.conv2d(x, w, padding=1), mode)
            g = ad.global_avg_pool(h)
            g = ad.leaky_relu(ad.dense(g, reg.get_specific(f"{self.name}.se.fc1.w")), self.slope)
            g = ad.sigmoid(ad.dense(g, reg.get_specific(f"{self.name}.se.fc2.w")))
            y = ad.mul(h, ad.reshape(g, (g.data.shape[0], self.cout, 1, 1)))
        elif kind == "pn3":
            h = ad.conv2d(x, w, padding=1)
            a = ad.conv2d(h, reg.get_specific(f"{self.name}.adapt.w"))
            y = self.bn(ad.add(h, a), mode)
        elif kind == "pn4":
            h = ad.conv2d(x, w, padding=1)
            a = ad.conv2d(x, reg.get_specific(f"{self.name}.adapt.w"))
            y = self.bn(ad.add(h, a), mode)
        else:  # pn4_shared
            h = ad.conv2d(x, w, padding=1)
            for i in range(3):
                h = ad.add(h, ad.conv2d(x, reg.shared[f"{self.name}.par{i}.w"]))
            y = self.bn(h, mode)
        if self.activation:
            y = ad.leaky_relu(y, self.slope)
        return y
