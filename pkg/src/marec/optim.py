"""Adam optimizer with per-tensor moment state."""

import numpy as np

from .errors import NumericError


class AdamState:
    """First/second moments and step counter for one parameter tensor."""

    __slots__ = ("step", "m", "v", "lr", "beta1", "beta2", "eps")

    def __init__(self, shape, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.step = 0
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(param, grad, state):
    """Apply one bias-corrected Adam update in place."""
    if grad.shape != param.data.shape:
        raise NumericError("adam_step gradient/parameter shape mismatch")
    if not np.all(np.isfinite(grad)):
        raise NumericError("NaN/Inf gradient; step aborted")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    mhat = state.m / (1.0 - state.beta1**state.step)
    vhat = state.v / (1.0 - state.beta2**state.step)
    param.data = param.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)


class Adam:
    """Adam over a named parameter dict; state created lazily per tensor."""

    def __init__(self, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.states = {}

    def step(self, params, skip=()):
        """Update every tensor in `params` that has a gradient.

        `skip` is a collection of names left untouched (warm-up freezing);
        their gradients are discarded without advancing moment state.
        """
        for name, p in params.items():
            if p.grad is None or name in skip:
                continue
            st = self.states.get(name)
            if st is None:
                st = AdamState(p.data.shape, self.lr, self.beta1, self.beta2, self.eps)
                self.states[name] = st
            adam_step(p, p.grad, st)

    def state_arrays(self, prefix):
        """Flatten moment state into named arrays for checkpointing."""
        out = {}
        for name, st in self.states.items():
            out[f"{prefix}|{name}|m"] = st.m
            out[f"{prefix}|{name}|v"] = st.v
            out[f"{prefix}|{name}|step"] = np.array(st.step)
        return out

    def load_state_arrays(self, prefix, arrays):
        names = set()
        for key in arrays:
            if key.startswith(prefix + "|") and key.endswith("|m"):
                names.add(key[len(prefix) + 1 : -2])
        for name in names:
            st = AdamState(arrays[f"{prefix}|{name}|m"].shape, self.lr, self.beta1, self.beta2, self.eps)
            st.m = arrays[f"{prefix}|{name}|m"].copy()
            st.v = arrays[f"{prefix}|{name}|v"].copy()
            st.step = int(arrays[f"{prefix}|{name}|step"])
            self.states[name] = st
