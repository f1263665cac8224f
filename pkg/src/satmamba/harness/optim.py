"""AdamW with decoupled weight decay and the warmup + half-cycle cosine
learning-rate schedule.

Parameters are adopted into one flat buffer per dtype so the update is a
handful of vectorized passes instead of per-array work; each Tensor's
``data`` becomes a view into its buffer and is updated in place.
"""

from __future__ import annotations

import math

import numpy as np


def lr_at_epoch(epoch: int, total_epochs: int, warmup_epochs: int,
                base_lr: float, min_lr: float = 0.0) -> float:
    """Linear warmup to base_lr, then half-cycle cosine decay to min_lr."""
    if warmup_epochs > total_epochs:
        raise ValueError("warmup longer than the whole run")
    if epoch < warmup_epochs:
        return base_lr * (epoch + 1) / warmup_epochs
    span = max(1, total_epochs - warmup_epochs)
    t = (epoch - warmup_epochs) / span
    return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * t))


class AdamW:
    """Standard AdamW; decay applies to matrices only (ndim >= 2), the
    usual convention for norms/biases/tokens."""

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        self.params = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0

        # group by dtype; adopt each param's storage into the group buffer
        self._groups = {}
        slots = {}
        for name, p in self.params:
            dt = np.dtype(p.dtype)
            slots.setdefault(dt, []).append((name, p))
        self._slices = {}
        for dt, members in slots.items():
            total = sum(p.size for _, p in members)
            flat = np.empty(total, dtype=dt)
            decay_mask = np.zeros(total, dtype=dt)
            offset = 0
            for name, p in members:
                n = p.size
                view = flat[offset:offset + n].reshape(p.shape)
                view[...] = p.data
                p.data = view
                if p.data.ndim >= 2:
                    decay_mask[offset:offset + n] = 1.0
                self._slices[name] = (dt, offset, n)
                offset += n
            self._groups[dt] = {
                "flat": flat,
                "m": np.zeros(total, dtype=dt),
                "v": np.zeros(total, dtype=dt),
                "g": np.zeros(total, dtype=dt),
                "decay_mask": decay_mask,
                "s1": np.empty(total, dtype=dt),
                "s2": np.empty(total, dtype=dt),
            }

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for dt, grp in self._groups.items():
            g = grp["g"]
            g[:] = 0.0
            missing = []
            present = 0
            for name, p in self.params:
                if self._slices[name][0] != dt:
                    continue
                _, offset, n = self._slices[name]
                if p.grad is None:
                    missing.append((offset, n))
                else:
                    g[offset:offset + n] = p.grad.reshape(-1)
                    present += 1
            if present == 0:
                continue
            m, v, flat, s1, s2 = grp["m"], grp["v"], grp["flat"], grp["s1"], grp["s2"]
            # in-place and allocation-free: s1/s2 are preallocated scratch
            np.multiply(m, b1, out=m)
            np.multiply(g, 1.0 - b1, out=s1)
            np.add(m, s1, out=m)
            np.multiply(v, b2, out=v)
            np.multiply(g, g, out=s1)
            np.multiply(s1, 1.0 - b2, out=s1)
            np.add(v, s1, out=v)
            np.divide(v, bc2, out=s1)
            np.sqrt(s1, out=s1)
            np.add(s1, self.eps, out=s1)
            np.divide(m, bc1, out=s2)
            np.divide(s2, s1, out=s2)
            if self.weight_decay:
                np.multiply(flat, grp["decay_mask"], out=s1)
                np.multiply(s1, self.weight_decay, out=s1)
                np.add(s2, s1, out=s2)
            np.multiply(s2, self.lr, out=s2)
            if missing:
                # slices without a gradient keep their values; their moments
                # were advanced with g = 0, so rewind both
                for offset, n in missing:
                    s2[offset:offset + n] = 0.0
                    np.divide(m[offset:offset + n], b1, out=m[offset:offset + n])
                    np.divide(v[offset:offset + n], b2, out=v[offset:offset + n])
            np.subtract(flat, s2, out=flat)

    # -- checkpoint integration ------------------------------------------

    def _slice(self, kind, name):
        dt, offset, n = self._slices[name]
        return self._groups[dt][kind][offset:offset + n]

    def state_arrays(self) -> dict:
        out = {"opt.step": np.asarray([float(self.step_count)], dtype=np.float64)}
        for name, p in self.params:
            out[f"opt.m.{name}"] = self._slice("m", name).reshape(p.shape).copy()
            out[f"opt.v.{name}"] = self._slice("v", name).reshape(p.shape).copy()
        return out

    def load_state_arrays(self, arrays: dict):
        self.step_count = int(arrays["opt.step"][0])
        for name, p in self.params:
            self._slice("m", name)[:] = arrays[f"opt.m.{name}"].reshape(-1)
            self._slice("v", name)[:] = arrays[f"opt.v.{name}"].reshape(-1)
