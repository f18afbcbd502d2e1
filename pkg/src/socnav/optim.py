"""Parameter-tree utilities and the first/second-moment adaptive update."""

from __future__ import annotations

import dataclasses

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteGradient(Exception):
    """A gradient contained NaN or inf; parameters were left untouched."""


def named_arrays(obj, prefix: str = ""):
    """Flatten a dataclass tree of numpy arrays into (name, array) pairs.

    Field declaration order is preserved, so the flattening is stable and can
    be zipped across two trees of the same type (params and grads).
    """
    if isinstance(obj, np.ndarray):
        yield prefix, obj
        return
    if dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, (np.ndarray,)) or dataclasses.is_dataclass(value):
                name = f"{prefix}.{f.name}" if prefix else f.name
                yield from named_arrays(value, name)
        return
    raise TypeError(f"cannot flatten {type(obj).__name__} at {prefix!r}")


def tree_map(fn, obj):
    """Apply fn to every array leaf, returning a new tree of the same shape."""
    if isinstance(obj, np.ndarray):
        return fn(obj)
    if dataclasses.is_dataclass(obj):
        kwargs = {}
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, np.ndarray) or dataclasses.is_dataclass(value):
                kwargs[f.name] = tree_map(fn, value)
            else:
                kwargs[f.name] = value
        return type(obj)(**kwargs)
    raise TypeError(f"cannot map over {type(obj).__name__}")


def zeros_like_tree(obj):
    return tree_map(np.zeros_like, obj)


def copy_tree(obj):
    return tree_map(np.copy, obj)


def tree_finite(obj) -> bool:
    return all(np.all(np.isfinite(arr)) for _, arr in named_arrays(obj))


def tree_add_(target, other, scale: float = 1.0) -> None:
    """In-place target += scale * other over matching trees."""
    for (_, dst), (_, src) in zip(named_arrays(target), named_arrays(other)):
        dst += scale * src


def tree_scale_(target, scale: float) -> None:
    for _, arr in named_arrays(target):
        arr *= scale


class AdamState:
    """Per-parameter moment buffers, bias-corrected update."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0

    def update(self, params, grads, lr: float,
               beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
               eps: float = ADAM_EPS) -> None:
        """Mutates params in place. Raises NonFiniteGradient before touching
        anything if any gradient entry is not finite."""
        pairs = list(zip(named_arrays(params), named_arrays(grads)))
        for (_, _), (name, g) in pairs:
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient in {name}")
        self.t += 1
        bc1 = 1.0 - beta1 ** self.t
        bc2 = 1.0 - beta2 ** self.t
        for (name, p), (_, g) in pairs:
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m = self.m[name]
            v = self.v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
