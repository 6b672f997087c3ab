"""Positive feature map, squash non-linearity and row softmax.

All functions work elementwise on arrays of any shape (softmax along the
last axis), so the batched model code can call them directly.
"""

from __future__ import annotations

from enum import Enum

import numpy as np


def as_float(x) -> np.ndarray:
    """Float array keeping extended precision when the input carries it."""
    x = np.asarray(x)
    return x.astype(np.result_type(x.dtype, np.float64), copy=False)


class FeatureMapKind(str, Enum):
    ELU_PLUS_ONE = "elu_plus_one"
    IDENTITY = "identity"


class SquashKind(str, Enum):
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


def elu(x: np.ndarray) -> np.ndarray:
    x = as_float(x)
    # expm1 on the clipped argument avoids overflow warnings on the unused branch
    return np.where(x >= 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    x = as_float(x)
    return np.where(x >= 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


def phi(x: np.ndarray, kind: FeatureMapKind = FeatureMapKind.ELU_PLUS_ONE) -> np.ndarray:
    """``elu(x) + 1``, strictly positive; ``IDENTITY`` passes ``x`` through."""
    if FeatureMapKind(kind) is FeatureMapKind.IDENTITY:
        return as_float(x).copy()
    x = as_float(x)
    # exp directly rather than expm1 + 1, which rounds to 0 below about -37
    return np.where(x >= 0.0, x + 1.0, np.exp(np.minimum(x, 0.0)))


def phi_grad(x: np.ndarray, kind: FeatureMapKind = FeatureMapKind.ELU_PLUS_ONE) -> np.ndarray:
    if FeatureMapKind(kind) is FeatureMapKind.IDENTITY:
        return np.ones_like(as_float(x))
    return elu_grad(x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = as_float(x)
    # exp of a non-positive argument only, for either sign of x
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def squash(x: np.ndarray, kind: SquashKind = SquashKind.SIGMOID) -> np.ndarray:
    if SquashKind(kind) is SquashKind.IDENTITY:
        return as_float(x).copy()
    return sigmoid(x)


def squash_grad_from_output(y: np.ndarray, kind: SquashKind = SquashKind.SIGMOID) -> np.ndarray:
    """Derivative of the squash expressed through its output ``y``."""
    if SquashKind(kind) is SquashKind.IDENTITY:
        return np.ones_like(y)
    return y * (1.0 - y)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    x = as_float(x)
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)
