"""Lattice encoding of tokens and the conditional-moment operators.

Token ``i`` in ``1..m`` maps to the ``i``-th basis vector of R^m and token 0
to minus the all-ones vector, so the encodings sum to zero over the
vocabulary.  Functions on the vocabulary are length-``(m+1)`` arrays indexed
by token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TokenOutOfRange
from .hmm import HmmModel


def encode(z: int, m: int) -> np.ndarray:
    if not 0 <= z <= m:
        raise TokenOutOfRange(f"token {z} outside 0..{m}")
    if z == 0:
        return -np.ones(m)
    e = np.zeros(m)
    e[z - 1] = 1.0
    return e


def encoding_matrix(m: int) -> np.ndarray:
    """Row ``z`` is ``encode(z, m)``; shape ``(m+1, m)``."""
    return np.vstack([-np.ones((1, m)), np.eye(m)])


def encode_dot(u, z: int) -> float:
    """``u . e(z)`` without forming the dense encoding."""
    u = np.asarray(u)
    return -float(u.sum(axis=-1)) if z == 0 else float(u[..., z - 1])


def decompose(s, m: int | None = None):
    """Split ``s: {0..m} -> R`` as ``s(z) = mean + tilde . e(z)``.

    Works along the last axis, so a stack of functions is decomposed at once.
    Returns ``(mean, tilde)`` with ``tilde`` of length ``m``.
    """
    s = np.asarray(s, dtype=float)
    if m is not None and s.shape[-1] != m + 1:
        raise ValueError(f"expected {m + 1} token values, got {s.shape[-1]}")
    mean = s.mean(axis=-1)
    return mean, s[..., 1:] - mean[..., None]


def reconstruct(mean, tilde) -> np.ndarray:
    """Inverse of :func:`decompose`: values at tokens ``0..m``."""
    tilde = np.asarray(tilde, dtype=float)
    mean = np.asarray(mean, dtype=float)[..., None]
    return np.concatenate([mean - tilde.sum(axis=-1, keepdims=True), mean + tilde], axis=-1)


@dataclass(frozen=True)
class MomentOperators:
    """Per-state drift ``c(x)`` (shape ``(d, m)``) and covariance ``R(x)`` (``(d, m, m)``)."""

    c: np.ndarray
    R: np.ndarray

    @property
    def m(self) -> int:
        return self.c.shape[1]


def build_moments(model: HmmModel) -> MomentOperators:
    C = model.emission
    m = model.m
    c = C[:, 1:] - C[:, :1]
    c0 = C[:, 0][:, None, None]
    eye = np.eye(m)
    R = (np.einsum("xi,ij->xij", c, eye) + c0 * (eye + 1.0)
         - c[:, :, None] * c[:, None, :])
    return MomentOperators(c, R)


def gamma_apply(A, f) -> np.ndarray:
    """Conditional variance of ``f(X_{t+1})`` given ``X_t = x``, for every ``x``."""
    A = np.asarray(A)
    f = np.asarray(f, dtype=float)
    mean = A @ f
    return A @ (f * f) - mean * mean


def augmented(u) -> np.ndarray:
    """Values of ``z -> u . e(z)`` over the vocabulary: ``(-1.u, u)``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return np.concatenate([-u.sum(axis=-1, keepdims=True), u], axis=-1)


def variance_bracket(u, q) -> float:
    """Variance of ``(-1.u, u)`` under the token law ``q``; never negative."""
    a = augmented(u)
    q = np.asarray(q, dtype=float)
    centered = a - q @ a
    return float(q @ (centered * centered))


def binary_reduce(model: HmmModel, z: int) -> np.ndarray:
    """``2 C(:, z) - 1``: the observation reduced to "was z" versus "was not z"."""
    if not 0 <= z < model.vocab_size:
        raise TokenOutOfRange(f"token {z} outside 0..{model.m}")
    return 2.0 * model.emission[:, z] - 1.0
