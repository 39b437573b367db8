"""Optimal control formulas: general vocabulary, binary reduction, T=1 closed form.

All three take the *control-free* part ``g`` of the dual function: at a
given time the dual function is ``y(x) = g(x) + c(x).(u + v(x))`` and the
control enters linearly, so the stationarity condition can be solved for
``u`` directly.  This is the same control that satisfies the implicit
feedback ``u = phi(y(u), v; rho)`` (see :func:`phi_implicit`).
"""

from __future__ import annotations

import numpy as np

from .errors import NotBinary
from .geometry import MomentOperators
from .hmm import HmmModel

SINGULAR_TOL = 1e-12


def pinv_psd(K, rtol: float = SINGULAR_TOL, atol: float = SINGULAR_TOL) -> np.ndarray:
    """Pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues at or below ``max(rtol * largest, atol)`` are treated as zero,
    which keeps the 1x1 case consistent with the binary ``|1 - rho(c)^2|``
    guard.
    """
    K = 0.5 * (K + K.T)
    w, V = np.linalg.eigh(K)
    cut = max(rtol * (w.max() if w.size else 0.0), atol)
    inv = np.where(w > cut, 1.0 / np.where(w > cut, w, 1.0), 0.0)
    return (V * inv) @ V.T


def _moments_under(rho, moments: MomentOperators):
    rho = np.asarray(rho, dtype=float)
    c = moments.c
    rc = rho @ c
    dc = c - rc
    cov_c = (dc * rho[:, None]).T @ dc
    rR = np.einsum("x,xij->ij", rho, moments.R)
    return rc, dc, cov_c, rR


def phi_general(g, v, rho, moments: MomentOperators) -> np.ndarray:
    """Optimal control in R^m for one time step.

    ``g``: control-free part of the dual function (length ``d``);
    ``v``: martingale-representation term, shape ``(m, d)`` (or ``None``);
    ``rho``: measure used for the conditional moments.

    Solves ``K u = -(rho((c - rho(c)) (g + c.v)) + rho(R v))`` with
    ``K = rho(R) + cov_rho(c)``, which is the variance of ``e(Z)`` under the
    predicted token law; ``K`` is inverted by :func:`pinv_psd`.
    """
    rho = np.asarray(rho, dtype=float)
    g = np.asarray(g, dtype=float)
    d, m = moments.c.shape
    v = np.zeros((m, d)) if v is None else np.asarray(v, dtype=float).reshape(m, d)
    rc, dc, cov_c, rR = _moments_under(rho, moments)
    y0 = g + np.einsum("xi,ix->x", moments.c, v)
    rhs = (rho * y0) @ dc + np.einsum("x,xij,jx->i", rho, moments.R, v)
    return -pinv_psd(rR + cov_c) @ rhs


def phi_implicit(y, v, rho, moments: MomentOperators) -> np.ndarray:
    """The feedback map evaluated on a full dual function ``y``.

    ``-rho(R)^+ (rho((c - rho(c)) y) + rho(R v))``.  At the optimum, with
    ``y = g + c.(u + v)`` and ``rho(R)`` invertible, this returns ``u``.
    """
    rho = np.asarray(rho, dtype=float)
    d, m = moments.c.shape
    v = np.zeros((m, d)) if v is None else np.asarray(v, dtype=float).reshape(m, d)
    _, dc, _, rR = _moments_under(rho, moments)
    rhs = (rho * np.asarray(y, dtype=float)) @ dc + np.einsum("x,xij,jx->i", rho, moments.R, v)
    return -pinv_psd(rR) @ rhs


def control_gain(rho, c) -> np.ndarray:
    """Vector ``k`` with ``u = k . g`` for the binary control at ``v = 0``."""
    rho = np.asarray(rho, dtype=float)
    rc = rho @ c
    den = 1.0 - rc * rc
    if abs(den) <= SINGULAR_TOL:
        return np.zeros_like(rho)
    return -rho * (c - rc) / den


def optimal_control_binary(rho, g, v, c):
    """Control for a binary observation (``m = 1``).

    ``g`` may be a ``(d, k)`` matrix of dual functions, in which case a length-``k``
    row of controls is returned.  ``v`` is ``None``/0 or shaped like ``g``.
    """
    rho = np.asarray(rho, dtype=float)
    c = np.asarray(c, dtype=float)
    g = np.asarray(g, dtype=float)
    rc = rho @ c
    den = 1.0 - rc * rc
    if abs(den) <= SINGULAR_TOL:
        return np.zeros(g.shape[1:]) if g.ndim > 1 else 0.0
    rg = rho @ g
    rgc = (rho * c) @ g
    num = rgc - rg * rc
    if v is not None and np.any(v):
        v = np.broadcast_to(np.asarray(v, dtype=float), g.shape)
        num = num + (rho @ v - ((rho * c) @ v) * rc)
    u = -num / den
    return u if g.ndim > 1 else float(u)


def corollary5_closed_form(model: HmmModel, f_plus, f_minus) -> float:
    """Optimal first control for a binary HMM with horizon 1.

    ``f_plus``/``f_minus`` are the terminal functions on the branches
    ``Z_1 = 1`` and ``Z_1 = 0``.
    """
    if model.m != 1:
        raise NotBinary(f"closed form needs a binary vocabulary, got m={model.m}")
    A = model.transition
    c = model.emission[:, 1] - model.emission[:, 0]
    f_plus = np.asarray(f_plus, dtype=float)
    f_minus = np.asarray(f_minus, dtype=float)
    mean = 0.5 * (f_plus + f_minus)
    half_diff = 0.5 * (f_plus - f_minus)
    return optimal_control_binary(model.prior, A @ mean, A @ half_diff, c)
