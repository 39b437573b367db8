"""Pure numpy versions of the dual-filter hot loops.

Same signatures and results as the compiled ``_kernels`` module.  Conventions:

* ``cs[t-1]`` is the reduced observation ``2 C(:, z_t) - 1`` for ``t = 1..T``;
* ``rhos[t-1]`` is the measure used for the control at step ``t``;
* a gain ``k`` turns a dual function matrix ``g`` into a control row ``k @ g``.
"""

from __future__ import annotations

import numpy as np

SINGULAR_TOL = 1e-12
PROJECT_FLOOR = 1e-300


def gain(rho, c):
    rc = float(rho @ c)
    den = 1.0 - rc * rc
    if abs(den) <= SINGULAR_TOL:
        return np.zeros_like(rho)
    return -rho * (c - rc) / den


def project(sigma):
    """Clip to the nonnegative orthant and normalize.  Returns ``(measure, fell_back)``."""
    p = np.maximum(sigma, 0.0)
    tot = p.sum()
    if not tot > PROJECT_FLOOR:
        return np.full(p.shape, 1.0 / p.size), True
    return p / tot, False


def backward_pass(A, cs, rhos, store_ys=False):
    """One backward sweep from the identity terminal condition.

    Returns ``(controls, gains, y0, ys)``; ``ys`` is ``None`` unless requested,
    otherwise shape ``(T+1, d, d)`` with ``ys[T] = I``.
    """
    T, d = cs.shape
    f = np.eye(d)
    controls = np.empty((T, d))
    gains = np.empty((T, d))
    ys = None
    if store_ys:
        ys = np.empty((T + 1, d, d))
        ys[T] = f
    for t in range(T, 0, -1):
        c = cs[t - 1]
        g = A @ f
        k = gain(rhos[t - 1], c)
        u = k @ g
        f = g + np.outer(c, u)
        gains[t - 1] = k
        controls[t - 1] = u
        if store_ys:
            ys[t - 1] = f
    return controls, gains, f, ys


def apply_pass(A, cs, rhos, f):
    """Backward sweep for a single terminal function ``f`` (length ``d``): O(d^2) per step.

    Returns ``(controls, y0)`` with scalar controls.
    """
    T, d = cs.shape
    y = np.array(f, dtype=float)
    controls = np.empty(T)
    for t in range(T, 0, -1):
        c = cs[t - 1]
        g = A @ y
        u = float(gain(rhos[t - 1], c) @ g)
        y = g + c * u
        controls[t - 1] = u
    return controls, y


def adjoint_recovery(A, cs, gains, r0):
    """Signed measures ``r_t`` with ``r_t y_t = r_0 y_0 - sum_{s<t} u_s``.

    ``r_t = (r_{t-1} + (r_{t-1}.c_t - 1) k_t) A``.  Returns shape ``(T+1, d)``.
    """
    T, d = cs.shape
    out = np.empty((T + 1, d))
    r = np.array(r0, dtype=float)
    out[0] = r
    for t in range(1, T + 1):
        r = (r + (r @ cs[t - 1] - 1.0) * gains[t - 1]) @ A
        out[t] = r
    return out


def single_shot(A, mu, cs, keep_passes=False):
    """Sequential passes: pass ``t`` runs ``tau = t..1`` from the identity.

    Gains for step ``tau`` use the already projected measure of time
    ``tau - 1``, so they are computed once and reused by every later pass.
    Returns ``(rho, controls, passes, fallbacks)``: ``rho`` is ``(T+1, d)``,
    ``controls`` the rows of the final pass, ``passes`` a list of per-pass
    control arrays (or ``None``).
    """
    T, d = cs.shape
    rho = np.empty((T + 1, d))
    rho[0] = mu
    gains = np.empty((T, d))
    passes = [] if keep_passes else None
    fallbacks = 0
    controls = np.zeros((T, d))
    for t in range(1, T + 1):
        gains[t - 1] = gain(rho[t - 1], cs[t - 1])
        f = np.eye(d)
        s = np.zeros(d)
        us = np.empty((t, d))
        for tau in range(t, 0, -1):
            g = A @ f
            u = gains[tau - 1] @ g
            f = g + np.outer(cs[tau - 1], u)
            s -= u
            us[tau - 1] = u
        rho[t], fell = project(mu @ f + s)
        fallbacks += fell
        if keep_passes:
            passes.append(us)
        controls = us
    return rho, controls, passes, fallbacks
