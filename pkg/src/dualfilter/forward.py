"""The nonlinear filter (forward algorithm): the reference for every dual-filter output."""

from __future__ import annotations

import numpy as np

from .errors import ImpossibleObservation, TokenOutOfRange
from .hmm import HmmModel, check_tokens

NORMALIZER_FLOOR = 1e-300


def bayes_update(pi, likelihood, transition) -> np.ndarray:
    """Condition ``pi`` on a likelihood vector, then propagate through ``transition``.

    The likelihood only matters up to a positive factor.
    """
    w = np.asarray(pi) * likelihood
    norm = w.sum()
    if not norm > NORMALIZER_FLOOR:
        raise ImpossibleObservation(f"normalizer {norm!r} is not positive")
    out = (w / norm) @ transition
    return out / out.sum()


def forward_step(pi, model: HmmModel, z: int) -> np.ndarray:
    if not 0 <= z < model.vocab_size:
        raise TokenOutOfRange(f"token {z} outside 0..{model.m}")
    return bayes_update(pi, model.emission[:, z], model.transition)


def forward_filter(model: HmmModel, tokens) -> np.ndarray:
    """Posterior trajectory ``pi_0 = prior, pi_1, ..., pi_T`` as a ``(T+1, d)`` array."""
    tokens = check_tokens(tokens, model.vocab_size)
    out = np.empty((len(tokens) + 1, model.num_states))
    out[0] = model.prior
    for t, z in enumerate(tokens, start=1):
        try:
            out[t] = bayes_update(out[t - 1], model.emission[:, z], model.transition)
        except ImpossibleObservation as exc:
            raise ImpossibleObservation(
                f"token {z} at time {t} has zero probability", time=t) from exc
    return out


def predict(pi, model: HmmModel) -> np.ndarray:
    """Next-token law ``p(z) = sum_x pi(x) C(x, z)``.  Accepts a stack of measures."""
    return np.asarray(pi) @ model.emission


def forward_tree(model: HmmModel, horizon: int):
    """Filter every token prefix up to ``horizon``.

    Returns a list whose entry ``t`` has shape ``(m+1,)*t + (d,)``.  Prefixes
    of zero probability get the zero measure (the 0/0 = 0 convention); they
    carry no mass in any expectation.
    """
    v = model.vocab_size
    A, C = model.transition, model.emission
    tree = [np.array(model.prior, dtype=float)]
    for _ in range(horizon):
        prev = tree[-1]
        # w[..., z, x] = pi(x) C(x, z)
        w = prev[..., None, :] * C.T
        norm = w.sum(axis=-1, keepdims=True)
        ok = norm > NORMALIZER_FLOOR
        nxt = np.where(ok, w / np.where(ok, norm, 1.0), 0.0) @ A
        tree.append(nxt.reshape(prev.shape[:-1] + (v, model.num_states)))
    return tree
