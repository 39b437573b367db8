"""Brute-force Bayes oracle.

Everything here is computed by summing masses of the full joint law of
``(X_0..X_T, Z_1..Z_T)``; none of it goes through the filter recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TooLarge, ZeroProbabilityPrefix
from .hmm import HmmModel, check_tokens

MAX_MASS_POINTS = 10**7


@dataclass(frozen=True)
class JointLaw:
    """Dense table of path masses.

    ``mass`` has ``T+1`` state axes (``X_0..X_T``) followed by ``T`` token
    axes (``Z_1..Z_T``).
    """

    mass: np.ndarray
    horizon: int
    num_states: int
    vocab_size: int

    def state_token_marginal(self, t: int, k: int) -> np.ndarray:
        """``P(X_t = x, Z_1..Z_k = prefix)`` with shape ``(m+1,)*k + (d,)``."""
        T = self.horizon
        keep_state = t
        keep_tokens = list(range(T + 1, T + 1 + k))
        drop = tuple(a for a in range(2 * T + 1) if a != keep_state and a not in keep_tokens)
        marg = self.mass.sum(axis=drop)
        # remaining axes: X_t first, then Z_1..Z_k
        return np.moveaxis(marg, 0, -1)

    def token_marginal(self, k: int | None = None) -> np.ndarray:
        k = self.horizon if k is None else k
        return self.state_token_marginal(0, k).sum(axis=-1)


def joint_law_size(num_states: int, vocab_size: int, horizon: int) -> int:
    return num_states ** (horizon + 1) * vocab_size ** horizon


def enumerate_joint_law(model: HmmModel, horizon: int) -> JointLaw:
    d, v = model.num_states, model.vocab_size
    size = joint_law_size(d, v, horizon)
    if size > MAX_MASS_POINTS:
        raise TooLarge(f"{size} mass points exceed the budget of {MAX_MASS_POINTS}")
    A, C = model.transition, model.emission
    # build in interleaved order x0, z1, x1, ..., zT, xT
    mass = np.array(model.prior, dtype=float)
    for _ in range(horizon):
        step = C[:, :, None] * A[:, None, :]  # [x_t, z_{t+1}, x_{t+1}]
        mass = mass[..., None, None] * step
    states = list(range(0, 2 * horizon + 1, 2))
    tokens = list(range(1, 2 * horizon, 2))
    mass = np.transpose(mass, states + tokens)
    return JointLaw(np.ascontiguousarray(mass), horizon, d, v)


def posterior_table(law: JointLaw, t: int):
    """Exact posteriors of ``X_t`` for every prefix of length ``t``.

    Returns ``(posteriors, prefix_mass)`` with shapes ``(m+1,)*t + (d,)`` and
    ``(m+1,)*t``.  Zero-probability prefixes get the zero measure.
    """
    joint = law.state_token_marginal(t, t)
    total = joint.sum(axis=-1)
    safe = np.where(total > 0, total, 1.0)
    post = np.where(total[..., None] > 0, joint / safe[..., None], 0.0)
    return post, total


def exact_posterior(model: HmmModel, tokens) -> np.ndarray:
    """``pi_t(x) = P(X_t = x, Z_{1..t}) / P(Z_{1..t})`` for ``t = 0..T``."""
    tokens = check_tokens(tokens, model.vocab_size)
    T = len(tokens)
    law = enumerate_joint_law(model, T)
    out = np.empty((T + 1, model.num_states))
    for t in range(T + 1):
        # the posterior at t ignores z_{t+1..T}: sum them out
        joint = law.state_token_marginal(t, t)[tuple(tokens[:t])]
        total = joint.sum()
        if not total > 0:
            raise ZeroProbabilityPrefix(f"prefix of length {t} has zero probability")
        out[t] = joint / total
    return out


def exact_predictions(model: HmmModel, tokens) -> np.ndarray:
    """``P(Z_{t+1} = z | Z_1..Z_t)`` for ``t = 1..T`` from the joint law of horizon ``T+1``."""
    tokens = check_tokens(tokens, model.vocab_size)
    T = len(tokens)
    law = enumerate_joint_law(model, T + 1)
    out = np.empty((T, model.vocab_size))
    for t in range(1, T + 1):
        prefix = law.token_marginal(t + 1)[tuple(tokens[:t])]
        total = prefix.sum()
        if not total > 0:
            raise ZeroProbabilityPrefix(f"prefix of length {t} has zero probability")
        out[t - 1] = prefix / total
    return out


def exact_mmse(model: HmmModel, terminal, law: JointLaw | None = None) -> float:
    """``E|F(X_T) - E(F(X_T) | Z_1..Z_T)|^2`` with ``F`` a table over prefixes and states."""
    terminal = np.asarray(terminal, dtype=float)
    T = terminal.ndim - 1
    law = enumerate_joint_law(model, T) if law is None else law
    joint = law.state_token_marginal(T, T)
    post, _ = posterior_table(law, T)
    cond_mean = (post * terminal).sum(axis=-1)
    err = terminal - cond_mean[..., None]
    return float((joint * err * err).sum())
