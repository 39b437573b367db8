"""Exact backward stochastic difference equation and the duality identities.

Adapted processes are dense prefix tables: the value at time ``t`` for the
token prefix ``(z_1, ..., z_t)`` lives at index ``[z_1, ..., z_t]`` of an
array with ``t`` leading token axes.  So

* a control ``U`` is a list of ``T`` arrays, ``U[t].shape == (m+1,)*t + (m,)``;
* ``Y[t].shape == (m+1,)*t + (d,)`` for ``t = 0..T``;
* ``V[t].shape == (m+1,)*t + (m, d)`` for ``t = 0..T-1``;
* a terminal condition ``F`` has shape ``(m+1,)*T + (d,)``.

Expectations are exact sums against :class:`~dualfilter.oracle.JointLaw`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .control import phi_general
from .forward import forward_tree, predict
from .geometry import (MomentOperators, build_moments, decompose, encoding_matrix,
                       variance_bracket)
from .hmm import HmmModel
from .oracle import MAX_MASS_POINTS, JointLaw, enumerate_joint_law, joint_law_size
from .errors import TooLarge, ValidationError


@dataclass
class BsdeSolution:
    Y: list
    V: list


@dataclass(frozen=True)
class CostBreakdown:
    total: float
    initial_variance: float
    running: float
    mse: float
    mmse: float


def _horizon(terminal, model: HmmModel) -> int:
    terminal = np.asarray(terminal)
    T = terminal.ndim - 1
    if terminal.shape != (model.vocab_size,) * T + (model.num_states,):
        raise ValidationError(f"terminal table has shape {terminal.shape}")
    size = joint_law_size(model.num_states, model.vocab_size, T)
    if size > MAX_MASS_POINTS:
        raise TooLarge(f"{size} mass points exceed the budget of {MAX_MASS_POINTS}")
    return T


def _check_controls(controls, model: HmmModel, T: int):
    if len(controls) != T:
        raise ValidationError(f"expected {T} control tables, got {len(controls)}")
    out = []
    for t, u in enumerate(controls):
        u = np.asarray(u, dtype=float)
        if u.shape != (model.vocab_size,) * t + (model.m,):
            raise ValidationError(f"control at time {t} has shape {u.shape}")
        out.append(u)
    return out


# --- constructors for terminal conditions and controls -------------------

def deterministic_terminal(f, vocab_size: int, horizon: int) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    return np.broadcast_to(f, (vocab_size,) * horizon + f.shape).copy()


def prediction_terminal(model: HmmModel, horizon: int, token: int) -> np.ndarray:
    """``F(x) = C(x, token)``: the terminal function whose conditional mean is a prediction."""
    return deterministic_terminal(model.emission[:, token], model.vocab_size, horizon)


def random_terminal(model: HmmModel, horizon: int, rng) -> np.ndarray:
    rng = np.random.default_rng(rng)
    return rng.uniform(-1, 1, (model.vocab_size,) * horizon + (model.num_states,))


def zero_controls(model: HmmModel, horizon: int) -> list:
    return [np.zeros((model.vocab_size,) * t + (model.m,)) for t in range(horizon)]


def random_controls(model: HmmModel, horizon: int, rng, scale: float = 1.0) -> list:
    rng = np.random.default_rng(rng)
    return [rng.uniform(-scale, scale, (model.vocab_size,) * t + (model.m,))
            for t in range(horizon)]


# --- solving ----------------------------------------------------------------

def _split_step(Y_next, t, model: HmmModel):
    """Decompose ``z -> (A Y_{t+1}(prefix, z))(x)`` into mean and lattice parts."""
    AY = Y_next @ model.transition.T
    s = np.moveaxis(AY, t, -1)  # (..., d, m+1)
    mean, tilde = decompose(s)
    return mean, np.swapaxes(tilde, -1, -2)  # V as (..., m, d)


def _assemble(mean, V, U, moments: MomentOperators):
    cU = U @ moments.c.T
    cV = np.einsum("xi,...ix->...x", moments.c, V)
    return mean + cU + cV


def bsde_solve(model: HmmModel, controls, terminal, method: str = "vectorized") -> BsdeSolution:
    """Solve ``Y_t = A Y_{t+1} + c.(U_t + V_t) - V_t.e(Z_{t+1})``, ``Y_T = F``.

    ``method="recursive"`` walks every prefix and state separately; it exists
    as an independent check on the vectorized path.
    """
    T = _horizon(terminal, model)
    controls = _check_controls(controls, model, T)
    if method == "recursive":
        return _bsde_solve_recursive(model, controls, np.asarray(terminal, dtype=float))
    if method != "vectorized":
        raise ValueError(f"unknown method {method!r}")
    moments = build_moments(model)
    Y = [None] * (T + 1)
    V = [None] * T
    Y[T] = np.asarray(terminal, dtype=float)
    for t in range(T - 1, -1, -1):
        mean, V[t] = _split_step(Y[t + 1], t, model)
        Y[t] = _assemble(mean, V[t], controls[t], moments)
    return BsdeSolution(Y, V)


def _bsde_solve_recursive(model, controls, terminal):
    T = terminal.ndim - 1
    d, v, m = model.num_states, model.vocab_size, model.m
    A = model.transition
    moments = build_moments(model)
    Y = [np.empty((v,) * t + (d,)) for t in range(T + 1)]
    V = [np.empty((v,) * t + (m, d)) for t in range(T)]
    Y[T][...] = terminal
    for t in range(T - 1, -1, -1):
        for prefix in itertools.product(range(v), repeat=t):
            u = controls[t][prefix]
            for x in range(d):
                s = np.array([A[x] @ Y[t + 1][prefix + (z,)] for z in range(v)])
                mean, tilde = decompose(s, m)
                V[t][prefix][:, x] = tilde
                Y[t][prefix][x] = mean + moments.c[x] @ (u + tilde)
    return BsdeSolution(Y, V)


def bsde_residual(model: HmmModel, controls, solution: BsdeSolution) -> float:
    """Largest violation of the difference equation over all prefixes and continuations."""
    moments = build_moments(model)
    E = encoding_matrix(model.m)
    worst = 0.0
    T = len(solution.V)
    for t in range(T):
        AY = solution.Y[t + 1] @ model.transition.T          # (..., z, d)
        drift = solution.Y[t] - (controls[t] @ moments.c.T) \
            - np.einsum("xi,...ix->...x", moments.c, solution.V[t])
        # V^T e(z) for every continuation z; the token axis of AY sits at position t
        Ve = np.einsum("zi,...ix->...zx", E, solution.V[t])
        gap = AY - Ve - np.expand_dims(drift, t)
        worst = max(worst, float(np.abs(gap).max()))
    return worst


# --- costs and estimators ---------------------------------------------------

def estimator(model: HmmModel, controls, solution: BsdeSolution, c0: float | None = None):
    """``S_T = c0 - sum_t U_{t-1}.e(Z_t)`` on every token path; ``c0`` defaults to ``mu(Y_0)``."""
    T = len(controls)
    v = model.vocab_size
    E = encoding_matrix(model.m)
    S = np.asarray(model.prior @ solution.Y[0] if c0 is None else c0, dtype=float)
    for t in range(1, T + 1):
        # U_{t-1}(z_1..z_{t-1}) . e(z_t), broadcast over the new axis z_t
        inc = controls[t - 1] @ E.T                 # (..., z_t)
        S = S[..., None] - inc
    return np.broadcast_to(S, (v,) * T)


def estimator_mse(model: HmmModel, controls, terminal, c0=None, law: JointLaw | None = None,
                  solution: BsdeSolution | None = None) -> float:
    T = _horizon(terminal, model)
    law = enumerate_joint_law(model, T) if law is None else law
    solution = bsde_solve(model, controls, terminal) if solution is None else solution
    S = estimator(model, controls, solution, c0)
    joint = law.state_token_marginal(T, T)
    err = np.asarray(terminal) - S[..., None]
    return float((joint * err * err).sum())


def cost_J(model: HmmModel, controls, terminal, law: JointLaw | None = None) -> CostBreakdown:
    """Control cost, estimator error and MMSE, all as exact expectations."""
    T = _horizon(terminal, model)
    controls = _check_controls(controls, model, T)
    terminal = np.asarray(terminal, dtype=float)
    law = enumerate_joint_law(model, T) if law is None else law
    moments = build_moments(model)
    sol = bsde_solve(model, controls, terminal)

    mu = model.prior
    y0 = sol.Y[0]
    initial_variance = float(mu @ (y0 * y0) - (mu @ y0) ** 2)

    running = 0.0
    for t in range(T):
        # Gamma term: needs Y_{t+1}, so weight by P(X_t, Z_1..Z_{t+1})
        y = sol.Y[t + 1]
        gam = (y * y) @ model.transition.T - (y @ model.transition.T) ** 2
        running += float((law.state_token_marginal(t, t + 1) * gam).sum())
        # quadratic term: (U_t + V_t(x))^T R(x) (U_t + V_t(x)), weight P(X_t, Z_1..Z_t)
        w = controls[t][..., :, None] + sol.V[t]          # (..., m, d)
        quad = np.einsum("...ix,xij,...jx->...x", w, moments.R, w)
        running += float((law.state_token_marginal(t, t) * quad).sum())

    mse = estimator_mse(model, controls, terminal, law=law, solution=sol)
    tree = forward_tree(model, T)
    cond = (tree[T] * terminal).sum(axis=-1)
    err = terminal - cond[..., None]
    mmse = float((law.state_token_marginal(T, T) * err * err).sum())
    return CostBreakdown(initial_variance + running, initial_variance, running, mse, mmse)


# --- closed loop ------------------------------------------------------------

def _phi_table(mean, V, post, moments):
    lead = mean.shape[:-1]
    U = np.zeros(lead + (moments.m,))
    for idx in np.ndindex(*lead):
        U[idx] = phi_general(mean[idx], V[idx], post[idx], moments)
    return U


def solve_optimal(model: HmmModel, terminal, posteriors=None):
    """Closed loop ``U_t = phi(., V_t; pi_t)`` solved backward with the BS difference equation.

    ``posteriors`` defaults to the forward filter on every prefix.
    Returns ``(controls, solution)``.
    """
    T = _horizon(terminal, model)
    moments = build_moments(model)
    posteriors = forward_tree(model, T) if posteriors is None else posteriors
    Y = [None] * (T + 1)
    V = [None] * T
    U = [None] * T
    Y[T] = np.asarray(terminal, dtype=float)
    for t in range(T - 1, -1, -1):
        mean, V[t] = _split_step(Y[t + 1], t, model)
        U[t] = _phi_table(mean, V[t], posteriors[t], moments)
        Y[t] = _assemble(mean, V[t], U[t], moments)
    return U, BsdeSolution(Y, V)


def feedback_controls(model: HmmModel, controls, terminal, posteriors=None) -> list:
    """Feedback ``phi`` evaluated along the solution driven by ``controls``.

    At each time this is the best control given the (fixed) later controls;
    it is the reference in the value decomposition.
    """
    T = _horizon(terminal, model)
    moments = build_moments(model)
    posteriors = forward_tree(model, T) if posteriors is None else posteriors
    sol = bsde_solve(model, controls, terminal)
    out = []
    for t in range(T):
        mean, V = _split_step(sol.Y[t + 1], t, model)
        out.append(_phi_table(mean, V, posteriors[t], moments))
    return out


def control_excess(model: HmmModel, controls, terminal, law: JointLaw | None = None) -> float:
    """``E sum_t <U_t - U_t^opt, U_t - U_t^opt>_{p_t}`` with ``p_t = pi_t(C)``."""
    T = _horizon(terminal, model)
    controls = _check_controls(controls, model, T)
    law = enumerate_joint_law(model, T) if law is None else law
    tree = forward_tree(model, T)
    ref = feedback_controls(model, controls, terminal, tree)
    total = 0.0
    for t in range(T):
        pmass = law.token_marginal(t) if t else np.array(1.0)
        p = predict(tree[t], model)
        diff = controls[t] - ref[t]
        for idx in np.ndindex(*pmass.shape):
            if pmass[idx] > 0:
                total += pmass[idx] * variance_bracket(diff[idx], p[idx])
    return float(total)


def representation_check(model: HmmModel, terminal) -> float:
    """Max gap between ``pi_t(Y_t)`` and ``mu(Y_0) - sum_{s<=t} U_{s-1}.e(z_s)``.

    Evaluated for the closed-loop optimal solution on every prefix of positive
    probability; zero-probability prefixes are skipped.
    """
    T = _horizon(terminal, model)
    tree = forward_tree(model, T)
    U, sol = solve_optimal(model, terminal, tree)
    E = encoding_matrix(model.m)
    base = np.asarray(model.prior @ sol.Y[0])
    S = base
    worst = abs(float(model.prior @ sol.Y[0]) - float(base))
    for t in range(1, T + 1):
        S = S[..., None] - U[t - 1] @ E.T
        lhs = (tree[t] * sol.Y[t]).sum(axis=-1)
        reachable = tree[t].sum(axis=-1) > 0
        if np.any(reachable):
            worst = max(worst, float(np.abs(lhs - S)[reachable].max()))
    return worst


__all__ = [
    "BsdeSolution", "CostBreakdown", "bsde_solve", "bsde_residual", "cost_J",
    "estimator", "estimator_mse", "solve_optimal", "feedback_controls",
    "control_excess", "representation_check", "deterministic_terminal",
    "prediction_terminal", "random_terminal", "zero_controls", "random_controls",
]
