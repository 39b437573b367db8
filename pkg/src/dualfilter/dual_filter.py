"""The dual filter: layer map, iterative and single-shot algorithms, predictions.

A layer state is a ``(T+1, d)`` array whose row ``t`` is the measure
``rho_t``; row 0 is the prior.  Each observation ``z_t`` is reduced to the
binary question "was it ``z_t``", with drift ``c_t = 2 C(:, z_t) - 1``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import kernels
from .errors import (DegenerateColumnWarning, LengthMismatch, NumericalError,
                     SolveFailure, ValidationError)
from .forward import NORMALIZER_FLOOR
from .geometry import binary_reduce
from .hmm import HmmModel, check_tokens

RCOND_MIN = 1e-12
REDUCTIONS = ("rows", "max-abs", "norm")


@dataclass
class DualPass:
    """Output of one backward sweep from the identity terminal condition.

    ``controls[t]`` is the row ``u_t`` (one entry per terminal basis function),
    ``gains[t]`` the vector with ``u_t = gains[t] @ (A y_{t+1})``,
    ``partial_sums[t] = rho_0 y_0 - sum_{s<t} u_s``; ``ys`` is kept only for
    the linear-solve recovery.
    """

    controls: np.ndarray
    gains: np.ndarray
    partial_sums: np.ndarray
    ys: np.ndarray | None = None


@dataclass
class TopK:
    time: int
    reference_tokens: np.ndarray
    reference_probs: np.ndarray
    dual_tokens: np.ndarray
    dual_probs: np.ndarray


@dataclass
class LayerDiagnostics:
    """``errors[l, t-1]``: error of layer ``l`` at time ``t``; row 0 is the initialization."""

    errors: np.ndarray
    control_norms: np.ndarray
    topk: dict = field(default_factory=dict)

    @property
    def mean_errors(self) -> np.ndarray:
        return self.errors.mean(axis=1)


@dataclass
class IterationResult:
    rho: np.ndarray
    history: np.ndarray
    passes: list
    diagnostics: LayerDiagnostics | None


@dataclass
class SingleShotResult:
    rho: np.ndarray
    controls: np.ndarray
    passes: list | None
    fallbacks: int


# --- small pieces -----------------------------------------------------------

def project_normalize(sigma) -> np.ndarray:
    """Clip negative mass and renormalize; uniform if nothing positive is left."""
    return kernels.python_backend.project(np.asarray(sigma, dtype=float))[0]


def reduced_observations(model: HmmModel, tokens) -> np.ndarray:
    """Rows ``2 C(:, z_t) - 1`` for ``t = 1..T``."""
    tokens = check_tokens(tokens, model.vocab_size)
    if len(tokens) == 0:
        return np.empty((0, model.num_states))
    return np.stack([binary_reduce(model, int(z)) for z in tokens])


def init_rho(model: HmmModel, tokens) -> np.ndarray:
    """Prior at time 0, normalized emission columns afterwards."""
    tokens = check_tokens(tokens, model.vocab_size)
    d = model.num_states
    rho = np.empty((len(tokens) + 1, d))
    rho[0] = model.prior
    for t, z in enumerate(tokens, start=1):
        col = model.emission[:, z]
        tot = col.sum()
        if tot <= NORMALIZER_FLOOR:
            warnings.warn(f"emission column for token {z} is zero; using uniform at time {t}",
                          DegenerateColumnWarning, stacklevel=2)
            rho[t] = 1.0 / d
        else:
            rho[t] = col / tot
    return rho


def _check_layer(rho, model: HmmModel, T: int) -> np.ndarray:
    rho = np.ascontiguousarray(rho, dtype=float)
    if rho.shape != (T + 1, model.num_states):
        raise ValidationError(f"layer state has shape {rho.shape}, expected {(T + 1, model.num_states)}")
    return rho


def _solve_recovery(ys, sums) -> np.ndarray:
    """``r_t`` with ``r_t y_t = s_t``: LU, least squares when badly conditioned."""
    out = np.empty_like(sums)
    for t in range(len(sums)):
        yt = ys[t].T
        with warnings.catch_warnings():
            # exact singularity shows up as rcond = 0 below
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            lu, piv = linalg.lu_factor(yt, check_finite=False)
        anorm = np.abs(yt).sum(axis=0).max()
        rcond, _ = linalg.lapack.dgecon(lu, anorm, norm="1")
        if rcond >= RCOND_MIN and np.isfinite(rcond):
            out[t] = linalg.lu_solve((lu, piv), sums[t], check_finite=False)
            continue
        try:
            out[t] = np.linalg.lstsq(yt, sums[t], rcond=None)[0]
        except np.linalg.LinAlgError as exc:
            raise SolveFailure(f"recovery at time {t} failed (rcond {rcond:.3e})") from exc
        if not np.all(np.isfinite(out[t])):
            raise SolveFailure(f"recovery at time {t} is not finite (rcond {rcond:.3e})")
    return out


# --- the layer map ------------------------------------------------------------

def layer_map(model: HmmModel, tokens, rho, recovery: str = "adjoint", backend=None):
    """One application of the layer map.

    Backward: ``u_{t-1} = k(rho_{t-1}, c_t) . (A f)``, ``f <- A f + c_t u_{t-1}``
    from ``f = I``.  Forward: ``rho_t^+`` is the projected measure ``r`` with
    ``r y_t = rho_0 y_0 - sum_{s<t} u_s``.  ``recovery="adjoint"`` propagates
    ``r`` directly, ``recovery="solve"`` solves the linear system at each time.
    Returns ``(rho_plus, DualPass)``.
    """
    if recovery not in ("adjoint", "solve"):
        raise ValueError(f"unknown recovery {recovery!r}")
    kern = kernels.get_backend(backend)
    cs = reduced_observations(model, tokens)
    T = len(cs)
    rho = _check_layer(rho, model, T)
    A = np.ascontiguousarray(model.transition)
    controls, gains, y0, ys = kern.backward_pass(A, cs, rho[:T], recovery == "solve")
    sums = np.empty((T + 1, model.num_states))
    sums[0] = rho[0] @ y0
    if T:
        sums[1:] = sums[0] - np.cumsum(controls, axis=0)
    if recovery == "adjoint":
        raw = kern.adjoint_recovery(A, cs, gains, rho[0])
    else:
        raw = _solve_recovery(ys, sums)
    rho_plus = np.empty_like(rho)
    rho_plus[0] = rho[0]
    for t in range(1, T + 1):
        rho_plus[t] = kern.project(raw[t])[0]
    return rho_plus, DualPass(controls, gains, sums, ys)


def dual_estimate(model: HmmModel, tokens, rho, f, backend=None):
    """Single terminal function mode, O(d^2) per step.

    Returns ``(estimate, controls, y0)`` with ``estimate = rho_0 y_0 - sum_t u_t``,
    the dual-filter estimate of ``E(f(X_T) | Z_1..Z_T)``.
    """
    kern = kernels.get_backend(backend)
    cs = reduced_observations(model, tokens)
    T = len(cs)
    rho = _check_layer(rho, model, T)
    f = np.asarray(f, dtype=float)
    if f.shape != (model.num_states,):
        raise ValidationError(f"terminal function has shape {f.shape}")
    controls, y0 = kern.apply_pass(np.ascontiguousarray(model.transition), cs,
                                   np.ascontiguousarray(rho[:T]), f)
    return float(rho[0] @ y0 - controls.sum()), controls, y0


# --- predictions and diagnostics ----------------------------------------------

def predict_all(rho, model: HmmModel) -> np.ndarray:
    """Next-token laws ``p_t = rho_t C`` for ``t = 1..T``."""
    return np.asarray(rho)[1:] @ model.emission


def error_metric(p_prime, p) -> float:
    p_prime, p = np.asarray(p_prime), np.asarray(p)
    if p_prime.shape != p.shape:
        raise LengthMismatch(f"lengths differ: {p_prime.shape} vs {p.shape}")
    return float(np.abs(p_prime - p).max())


def error_trace(P_prime, P) -> np.ndarray:
    """Row-wise :func:`error_metric` for two prediction sequences."""
    P_prime, P = np.asarray(P_prime), np.asarray(P)
    if P_prime.shape != P.shape:
        raise LengthMismatch(f"shapes differ: {P_prime.shape} vs {P.shape}")
    if P.shape[0] == 0:
        return np.empty(0)
    return np.abs(P_prime - P).max(axis=1)


def top_k(p, k: int):
    """Indices and values of the ``k`` largest entries, ties broken by lower index."""
    p = np.asarray(p)
    order = np.lexsort((np.arange(p.size), -p))[:k]
    return order, p[order]


def control_trace(controls, reduction: str = "max-abs"):
    """Per-time rows and a scalar reduction of a control sequence.

    Returns ``(rows, values)``; for ``"rows"`` the values are the rows themselves.
    """
    rows = np.asarray(controls, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    if reduction == "rows":
        return rows, rows
    if reduction == "max-abs":
        return rows, np.abs(rows).max(axis=1) if rows.size else np.zeros(len(rows))
    if reduction == "norm":
        return rows, np.linalg.norm(rows, axis=1)
    raise ValueError(f"unknown reduction {reduction!r}; expected one of {REDUCTIONS}")


# --- algorithms ---------------------------------------------------------------

def iterate(model: HmmModel, tokens, layers: int, rho0=None, reference=None,
            recovery: str = "adjoint", topk: int = 10, selected_times=(),
            backend=None) -> IterationResult:
    """``rho^(l+1) = Project(N(rho^(l)))`` for ``l = 0..layers-1``.

    ``reference`` is a ``(T, m+1)`` prediction sequence; when given, the
    diagnostics hold the error of every layer (including the initialization)
    against it.
    """
    if layers < 1:
        raise ValidationError("at least one layer is required")
    tokens = check_tokens(tokens, model.vocab_size)
    T = len(tokens)
    rho = init_rho(model, tokens) if rho0 is None else _check_layer(rho0, model, T)
    history = [rho]
    passes = []
    for layer in range(1, layers + 1):
        try:
            rho, dp = layer_map(model, tokens, rho, recovery=recovery, backend=backend)
        except NumericalError as exc:
            raise type(exc)(f"layer {layer}: {exc}") from exc
        history.append(rho)
        passes.append(dp)
    history = np.stack(history)
    diag = None
    if reference is not None:
        reference = np.asarray(reference)
        errors = np.stack([error_trace(predict_all(h, model), reference) for h in history])
        norms = np.stack([np.zeros(T)] + [np.linalg.norm(p.controls, axis=1) for p in passes])
        tables = {}
        final = predict_all(rho, model)
        for t in selected_times:
            if not 1 <= t <= T:
                raise ValidationError(f"selected time {t} outside 1..{T}")
            rt, rp = top_k(reference[t - 1], topk)
            dt, dpb = top_k(final[t - 1], topk)
            tables[t] = TopK(t, rt, rp, dt, dpb)
        diag = LayerDiagnostics(errors, norms, tables)
    return IterationResult(rho, history, passes, diag)


def single_shot(model: HmmModel, tokens, keep_passes: bool = False, method: str = "passes",
                backend=None) -> SingleShotResult:
    """Sequential dual filter; no iteration and no linear solves.

    ``method="passes"`` runs the ``t`` backward steps of pass ``t`` literally
    (O(T^2 d^3)).  ``method="adjoint"`` obtains the same measures by carrying
    ``mu y_0 - sum u`` forward as a signed measure (O(T d^2)); its final-pass
    controls come from one backward sweep at the end.
    """
    kern = kernels.get_backend(backend)
    cs = reduced_observations(model, tokens)
    T, d = cs.shape
    A = np.ascontiguousarray(model.transition)
    mu = np.ascontiguousarray(model.prior, dtype=float)
    if method == "passes":
        rho, controls, passes, fallbacks = kern.single_shot(A, mu, cs, keep_passes)
        return SingleShotResult(rho, controls, passes, int(fallbacks))
    if method != "adjoint":
        raise ValueError(f"unknown method {method!r}")
    if keep_passes:
        raise ValidationError("per-pass controls need method='passes'")
    rho = np.empty((T + 1, d))
    rho[0] = mu
    r = mu.copy()
    fallbacks = 0
    for t in range(1, T + 1):
        k = kern.gain(rho[t - 1], cs[t - 1])
        r = (r + (r @ cs[t - 1] - 1.0) * k) @ A
        rho[t], fell = kern.project(r)
        fallbacks += fell
    controls = kern.backward_pass(A, cs, rho[:T], False)[0]
    return SingleShotResult(rho, controls, None, int(fallbacks))
