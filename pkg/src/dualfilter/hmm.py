"""HMM model container, validation, sampling and the model generators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.special

from .errors import (
    AlphaOutOfRange,
    DimensionMismatch,
    EigenFailure,
    NegativeEntry,
    RowSumError,
    TokenOutOfRange,
    ValidationError,
)

ROW_SUM_TOL = 1e-9
NEGATIVE_TOL = 1e-12
ROUNDING_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class HmmModel:
    """The triple (prior, transition, emission) of a finite HMM.

    States are ``0..d-1`` and tokens ``0..m``.  The emission row of state
    ``x`` is the law of the *next* token given the current state, i.e.
    ``Z_{t+1} ~ emission[X_t]``.

    Use :func:`validate_model` to build one from untrusted data.
    """

    prior: np.ndarray
    transition: np.ndarray
    emission: np.ndarray
    meta: dict = field(default_factory=dict)
    n_renormalized: int = 0

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.emission.shape[1]

    @property
    def m(self) -> int:
        return self.emission.shape[1] - 1

    def to_dict(self) -> dict:
        return {
            "d": self.num_states,
            "m": self.m,
            "prior": self.prior.tolist(),
            "transition": self.transition.tolist(),
            "emission": self.emission.tolist(),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HmmModel":
        try:
            prior, transition, emission = (
                data["prior"], data["transition"], data["emission"])
        except KeyError as exc:
            raise ValidationError(f"model is missing field {exc}") from None
        return validate_model(
            prior, transition, emission,
            num_states=data.get("d"),
            vocab_size=None if data.get("m") is None else int(data["m"]) + 1,
            meta=data.get("meta") or {},
        )


@dataclass(frozen=True)
class SamplePath:
    states: np.ndarray  # X_0..X_T
    tokens: np.ndarray  # Z_1..Z_T
    seed: int


def _stochastic_rows(name, mat, expected_cols):
    mat = np.array(mat, dtype=float)
    if mat.ndim == 1:
        mat = mat[None, :]
    if mat.ndim != 2 or (expected_cols is not None and mat.shape[1] != expected_cols):
        raise DimensionMismatch(f"{name} has shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValidationError(f"{name} has non-finite entries")
    if np.any(mat < -NEGATIVE_TOL):
        i, j = np.argwhere(mat < -NEGATIVE_TOL)[0]
        raise NegativeEntry(f"{name}[{i},{j}] = {mat[i, j]!r}")
    mat = np.clip(mat, 0.0, None)
    sums = mat.sum(axis=1)
    dev = np.abs(sums - 1.0)
    if np.any(dev > ROW_SUM_TOL):
        i = int(np.argmax(dev))
        raise RowSumError(f"{name} row {i} sums to {sums[i]!r}")
    # rounding-level deviations are left alone so that a JSON round trip is exact
    off = dev > ROUNDING_TOL
    mat[off] /= sums[off, None]
    return mat, int(np.count_nonzero(off))


def validate_model(prior, transition, emission, *, num_states=None,
                   vocab_size=None, meta=None) -> HmmModel:
    """Check and normalize raw model data.

    Rows whose sums are off by at most ``1e-9`` are silently renormalized;
    the number of such rows is kept in ``n_renormalized``.
    """
    transition = np.asarray(transition, dtype=float)
    if transition.ndim != 2 or transition.shape[0] != transition.shape[1]:
        raise DimensionMismatch(f"transition must be square, got {transition.shape}")
    d = transition.shape[0]
    if num_states is not None and int(num_states) != d:
        raise DimensionMismatch(f"declared d={num_states} but transition is {d}x{d}")
    emission = np.asarray(emission, dtype=float)
    if emission.ndim != 2 or emission.shape[0] != d:
        raise DimensionMismatch(f"emission must have {d} rows, got {emission.shape}")
    if vocab_size is not None and emission.shape[1] != int(vocab_size):
        raise DimensionMismatch(
            f"declared vocab size {vocab_size} but emission has {emission.shape[1]} columns")
    if emission.shape[1] < 2:
        raise DimensionMismatch("vocabulary needs at least two tokens")
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (d,):
        raise DimensionMismatch(f"prior must have length {d}, got {prior.shape}")

    a, n_a = _stochastic_rows("transition", transition, d)
    c, n_c = _stochastic_rows("emission", emission, emission.shape[1])
    p, n_p = _stochastic_rows("prior", prior, d)
    for arr in (a, c, p):
        arr.setflags(write=False)
    return HmmModel(p[0], a, c, dict(meta or {}), n_a + n_c + n_p)


def check_tokens(tokens, vocab_size: int) -> np.ndarray:
    """Return ``tokens`` as an int array, raising if any is out of range."""
    arr = np.asarray(tokens)
    if arr.size == 0:
        return np.zeros(0, dtype=np.intp)
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        if np.issubdtype(arr.dtype, np.floating) and np.all(arr == np.round(arr)):
            arr = arr.astype(np.intp)
        else:
            raise TokenOutOfRange("tokens must be a 1-D sequence of integers")
    bad = (arr < 0) | (arr >= vocab_size)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise TokenOutOfRange(f"token {arr[i]} at position {i} is outside 0..{vocab_size - 1}")
    return arr.astype(np.intp)


def _categorical(rng, probs, n):
    # inverse-CDF draws, one row of `probs` per sample
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(n)[:, None] * cdf[:, -1:]
    idx = (u >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def sample_paths(model: HmmModel, horizon: int, seed, n: int):
    """Draw ``n`` independent paths; returns ``(states (n, T+1), tokens (n, T))``."""
    if horizon < 0:
        raise ValidationError("horizon must be nonnegative")
    rng = np.random.default_rng(seed)
    states = np.empty((n, horizon + 1), dtype=np.intp)
    tokens = np.empty((n, horizon), dtype=np.intp)
    states[:, 0] = _categorical(rng, np.broadcast_to(model.prior, (n, model.num_states)), n)
    for t in range(horizon):
        x = states[:, t]
        tokens[:, t] = _categorical(rng, model.emission[x], n)
        states[:, t + 1] = _categorical(rng, model.transition[x], n)
    return states, tokens


def sample_path(model: HmmModel, horizon: int, seed: int) -> SamplePath:
    """One path ``X_0..X_T``, ``Z_1..Z_T`` with ``Z_{t+1} ~ C(X_t, .)``."""
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    states, tokens = sample_paths(model, horizon, seed, 1)
    return SamplePath(states[0], tokens[0], int(seed))


def random_stochastic_matrix(rows: int, cols: int, temperature: float = 1.0,
                             seed=None) -> np.ndarray:
    """Rows are ``softmax(randn(cols) / temperature)``, drawn independently."""
    if rows < 1 or cols < 1:
        raise ValidationError("matrix dimensions must be positive")
    if not temperature > 0:
        raise ValidationError("temperature must be positive")
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((rows, cols)) / temperature
    return scipy.special.softmax(logits, axis=1)


def circulant_permutation(d: int) -> np.ndarray:
    """Deterministic cycle ``x -> x+1 mod d``."""
    if d < 1:
        raise ValidationError("d must be positive")
    return np.roll(np.eye(d), 1, axis=1)


def homotopy_transition(alpha: float, a_stoch) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha={alpha} not in [0, 1]")
    a_stoch = np.asarray(a_stoch, dtype=float)
    return alpha * circulant_permutation(a_stoch.shape[0]) + (1.0 - alpha) * a_stoch


def eigen_spectrum(a) -> np.ndarray:
    """Eigenvalues sorted by magnitude, descending; ties by real part, descending."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"matrix must be square, got {a.shape}")
    try:
        eig = scipy.linalg.eigvals(a, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenFailure(str(exc)) from exc
    # magnitudes equal up to rounding count as ties
    mag = np.round(np.abs(eig), 12)
    order = np.lexsort((-eig.real, -mag))
    return eig[order]


def second_eigenvalue_magnitude(a):
    """Return ``(|lambda_2|, spectrum)``.  A 1x1 matrix has ``|lambda_2| = 0``."""
    spec = eigen_spectrum(a)
    lam2 = float(abs(spec[1])) if spec.size > 1 else 0.0
    return lam2, spec


def alpha_for_lambda2(target: float, a_stoch, tol: float = 1e-12) -> float:
    """Homotopy weight at which ``|lambda_2|`` of the mixed matrix equals ``target``.

    Root-finds on ``[0, 1]``; the target must lie between the endpoint values.
    """
    a_stoch = np.asarray(a_stoch, dtype=float)

    def gap(alpha):
        return second_eigenvalue_magnitude(homotopy_transition(alpha, a_stoch))[0] - target

    lo, hi = gap(0.0), gap(1.0)
    if lo * hi > 0:
        raise ValidationError(
            f"|lambda_2| = {target} is not bracketed on alpha in [0, 1] "
            f"(endpoints {lo + target:.6g}, {hi + target:.6g})")
    if lo == 0:
        return 0.0
    if hi == 0:
        return 1.0
    return float(scipy.optimize.brentq(gap, 0.0, 1.0, xtol=tol))
