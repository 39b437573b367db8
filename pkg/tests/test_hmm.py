import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualfilter.errors import (AlphaOutOfRange, DimensionMismatch, NegativeEntry,
                               RowSumError, ValidationError)
from dualfilter.hmm import (HmmModel, alpha_for_lambda2, circulant_permutation,
                            eigen_spectrum, homotopy_transition, random_stochastic_matrix,
                            sample_path, sample_paths, second_eigenvalue_magnitude,
                            validate_model)


def test_identity_model_is_valid():
    M = validate_model([0.5, 0.5], np.eye(2), [[1, 0], [0, 1]])
    assert M.num_states == 2 and M.vocab_size == 2 and M.m == 1
    assert M.n_renormalized == 0


def test_tiny_row_sum_error_is_renormalized():
    A = np.array([[0.5, 0.5 + 1e-10], [0.3, 0.7]])
    M = validate_model([0.5, 0.5], A, [[0.2, 0.8], [0.6, 0.4]])
    assert M.n_renormalized == 1
    assert np.allclose(M.transition.sum(axis=1), 1.0, atol=1e-15)


def test_negative_entry_rejected():
    with pytest.raises(NegativeEntry):
        validate_model([0.5, 0.5], [[1.01, -0.01], [0, 1]], [[1, 0], [0, 1]])


def test_row_sum_error_rejected():
    with pytest.raises(RowSumError):
        validate_model([0.5, 0.5], [[0.5, 0.6], [0, 1]], [[1, 0], [0, 1]])


@pytest.mark.parametrize("prior, A, C", [
    ([1.0], np.eye(2), np.eye(2)),
    ([0.5, 0.5], np.ones((2, 3)) / 3, np.eye(2)),
    ([0.5, 0.5], np.eye(2), np.ones((3, 2)) / 2),
    ([0.5, 0.5], np.eye(2), np.ones((2, 1))),
])
def test_dimension_mismatch(prior, A, C):
    with pytest.raises(DimensionMismatch):
        validate_model(prior, A, C)


def test_declared_dimensions_checked():
    with pytest.raises(DimensionMismatch):
        validate_model([0.5, 0.5], np.eye(2), np.eye(2), num_states=3)
    with pytest.raises(DimensionMismatch):
        validate_model([0.5, 0.5], np.eye(2), np.eye(2), vocab_size=3)


def test_model_is_read_only(make_model):
    M = make_model(3, 2)
    with pytest.raises(ValueError):
        M.transition[0, 0] = 1.0


def test_json_round_trip(make_model):
    M = make_model(4, 3)
    data = json.loads(json.dumps(M.to_dict()))
    assert data["d"] == 4 and data["m"] == 3
    M2 = HmmModel.from_dict(data)
    assert np.array_equal(M2.transition, M.transition)
    assert np.array_equal(M2.emission, M.emission)
    assert np.array_equal(M2.prior, M.prior)


def test_json_missing_field():
    with pytest.raises(ValidationError):
        HmmModel.from_dict({"d": 1, "m": 1, "prior": [1.0]})


def test_degenerate_chain_sample():
    M = validate_model([1.0, 0.0], np.eye(2), [[1.0, 0.0], [0.0, 1.0]])
    p = sample_path(M, 20, 7)
    assert np.all(p.states == 0) and np.all(p.tokens == 0)
    assert len(p.states) == 21 and len(p.tokens) == 20


def test_sampling_is_deterministic(make_model):
    M = make_model(5, 3)
    a, b = sample_path(M, 50, 11), sample_path(M, 50, 11)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.tokens, b.tokens)
    assert not np.array_equal(a.tokens, sample_path(M, 50, 12).tokens)


def test_horizon_must_be_positive(make_model):
    with pytest.raises(ValidationError):
        sample_path(make_model(2, 1), 0, 0)


def test_emission_frequency_within_binomial_bound():
    C = np.array([[0.3, 0.5, 0.2], [0.1, 0.1, 0.8]])
    M = validate_model([1.0, 0.0], np.eye(2), C)
    n = 100_000
    _, tokens = sample_paths(M, 1, 3, n)
    freq = np.mean(tokens[:, 0] == 0)
    sigma = np.sqrt(0.3 * 0.7 / n)
    assert abs(freq - 0.3) <= 3 * sigma


def test_transition_frequencies_within_multinomial_bounds(make_model):
    M = make_model(3, 1, seed=4)
    n = 100_000
    states, _ = sample_paths(M, 1, 5, n)
    for x in range(3):
        nxt = states[states[:, 0] == x, 1]
        k = len(nxt)
        freq = np.bincount(nxt, minlength=3) / k
        sigma = np.sqrt(M.transition[x] * (1 - M.transition[x]) / k)
        assert np.all(np.abs(freq - M.transition[x]) <= 3 * sigma + 1e-12)


def test_random_stochastic_matrix_rows():
    M = random_stochastic_matrix(50, 7, 1.0, 3)
    assert np.all(M > 0)
    assert np.allclose(M.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    assert np.array_equal(M, random_stochastic_matrix(50, 7, 1.0, 3))


def test_random_stochastic_matrix_hot_limit():
    M = random_stochastic_matrix(10, 6, 1e9, 0)
    assert np.allclose(M, 1 / 6, atol=1e-6)


def test_random_stochastic_matrix_rejects_bad_temperature():
    with pytest.raises(ValidationError):
        random_stochastic_matrix(2, 2, 0.0, 0)


def test_circulant():
    assert np.array_equal(circulant_permutation(3), [[0, 1, 0], [0, 0, 1], [1, 0, 0]])
    assert np.array_equal(circulant_permutation(1), [[1.0]])
    P = circulant_permutation(5)
    assert np.array_equal(np.linalg.matrix_power(P, 5), np.eye(5))


def test_homotopy_endpoints_and_midpoint():
    S = random_stochastic_matrix(6, 6, 1.0, 0)
    assert np.array_equal(homotopy_transition(1.0, S), circulant_permutation(6))
    assert np.array_equal(homotopy_transition(0.0, S), S)
    half = homotopy_transition(0.5, np.full((2, 2), 0.5))
    assert np.allclose(half, [[0.25, 0.75], [0.75, 0.25]], atol=1e-15)
    with pytest.raises(AlphaOutOfRange):
        homotopy_transition(1.5, S)


def test_homotopy_stays_stochastic():
    rng = np.random.default_rng(0)
    S = random_stochastic_matrix(8, 8, 1.0, rng)
    for a in rng.uniform(0, 1, 100):
        A = homotopy_transition(a, S)
        assert np.all(A >= 0)
        assert np.allclose(A.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("A, lam2", [
    (circulant_permutation(7), 1.0),
    (np.eye(4), 1.0),
    (np.array([[1.0, 0.0], [0.0, 0.5]]), 0.5),
])
def test_second_eigenvalue_examples(A, lam2):
    got, spec = second_eigenvalue_magnitude(A)
    assert abs(got - lam2) <= 1e-12
    assert np.all(np.diff(np.abs(spec)) <= 1e-12)


def test_circulant_spectrum_on_unit_circle():
    spec = eigen_spectrum(circulant_permutation(9))
    assert np.allclose(np.abs(spec), 1.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31 - 1))
def test_leading_eigenvalue_of_stochastic_matrix_is_one(d, seed):
    spec = eigen_spectrum(random_stochastic_matrix(d, d, 1.0, seed))
    assert abs(abs(spec[0]) - 1.0) <= 1e-9


def test_alpha_for_lambda2_hits_target():
    S = random_stochastic_matrix(40, 40, 1.0, 1)
    for target in (0.3, 0.9):
        a = alpha_for_lambda2(target, S)
        assert abs(second_eigenvalue_magnitude(homotopy_transition(a, S))[0] - target) <= 1e-9
