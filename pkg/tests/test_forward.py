import numpy as np
import pytest

from dualfilter.errors import ImpossibleObservation, TokenOutOfRange
from dualfilter.experiments import build_model
from dualfilter.forward import bayes_update, forward_filter, forward_step, forward_tree, predict
from dualfilter.hmm import circulant_permutation, sample_path, validate_model
from dualfilter.oracle import exact_posterior, exact_predictions


def test_deterministic_emission_step():
    M = validate_model([0.5, 0.5], np.eye(2), [[1, 0], [0, 1]])
    assert np.array_equal(forward_step(np.array([0.5, 0.5]), M, 1), [0.0, 1.0])


def test_uninformative_token_only_propagates(make_model):
    M = make_model(4, 2)
    C = np.tile([0.2, 0.5, 0.3], (4, 1))
    M2 = validate_model(M.prior, M.transition, C)
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.allclose(forward_step(pi, M2, 1), pi @ M.transition, atol=1e-15)


def test_impossible_observation():
    M = validate_model([1.0, 0.0], np.eye(2), [[1, 0], [0, 1]])
    with pytest.raises(ImpossibleObservation):
        forward_step(np.array([1.0, 0.0]), M, 1)
    with pytest.raises(ImpossibleObservation) as info:
        forward_filter(M, [0, 0, 1])
    assert info.value.time == 3


def test_token_out_of_range(make_model):
    M = make_model(2, 1)
    with pytest.raises(TokenOutOfRange):
        forward_step(M.prior, M, 2)
    with pytest.raises(TokenOutOfRange):
        forward_filter(M, [0, 5])


def test_empty_sequence(make_model):
    M = make_model(3, 1)
    out = forward_filter(M, [])
    assert out.shape == (1, 3) and np.array_equal(out[0], M.prior)


def test_likelihood_scale_invariance(make_model):
    M = make_model(5, 3)
    pi = np.full(5, 0.2)
    base = bayes_update(pi, M.emission[:, 2], M.transition)
    for k in (1e-6, 0.3, 17.0):
        assert np.allclose(bayes_update(pi, k * M.emission[:, 2], M.transition), base,
                           atol=1e-15, rtol=1e-14)


def test_matches_enumeration_tiny(make_model):
    M = make_model(3, 1, seed=2)
    toks = sample_path(M, 3, 0).tokens
    assert np.abs(forward_filter(M, toks) - exact_posterior(M, toks)).max() <= 1e-12


def test_predictions_match_enumeration(make_model):
    M = make_model(3, 2, seed=5)
    toks = sample_path(M, 3, 1).tokens
    pi = forward_filter(M, toks)
    assert np.abs(predict(pi[1:], M) - exact_predictions(M, toks)).max() <= 1e-12


def test_outputs_are_measures(make_model):
    M = make_model(20, 5)
    pi = forward_filter(M, sample_path(M, 100, 3).tokens)
    assert np.all(pi >= 0)
    assert np.allclose(pi.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    p = predict(pi, M)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12, rtol=0)


def test_predict_examples(make_model):
    M = make_model(4, 3)
    assert np.allclose(predict(np.eye(4)[2], M), M.emission[2], atol=0)
    q = np.array([0.1, 0.6, 0.3])
    M2 = validate_model(np.full(3, 1 / 3), np.eye(3), np.tile(q, (3, 1)))
    assert np.allclose(predict(np.full(3, 1 / 3), M2), q, atol=1e-15)


def test_concentrates_on_sharp_cycle():
    # deterministic cycle with sharply peaked emissions
    M = build_model(32, 7, 1.0, temperature=0.1, seed=0)
    assert np.array_equal(M.transition, circulant_permutation(32))
    pi = forward_filter(M, sample_path(M, 64, 0).tokens)
    assert pi[-1].max() > 0.99


def test_forward_tree_matches_filter(make_model):
    M = make_model(3, 2, seed=9)
    tree = forward_tree(M, 3)
    toks = sample_path(M, 3, 4).tokens
    pi = forward_filter(M, toks)
    for t in range(4):
        assert np.allclose(tree[t][tuple(toks[:t])], pi[t], atol=1e-15)


def test_forward_tree_zero_measure_on_impossible_prefix():
    M = validate_model([1.0, 0.0], np.eye(2), [[1, 0], [0, 1]])
    tree = forward_tree(M, 2)
    assert np.array_equal(tree[1][1], [0.0, 0.0])
    assert np.array_equal(tree[2][0, 0], [1.0, 0.0])
