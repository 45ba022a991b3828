import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nets import bounded_instance, conservation_error, random_net
from relprune.lrp import (
    SEED_PREDICTED,
    LrpConfig,
    RelevanceError,
    propagate,
    reduce_maps,
    relevance_aggregate,
    relevance_batch,
    relevance_single,
)
from relprune.nn import Dense, ModelGraph, fold_model, forward


def test_single_linear_neuron_hand_example():
    model = ModelGraph((Dense(np.array([[2.0, -1.0]]), np.zeros(1)),), (2,))
    r_in, _, _ = propagate(model, np.array([[1.0, 1.0]]), np.array([[1.0]]), epsilon=1e-12)
    np.testing.assert_allclose(r_in[0], [2.0, -1.0], rtol=1e-10)
    assert r_in.sum() == pytest.approx(1.0, rel=1e-10)


def test_identity_dense_passes_relevance_through(rng):
    model = ModelGraph((Dense(np.eye(4), np.zeros(4)),), (4,))
    a = rng.uniform(0.5, 2.0, size=(1, 4))
    r = rng.normal(size=(1, 4))
    r_in, _, _ = propagate(model, a, r, epsilon=1e-12)
    np.testing.assert_allclose(r_in, r, rtol=1e-10)


@pytest.mark.parametrize("seed", range(20))
def test_conservation_on_bias_free_nets(seed):
    assert conservation_error(seed) < 1e-6


def test_per_layer_totals_are_conserved():
    model, x = bounded_instance(42)
    out = forward(model, x)[-1]
    seed_rel = np.zeros_like(out)
    seed_rel[0, 1] = out[0, 1]
    _, conv_rel, _ = propagate(model, x, seed_rel, 1e-9)
    for r in conv_rel:
        assert r.sum() == pytest.approx(seed_rel.sum(), rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), log_eps=st.floats(-9, 0), bias=st.booleans(), bn=st.booleans())
def test_relevance_is_always_finite(seed, log_eps, bias, bn):
    rng = np.random.default_rng(seed)
    model = random_net(rng, bias=bias, bn=bn)
    x = rng.normal(size=(3, 1, 6, 6))
    x[0] = 0.0  # all-zero input exercises z == 0 in every layer
    scores = relevance_batch(model, x, rng.integers(0, 3, size=3), LrpConfig(10.0**log_eps))
    assert np.all(np.isfinite(scores))


def test_masked_filters_receive_zero_relevance(rng):
    model = random_net(rng, filters=(4, 5))
    alive = np.ones(model.f_num, dtype=bool)
    alive[[2, 5, 7]] = False
    masked = model.with_alive(alive)
    scores = relevance_batch(masked, rng.normal(size=(6, 1, 6, 6)), rng.integers(0, 3, size=6))
    assert not scores[:, ~alive].any()


def test_relevance_map_shape_and_alive(small_net, rng):
    rmap = relevance_single(small_net, rng.normal(size=(1, 6, 6)), 1)
    assert len(rmap) == small_net.f_num
    assert rmap.alive.all()


def test_batchnorm_models_are_folded_first(rng):
    model = random_net(rng, bn=True)
    x = rng.normal(size=(4, 1, 6, 6))
    y = rng.integers(0, 3, size=4)
    np.testing.assert_array_equal(relevance_batch(model, x, y), relevance_batch(fold_model(model), x, y))


def test_seed_modes_differ_only_on_misclassified(rng, small_net):
    x = rng.normal(size=(8, 1, 6, 6))
    pred = np.argmax(forward(small_net, x)[-1], axis=1)
    by_pred = relevance_batch(small_net, x, np.zeros(8, dtype=int), LrpConfig(seed_mode=SEED_PREDICTED))
    by_true = relevance_batch(small_net, x, pred)
    np.testing.assert_array_equal(by_pred, by_true)


def test_abs_mode_is_nonnegative(small_net, rng):
    scores = relevance_batch(small_net, rng.normal(size=(4, 1, 6, 6)), [0, 1, 2, 0], LrpConfig(absolute=True))
    assert (scores >= 0).all()


def test_non_finite_forward_rejected(rng):
    model = random_net(rng)
    bad = model.layers[-1]
    bad.weight[0, 0] = np.inf
    with pytest.raises(RelevanceError):
        relevance_batch(model, np.ones((1, 1, 6, 6)), [0])


def test_bad_labels_rejected(small_net, rng):
    with pytest.raises(RelevanceError):
        relevance_batch(small_net, rng.normal(size=(2, 1, 6, 6)), [0, 3])


# ------------------------------------------------------------------ aggregation


def test_aggregate_of_one_image_equals_single(small_net, rng):
    x = rng.normal(size=(1, 1, 6, 6))
    single = relevance_single(small_net, x[0], 2)
    agg = relevance_aggregate(small_net, x, [2])
    assert agg.scores.tobytes() == single.scores.tobytes()


def test_same_image_twice_doubles_exactly(small_net, rng):
    x = rng.normal(size=(1, 1, 6, 6))
    single = relevance_single(small_net, x[0], 1).scores
    agg = relevance_aggregate(small_net, np.concatenate([x, x]), [1, 1]).scores
    assert agg.tobytes() == (2 * single).tobytes()


@pytest.mark.parametrize("split", [1, 2, 3])
def test_partitioned_collection_reduces_bitwise_equal(small_net, rng, split):
    x = rng.normal(size=(4, 1, 6, 6))
    y = np.array([0, 1, 2, 1])
    full = relevance_aggregate(small_net, x, y).scores
    # per-image maps gathered in two independent batches, then reduced in index order
    parts = np.concatenate([relevance_batch(small_net, x[:split], y[:split]), relevance_batch(small_net, x[split:], y[split:])])
    assert reduce_maps(parts).tobytes() == full.tobytes()
    # and each per-image map is independent of which batch it was computed in
    singles = np.stack([relevance_single(small_net, x[i], y[i]).scores for i in range(4)])
    assert reduce_maps(singles).tobytes() == full.tobytes()


def test_aggregate_is_deterministic(small_net, rng):
    x = rng.normal(size=(5, 1, 6, 6))
    y = np.array([0, 1, 2, 0, 1])
    a = relevance_aggregate(small_net, x, y).scores
    b = relevance_aggregate(small_net, x.copy(), y.copy()).scores
    assert a.tobytes() == b.tobytes()


def test_empty_reference_set_rejected(small_net):
    with pytest.raises(RelevanceError):
        relevance_aggregate(small_net, np.zeros((0, 1, 6, 6)), np.zeros(0, dtype=int))


def test_epsilon_must_be_positive():
    with pytest.raises(ValueError):
        LrpConfig(epsilon=0.0)
