import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sieve import autodiff as ad
from sieve.data import LabeledDataset, load_mnist_fixture
from sieve.infotheory import estimate_mi_ksg
from sieve.nn import TrainConfig, accuracy, build_model, predict, train_classifier
from sieve.noise_map import NoiseMap, NoiseTrainConfig, train_noise_map
from sieve.suppression import (
    SiftPlan,
    SuppressionConfig,
    build_plan,
    sift,
    suppression_loss,
    threshold_for_ratio,
    threshold_mask,
    train_suppression_values,
)
from conftest import rel_err, tiny_mlp


def test_threshold_example():
    mask, sr = threshold_mask(np.array([0.01, 1.4]), 0.7, 1.5)
    np.testing.assert_array_equal(mask, [1, 0])
    assert sr == 0.5


def test_threshold_extremes():
    sigma = np.array([1e-9, 0.3, 1.2, 1.5 - 1e-6])
    assert threshold_mask(sigma, 1.5, 1.5)[1] == 0.0
    assert threshold_mask(sigma, 0.0, 1.5)[1] == 1.0


def test_threshold_out_of_range():
    with pytest.raises(ValueError):
        threshold_mask(np.ones(2), 1.6, 1.5)
    with pytest.raises(ValueError):
        threshold_mask(np.ones(2), -0.1, 1.5)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, 20, elements=st.floats(1e-6, 1.5 - 1e-6)),
    st.floats(0, 1.5),
    st.floats(0, 1.5),
)
def test_ratio_non_increasing_in_threshold(sigma, t1, t2):
    lo, hi = sorted((t1, t2))
    assert threshold_mask(sigma, hi, 1.5)[1] <= threshold_mask(sigma, lo, 1.5)[1]


def test_threshold_for_ratio():
    sigma = np.linspace(0.1, 1.4, 10)
    for ratio in (0.0, 0.3, 0.9, 1.0):
        t = threshold_for_ratio(sigma, ratio, 1.5)
        assert threshold_mask(sigma, t, 1.5)[1] == pytest.approx(ratio)


def test_identity_plan_returns_input(rng):
    x = rng.random((4, 1, 3, 3)).astype(np.float32)
    out = sift(x, SiftPlan.identity((1, 3, 3)), 0)
    assert out.tobytes() == x.tobytes()


def test_full_suppression(rng):
    x = rng.random((5, 1, 3, 3))
    mu_s = rng.normal(size=(1, 3, 3))
    plan = SiftPlan(np.zeros((1, 3, 3)), mu_s, np.full((1, 3, 3), 0.5), "zeros")
    assert not sift(x, plan, 0).any()
    out = sift(x, plan.with_scheme("trained"), 0)
    np.testing.assert_array_equal(out, np.broadcast_to(mu_s.astype(np.float32), out.shape))


def test_noisy_scheme_ignores_mask():
    x = np.zeros((2, 1, 2, 2), np.float32)
    mu = np.full((1, 2, 2), 0.25)
    plan = SiftPlan(np.zeros((1, 2, 2)), np.ones((1, 2, 2)), np.zeros((1, 2, 2)), "noisy", 0.5, mu)
    np.testing.assert_array_equal(sift(x, plan, 0), np.full(x.shape, 0.25, np.float32))


def test_suppressed_values_constant_across_inputs(rng):
    mask = (rng.random((1, 4, 4)) < 0.5).astype(np.float32)
    plan = SiftPlan(mask, rng.normal(size=(1, 4, 4)) * (1 - mask), rng.random((1, 4, 4)), "trained")
    x = rng.random((100, 1, 4, 4))
    for scheme in ("trained", "zeros"):
        out = sift(x, plan.with_scheme(scheme), 3)
        suppressed = out[:, mask == 0]
        assert (suppressed == suppressed[0]).all()


def test_sift_single_input_and_seed(rng):
    plan = SiftPlan(np.ones((1, 2, 2)), np.zeros((1, 2, 2)), np.full((1, 2, 2), 0.3), "trained")
    x = rng.random((1, 2, 2))
    assert sift(x, plan, 1).shape == (1, 2, 2)
    assert sift(x, plan, 1).tobytes() == sift(x, plan, 1).tobytes()
    assert sift(x, plan, 1).tobytes() != sift(x, plan, 2).tobytes()


def test_plan_validation():
    with pytest.raises(ValueError, match="scheme"):
        SiftPlan(np.ones(2), np.zeros(2), np.zeros(2), "blur")
    with pytest.raises(ValueError):
        SiftPlan(np.full(2, 0.5), np.zeros(2), np.zeros(2))
    with pytest.raises(ad.ShapeError):
        sift(np.zeros((1, 3)), SiftPlan.identity((2,)), 0)


def test_suppression_gradient_matches_finite_differences(rng):
    model = tiny_mlp()
    x = rng.random((5, 1, 2, 2))
    y = rng.integers(0, 2, 5)
    mask = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    sigma = np.full((1, 2, 2), 0.4)
    e = rng.standard_normal(x.shape)
    mu_s = rng.normal(size=(1, 2, 2))
    with ad.precision(np.float64):
        _, grad = suppression_loss(model, x, y, sigma, mask, mu_s, e)
        numeric = ad.finite_difference_gradient(lambda m: suppression_loss(model, x, y, sigma, mask, m, e)[0], mu_s)
    assert rel_err(grad, numeric) <= 1e-4
    assert not grad[mask == 1].any()


def test_all_kept_mask_warns_and_returns_zeros(rng):
    model = tiny_mlp()
    with pytest.warns(RuntimeWarning):
        mu_s = train_suppression_values(model, rng.random((4, 1, 2, 2)), np.zeros(4, int), np.zeros((1, 2, 2)), np.ones((1, 2, 2)), np.ones((1, 2, 2)))
    assert not mu_s.any()


def test_unfrozen_model_rejected(rng):
    with pytest.raises(ValueError, match="frozen"):
        train_suppression_values(tiny_mlp(frozen=False), rng.random((4, 1, 2, 2)), np.zeros(4, int), np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), np.zeros((1, 2, 2)))


def test_full_suppression_reaches_majority_rate(rng):
    # with everything suppressed the best achievable is the constant-output optimum
    model = tiny_mlp(seed=3)
    x = rng.random((200, 1, 2, 2)).astype(np.float32)
    y = (rng.random(200) < 0.7).astype(int)
    zeros = np.zeros((1, 2, 2))
    mu_s = train_suppression_values(model, x, y, zeros, zeros, zeros, SuppressionConfig(epochs=60, lr=0.05, batch_size=50))
    plan = SiftPlan(zeros, mu_s, zeros, "trained")
    assert accuracy(model, sift(x, plan, 0), y) >= max(y.mean(), 1 - y.mean())


def test_training_lowers_cross_entropy_from_initial_values():
    train, _ = load_mnist_fixture()
    x, y = train.features[:1000], (train.labels[:1000] > 5).astype(int)
    model = build_model("mlp", train.input_shape, 2, 0)
    train_classifier(model, x, y, TrainConfig(epochs=2, batch_size=32))
    model.freeze()
    nm, _ = train_noise_map(model, x, y, cfg=NoiseTrainConfig(epochs=5, lam=1.0))
    plan = build_plan(model, x, y, nm, None, "trained", SuppressionConfig(epochs=5), ratio=0.9)
    start = SiftPlan(plan.mask, nm.mu * (1 - plan.mask), plan.sigma, "trained", plan.threshold, nm.mu)

    def cross_entropy(p):
        probs = predict(model, sift(x, p, 0))
        return -np.log(probs[np.arange(len(y)), y] + 1e-12).mean()

    assert cross_entropy(plan) < cross_entropy(start)
    assert not plan.mu_s[plan.mask == 1].any()


def test_masking_does_not_add_information():
    train, _ = load_mnist_fixture()
    x = train.features[:500]
    rng = np.random.default_rng(0)
    sigma = rng.uniform(0.01, 0.5, (1, 32, 32))
    mask = (rng.random((1, 32, 32)) < 0.5).astype(np.float32)
    plan = SiftPlan(mask, rng.random((1, 32, 32)) * (1 - mask), sigma, "noisy")
    noisy = sift(x, plan, 1)
    sifted = sift(x, plan.with_scheme("trained"), 1)
    i_c = estimate_mi_ksg(x, noisy).value
    i_s = estimate_mi_ksg(x, sifted).value
    assert i_s <= i_c + 0.05


def test_build_plan_by_ratio(rng):
    model = tiny_mlp()
    nm = NoiseMap(np.zeros((1, 2, 2)), np.array([[[-5.0, -1.0], [1.0, 5.0]]]), 1.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        plan = build_plan(model, rng.random((8, 1, 2, 2)), rng.integers(0, 2, 8), nm, scheme="zeros", ratio=0.5)
    assert plan.suppression_ratio == 0.5
    np.testing.assert_array_equal(plan.mask[0], [[1, 1], [0, 0]])
