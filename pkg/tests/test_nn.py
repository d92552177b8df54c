import numpy as np
import pytest

from sieve import autodiff as ad
from sieve.nn import TrainConfig, accuracy, build_model, predict, random_shift, train_classifier
from sieve.optim import SGD, Adam, make_optimizer


def blobs(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    centres = np.array([[-2.0, -2.0], [2.0, 2.0]])
    x = centres[y] + rng.normal(0, 0.5, (n, 2))
    return x.reshape(n, 1, 1, 2).astype(np.float32), y


def test_same_seed_same_parameters():
    a = build_model("mlp", (1024,), 2, 7)
    b = build_model("mlp", (1024,), 2, 7)
    for name in a.params:
        assert a.params[name].tobytes() == b.params[name].tobytes()


def test_lenet_parameter_count():
    assert build_model("lenet_lite", (1, 32, 32), 10, 0).n_params() == 61706


def test_zero_classes_rejected():
    with pytest.raises(ValueError):
        build_model("mlp", (4,), 0)


def test_unknown_architecture_rejected():
    with pytest.raises(ValueError, match="unknown architecture"):
        build_model("resnet", (1, 32, 32), 2)


def test_lenet_rejects_incompatible_size():
    with pytest.raises(ValueError):
        build_model("lenet_lite", (1, 15, 15), 2)


def test_separable_blobs_are_learned():
    x, y = blobs()
    model = build_model("mlp", x.shape[1:], 2, 0)
    history = train_classifier(model, x, y, TrainConfig(epochs=20, lr=1e-2, batch_size=32))
    assert history["accuracy"][-1] >= 0.99
    assert accuracy(model, x, y) >= 0.99


def test_zero_epochs_rejected():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_frozen_model_cannot_train():
    x, y = blobs(20)
    model = build_model("mlp", x.shape[1:], 2, 0).freeze()
    with pytest.raises(ValueError, match="frozen"):
        train_classifier(model, x, y, TrainConfig(epochs=1))


def test_labels_out_of_range_rejected():
    x, _ = blobs(20)
    model = build_model("mlp", x.shape[1:], 2, 0)
    with pytest.raises(ValueError):
        train_classifier(model, x, np.full(20, 2), TrainConfig(epochs=1))


def test_training_is_bit_reproducible():
    x, y = blobs(64)
    runs = []
    for _ in range(2):
        m = build_model("mlp", x.shape[1:], 2, 3)
        train_classifier(m, x, y, TrainConfig(epochs=3, batch_size=16, seed=5, shift=0))
        runs.append(b"".join(m.params[k].tobytes() for k in sorted(m.params)))
    assert runs[0] == runs[1]


def test_full_batch_linear_loss_non_increasing():
    # single linear layer, full batch, small step: convex and monotone
    from sieve.nn import Dense, Flatten, Model

    x, y = blobs(100)
    layers = [Flatten(), Dense("fc1", 2, 2)]
    params = {"fc1.weight": np.zeros((2, 2), np.float32), "fc1.bias": np.zeros(2, np.float32)}
    model = Model("mlp", x.shape[1:], 2, params, layers=layers)
    h = train_classifier(model, x, y, TrainConfig(epochs=15, lr=0.05, batch_size=100, optimizer="sgd"))
    assert all(b <= a + 1e-7 for a, b in zip(h["loss"], h["loss"][1:]))


def test_predict_rows_are_distributions(rng):
    model = build_model("lenet_lite", (1, 32, 32), 10, 0)
    p = predict(model, rng.random((5, 1, 32, 32)))
    assert p.shape == (5, 10)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-5)
    assert (p >= 0).all()


def test_zero_head_predicts_uniform(rng):
    model = build_model("mlp", (1, 4, 4), 2, 0, head_init="zeros")
    np.testing.assert_allclose(predict(model, rng.random((3, 1, 4, 4))), 0.5, atol=1e-6)


def test_predict_checks_shape():
    model = build_model("mlp", (1, 4, 4), 2, 0)
    with pytest.raises(ad.ShapeError):
        predict(model, np.zeros((2, 1, 4, 5)))


def test_random_shift_keeps_shape_and_mass(rng):
    batch = np.zeros((4, 1, 8, 8), np.float32)
    batch[:, :, 3:5, 3:5] = 1.0
    out = random_shift(batch, 2, rng)
    assert out.shape == batch.shape
    np.testing.assert_array_equal(out.sum(axis=(1, 2, 3)), 4.0)


def test_transform_hook_sees_every_batch():
    x, y = blobs(40)
    seen = []
    model = build_model("mlp", x.shape[1:], 2, 0)

    def hook(batch, rng):
        seen.append(len(batch))
        return batch

    train_classifier(model, x, y, TrainConfig(epochs=2, batch_size=16), transform=hook)
    assert seen == [16, 16, 8, 16, 16, 8]


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -1.0], np.float32)}
    Adam(0.1).step(params, {"w": np.array([3.0, -0.5])})
    np.testing.assert_allclose(params["w"], [0.9, -0.9], rtol=1e-6)


def test_adam_does_not_mutate_in_place():
    w = np.array([1.0], np.float32)
    params = {"w": w}
    Adam(0.1).step(params, {"w": np.array([1.0])})
    assert w[0] == 1.0 and params["w"] is not w


def test_sgd_step():
    params = {"w": np.array([1.0], np.float32)}
    SGD(0.5).step(params, {"w": np.array([2.0])})
    assert params["w"][0] == 0.0


def test_optimizer_validation():
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", 0.1)
    with pytest.raises(ValueError):
        Adam(0.0)
