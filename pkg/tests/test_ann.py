import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from threebody.ann import (AMSGradState, Dataset, TrainConfig, TrainingError, amsgrad_step, backprop,
                           confusion_matrix, destandardize, fit_linear, forward, history_csv, init_model,
                           load_model, make_dataset, mean_relative_error, metrics, one_hot, save_model,
                           softmax, split_tags, standardize, train_classifier, train_regression)
from threebody.errors import LoadError


def _numeric_grads(model, X, Y, h=1e-6):
    out = []
    for p in model.params():
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up, _ = backprop(model, X, Y)
            p[i] = old - h
            down, _ = backprop(model, X, Y)
            p[i] = old
            g[i] = (up - down) / (2 * h)
        out.append(g)
    return out


@pytest.mark.parametrize("mode,activation", [("linear", "tanh"), ("softmax", "tanh"), ("linear", "relu")])
def test_gradient_check_toy_network(mode, activation):
    rng = np.random.default_rng(3)
    model = init_model([2, 16, 16, 4], mode, activation, seed=1)
    X = rng.normal(size=(7, 2))
    Y = one_hot(rng.integers(0, 4, 7), 4) if mode == "softmax" else rng.normal(size=(7, 4))
    _, grads = backprop(model, X, Y)
    num = _numeric_grads(model, X, Y)
    for g, n in zip(grads, num):
        scale = max(np.abs(n).max(), 1e-8)
        assert np.abs(g - n).max() / scale < 1e-5


def test_zero_weights_give_means_and_uniform_probabilities():
    reg = init_model([2, 8, 3], "linear", seed=0)
    for W in reg.weights:
        W[:] = 0
    reg.norm_stats = {"x_mean": np.zeros(2), "x_std": np.ones(2),
                      "y_mean": np.array([1.5, -2.0, 7.0]), "y_std": np.array([2.0, 1.0, 3.0])}
    np.testing.assert_array_equal(forward(reg, [0.3, 0.9]), [1.5, -2.0, 7.0])
    clf = init_model([2, 8, 3], "softmax", seed=0)
    for W in clf.weights:
        W[:] = 0
    np.testing.assert_allclose(forward(clf, [[0.3, 0.9], [5, -1]]), np.full((2, 3), 1 / 3), atol=1e-15)


def test_forward_shape_mismatch():
    with pytest.raises(ValueError):
        forward(init_model([2, 4, 1]), [1.0, 2.0, 3.0])


def test_softmax_rows_are_distributions():
    z = np.random.default_rng(0).normal(scale=3, size=(1000, 3))
    p = softmax(z)
    assert np.all((p > 0) & (p < 1))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_standardize_roundtrip():
    X = np.random.default_rng(1).normal(loc=3, scale=0.01, size=(50, 4))
    m, s = X.mean(axis=0), X.std(axis=0)
    np.testing.assert_allclose(destandardize(standardize(X, m, s), m, s), X, rtol=1e-12)


def test_amsgrad_worked_step():
    p = [np.array([1.0])]
    st = AMSGradState.fresh(p, alpha=0.1)
    amsgrad_step(p, [np.array([1.0])], st)
    assert p[0][0] == pytest.approx(1 - 0.1 * 0.1 / (np.sqrt(0.001) + 1e-8), rel=1e-12)
    assert p[0][0] == pytest.approx(0.6838, abs=1e-4)


def test_amsgrad_zero_gradient_is_a_no_op():
    p = [np.array([[1.0, -2.0]]), np.array([0.5])]
    before = [a.copy() for a in p]
    st = AMSGradState.fresh(p)
    amsgrad_step(p, [np.zeros((1, 2)), np.zeros(1)], st)
    for a, b in zip(p, before):
        np.testing.assert_array_equal(a, b)


def test_amsgrad_keeps_largest_second_moment():
    p = [np.array([0.0])]
    st = AMSGradState.fresh(p)
    amsgrad_step(p, [np.array([10.0])], st)
    peak = st.vhat[0].copy()
    amsgrad_step(p, [np.array([0.1])], st)
    assert st.vhat[0][0] == peak[0] and st.v[0][0] < peak[0]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=-1e3, max_value=1e3, allow_nan=False), min_size=2, max_size=30))
def test_amsgrad_vhat_monotone(gs):
    p = [np.zeros(1)]
    state = AMSGradState.fresh(p)
    prev = 0.0
    for g in gs:
        amsgrad_step(p, [np.array([g])], state)
        assert state.vhat[0][0] >= prev
        prev = state.vhat[0][0]


def test_amsgrad_rejects_non_finite():
    p = [np.zeros(2)]
    with pytest.raises(TrainingError, match="non-finite"):
        amsgrad_step(p, [np.array([1.0, np.nan])], AMSGradState.fresh(p))


def test_split_tags_counts_and_determinism():
    tags = split_tags(1000, (0.9, 0.05, 0.05), seed=4)
    assert (tags == "validation").sum() == 50 and (tags == "test").sum() == 50
    assert list(tags) == list(split_tags(1000, (0.9, 0.05, 0.05), seed=4))
    with pytest.raises(ValueError):
        split_tags(10, (0.5, 0.2, 0.2))


def _toy_regression(n=60, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.9, 1.1, size=(n, 2))
    Y = np.column_stack([np.sin(3 * X[:, 0]) + X[:, 1], X[:, 0] * X[:, 1], 2 + X[:, 1] ** 2])
    return make_dataset(X, Y, (0.8, 0.1, 0.1), seed)


SMALL = TrainConfig(hidden=(32, 32), max_epochs=400, plateau=100)


def test_regression_fits_smooth_map():
    data = _toy_regression()
    model, hist = train_regression(data, SMALL, seed=2)
    Xt, Yt = data.part("test")
    assert mean_relative_error(forward(model, Xt), Yt) < 2e-2
    assert hist[-1]["train"] < hist[0]["train"]


def test_training_is_bitwise_deterministic():
    data = _toy_regression()
    cfg = TrainConfig(hidden=(16, 16), max_epochs=50, plateau=100)
    a, ha = train_regression(data, cfg, seed=5)
    b, hb = train_regression(data, cfg, seed=5)
    assert save_model(a) == save_model(b)
    assert history_csv(ha) == history_csv(hb)


def test_zero_variance_input_is_named():
    X = np.column_stack([np.linspace(0, 1, 10), np.ones(10)])
    data = make_dataset(X, X.copy(), (1.0, 0.0, 0.0))
    with pytest.raises(TrainingError, match="feature 1"):
        train_regression(data, SMALL)


def test_regression_needs_four_examples():
    data = make_dataset(np.eye(3)[:, :2], np.eye(3), (1.0, 0.0, 0.0))
    with pytest.raises(TrainingError):
        train_regression(data, SMALL)


def test_memorises_tiny_set():
    X = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    Y = np.array([[1.0], [2.0], [3.0], [4.0]])
    cfg = TrainConfig(hidden=(32, 32), max_epochs=3000, plateau=3000, target_loss=1e-8)
    model, hist = train_regression(make_dataset(X, Y, (1.0, 0.0, 0.0)), cfg)
    assert hist[-1]["train"] <= 1e-8
    assert np.isnan(hist[-1]["test"])


def _blobs(n, seed, shuffle=False):
    rng = np.random.default_rng(seed)
    centres = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    y = rng.integers(0, 3, n)
    # bounded noise keeps the blobs strictly linearly separable
    X = centres[y] + rng.uniform(-1, 1, size=(n, 2))
    if shuffle:
        y = rng.permutation(y)
    return make_dataset(X, one_hot(y), (0.7, 0.15, 0.15), seed)


CLF = TrainConfig.classifier(hidden=(32, 32), max_epochs=300, patience=50)


def test_classifier_separates_blobs():
    data = _blobs(600, 0)
    model, _ = train_classifier(data, CLF, seed=0)
    Xt, Yt = data.part("test")
    acc = np.mean(np.argmax(forward(model, Xt), axis=1) == np.argmax(Yt, axis=1))
    assert acc >= 0.99


def test_classifier_at_chance_on_shuffled_labels():
    data = _blobs(1500, 1, shuffle=True)
    model, _ = train_classifier(data, CLF, seed=0)
    Xt, Yt = data.part("test")
    acc = np.mean(np.argmax(forward(model, Xt), axis=1) == np.argmax(Yt, axis=1))
    assert abs(acc - 1 / 3) < 0.1


def test_classifier_needs_two_classes():
    data = make_dataset(np.random.default_rng(0).normal(size=(20, 2)), one_hot(np.zeros(20, dtype=int)))
    with pytest.raises(TrainingError, match="need at least 2"):
        train_classifier(data, CLF)


def test_metrics_worked_examples():
    assert metrics([[1475, 2], [0, 137]])["accuracy"] == pytest.approx(1612 / 1614)
    perfect = metrics(np.diag([3, 4, 5]))
    assert perfect["accuracy"] == 1 and perfect["macro_f1"] == 1
    case2 = metrics([[846, 1, 5], [1, 943, 2], [1, 0, 291]])
    assert case2["accuracy"] == pytest.approx(2080 / 2090)
    # a class never predicted nor present contributes F1 = 0
    assert metrics([[2, 0], [0, 0]])["f1"] == [1.0, 0.0]
    with pytest.raises(ValueError):
        metrics(np.zeros((3, 3)))


def test_confusion_matrix_counts():
    C = confusion_matrix([0, 1, 2, 2], [0, 2, 2, 2])
    assert C.tolist() == [[1, 0, 0], [0, 0, 1], [0, 0, 2]]


def test_save_load_bit_exact(tmp_path):
    data = _toy_regression()
    model, _ = train_regression(data, TrainConfig(hidden=(8,), max_epochs=20), seed=0)
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(str(path))
    X = data.X[:5]
    assert np.array_equal(forward(back, X), forward(model, X))


def test_load_errors(tmp_path):
    text = save_model(init_model([2, 4, 1]))
    p = tmp_path / "cut.json"
    p.write_text(text[: len(text) // 2])
    with pytest.raises(LoadError):
        load_model(str(p))
    with pytest.raises(LoadError, match="version"):
        load_model(text.replace('"version": "1.0"', '"version": "2.0"'))
    with pytest.raises(LoadError):
        load_model(text.replace('"layer_sizes": [\n  2,', '"layer_sizes": [\n  3,'))


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros((2, 1)), ["train"] * 3)
    with pytest.raises(ValueError):
        Dataset(np.zeros((1, 2)), np.zeros((1, 1)), ["holdout"])


def test_linear_baseline_exact_on_affine_data():
    X = np.random.default_rng(0).normal(size=(20, 2))
    Y = X @ np.array([[1.0, 2.0], [3.0, -1.0]]) + [0.5, -0.25]
    np.testing.assert_allclose(fit_linear(X, Y).predict(X), Y, atol=1e-12)
