import numpy as np
import pytest

from modules.errors import LayoutError, ShapeError
from modules.numcore import (
    Batch,
    MlpModel,
    ParamVector,
    accuracy,
    axpy,
    clip01,
    dot,
    hadamard,
    backward,
    derive_rng,
    forward,
    init_model,
    loss_ce,
    loss_and_grad,
    mlp_layout,
    predict,
    scale,
    sgd_step,
    softmax,
    sq_norm,
    zero_model,
)


def numeric_gradient(model, batch, eps=1e-5):
    base = model.params.data
    grad = np.zeros_like(base)
    for k in range(base.size):
        up = base.copy()
        down = base.copy()
        up[k] += eps
        down[k] -= eps
        _, lu = forward(model.with_params(model.params.with_data(up)), batch.inputs)
        _, ld = forward(model.with_params(model.params.with_data(down)), batch.inputs)
        grad[k] = (loss_ce(lu, batch.labels) - loss_ce(ld, batch.labels)) / (2 * eps)
    return grad


def test_backward_matches_finite_differences_on_random_models():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        d, h, c, n = rng.integers(2, 5), rng.integers(2, 6), rng.integers(2, 5), rng.integers(1, 6)
        model = init_model(d, h, c, rng)
        model = model.with_params(model.params.with_data(model.params.data + 0.1 * rng.normal(size=model.params.size)))
        batch = Batch(rng.normal(size=(n, d)), rng.integers(0, c, size=n))
        analytic = backward(model, batch).data
        numeric = numeric_gradient(model, batch)
        total = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
        assert np.linalg.norm(analytic - numeric) / total < 1e-4


def test_backward_matches_finite_differences_per_coordinate():
    rng = np.random.default_rng(77)
    checked = 0
    while checked < 100:
        d, h, c, n = rng.integers(2, 5), rng.integers(2, 6), rng.integers(2, 5), rng.integers(1, 6)
        model = init_model(d, h, c, rng)
        model = model.with_params(model.params.with_data(model.params.data + 0.1 * rng.normal(size=model.params.size)))
        batch = Batch(rng.normal(size=(n, d)), rng.integers(0, c, size=n))
        # finite differences straddling a ReLU kink are not derivatives
        if np.min(np.abs(batch.inputs @ model.W1 + model.b1)) < 1e-3:
            continue
        analytic = backward(model, batch).data
        numeric = numeric_gradient(model, batch)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
        assert np.all(np.abs(analytic - numeric) / denom < 1e-4)
        checked += 1


def test_sgd_steps_decrease_the_loss():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        model = init_model(4, 8, 3, rng)
        batch = Batch(rng.normal(size=(16, 4)), rng.integers(0, 3, size=16))
        losses = []
        for _ in range(51):
            loss, grad = loss_and_grad(model, batch)
            losses.append(loss)
            model = model.with_params(sgd_step(model.params, grad, 0.01))
        assert all(b < a for a, b in zip(losses, losses[1:]))


def test_param_vector_is_read_only_and_validated():
    pv = ParamVector.from_arrays([("a", np.ones((2, 2)), "body"), ("b", np.zeros(3), "head")])
    assert pv.size == 7
    assert pv.view("a").shape == (2, 2)
    with pytest.raises(ValueError):
        pv.data[0] = 5.0
    with pytest.raises(LayoutError):
        pv.with_data(np.zeros(6))
    with pytest.raises(LayoutError):
        ParamVector.from_arrays([("a", np.ones(2), "torso")])


def test_select_and_merge_segments():
    layout = mlp_layout(3, 4, 2)
    params = layout.with_data(np.arange(layout.size, dtype=float))
    head = params.select("head")
    assert head.names == ["W2", "b2"]
    assert np.array_equal(head.view("b2"), params.view("b2"))

    replaced = params.merge(head.with_data(np.zeros(head.size)))
    assert np.all(replaced.view("W2") == 0)
    assert np.array_equal(replaced.view("W1"), params.view("W1"))


def test_vector_ops_reject_layout_mismatch():
    a = mlp_layout(3, 4, 2)
    b = mlp_layout(3, 5, 2)
    with pytest.raises(LayoutError):
        axpy(1.0, a, b)
    with pytest.raises(LayoutError):
        hadamard(a, b)


def vec(values):
    return ParamVector.from_arrays([("u", np.asarray(values, dtype=float), "body")])


def test_vector_op_identities():
    rng = np.random.default_rng(8)
    x, y = vec(rng.normal(size=6)), vec(rng.normal(size=6))
    assert np.array_equal(axpy(0.0, x, y).data, y.data)
    assert dot(x, x) == sq_norm(x)
    assert np.array_equal(scale(2.0, x).data, 2.0 * x.data)
    assert np.array_equal(hadamard(x, y).data, x.data * y.data)


def test_clip01_clamps_to_unit_interval():
    assert clip01(vec([-0.2, 0.5, 1.7])).data.tolist() == [0.0, 0.5, 1.0]
    assert clip01(-3.0) == 0.0
    assert clip01(0.25) == 0.25
    assert clip01(4.0) == 1.0


def test_sgd_step_mask_keeps_segments():
    params = mlp_layout(2, 3, 2).full_like(1.0)
    grad = params.full_like(2.0)
    stepped = sgd_step(params, grad, 0.5, mask=["W2", "b2"])
    assert np.all(stepped.view("W1") == 0.0)
    assert np.all(stepped.view("W2") == 1.0)


def test_loss_is_stable_for_large_logits():
    logits = np.array([[1000.0, 0.0], [0.0, 1000.0]])
    assert loss_ce(logits, np.array([0, 1])) == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(softmax(logits)))


def test_forward_rejects_wrong_input_width():
    with pytest.raises(ShapeError):
        forward(zero_model(3, 2, 2), np.zeros((4, 5)))


def test_zero_model_predicts_lowest_class_on_ties():
    model = zero_model(2, 3, 4)
    assert np.all(predict(model, np.ones((5, 2))) == 0)
    assert accuracy(model, np.ones((4, 2)), np.array([0, 1, 0, 1])) == 0.5


def test_loss_and_grad_agree_with_backward():
    rng = np.random.default_rng(0)
    model = init_model(3, 4, 3, rng)
    batch = Batch(rng.normal(size=(6, 3)), rng.integers(0, 3, size=6))
    loss, grad = loss_and_grad(model, batch)
    assert loss > 0
    assert np.array_equal(grad.data, backward(model, batch).data)


def test_derived_streams_are_reproducible_and_independent():
    a = derive_rng(5, "train", 1).normal(size=4)
    b = derive_rng(5, "train", 1).normal(size=4)
    c = derive_rng(5, "train", 2).normal(size=4)
    d = derive_rng(5, "personal", 1).normal(size=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_zero_params_give_uniform_softmax():
    _, logits = forward(zero_model(3, 4, 5), np.random.default_rng(1).normal(size=(2, 3)))
    assert np.all(logits == 0.0)
    np.testing.assert_allclose(softmax(logits), 0.2)


def test_identity_body_passes_nonnegative_inputs_through():
    layout = mlp_layout(3, 3, 2)
    params = layout.assemble({"W1": np.eye(3), "b1": np.zeros(3), "W2": np.ones((3, 2)), "b2": np.zeros(2)})
    model = MlpModel(3, 3, 2, params)
    x = np.array([[0.5, 2.0, 0.0]])
    reps, _ = forward(model, x)
    assert np.array_equal(reps, x)


def test_forward_matches_naive_matmul():
    rng = np.random.default_rng(7)
    model = init_model(4, 5, 3, rng)
    x = rng.normal(size=(3, 4))
    _, logits = forward(model, x)
    W1, b1, W2, b2 = model.W1, model.b1, model.W2, model.b2
    for n in range(3):
        hidden = [max(0.0, sum(x[n, i] * W1[i, j] for i in range(4)) + b1[j]) for j in range(5)]
        for c in range(3):
            expected = sum(hidden[j] * W2[j, c] for j in range(5)) + b2[c]
            assert abs(logits[n, c] - expected) < 1e-12


def test_loss_on_symmetric_logits_is_ln2():
    assert loss_ce(np.zeros((1, 2)), np.array([0])) == pytest.approx(np.log(2), abs=1e-12)


def test_softmax_matches_naive_normalisation():
    logits = np.random.default_rng(8).normal(size=(4, 3))
    naive = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(softmax(logits), naive, atol=1e-10)


def test_symmetric_head_bias_gradient():
    grad = backward(zero_model(2, 3, 2), Batch(np.ones((1, 2)), np.array([0])))
    np.testing.assert_allclose(grad.view("b2"), [-0.5, 0.5])


def test_duplicated_batch_gives_same_gradient():
    rng = np.random.default_rng(9)
    model = init_model(3, 4, 3, rng)
    batch = Batch(rng.normal(size=(5, 3)), rng.integers(0, 3, size=5))
    doubled = Batch(np.vstack([batch.inputs, batch.inputs]), np.concatenate([batch.labels, batch.labels]))
    np.testing.assert_allclose(backward(model, doubled).data, backward(model, batch).data, atol=1e-14)
