"""Gradient correctness of every primitive against central finite differences."""

import numpy as np
import pytest

from herdcast.autodiff import (
    Adam,
    Tensor,
    dense_stack,
    dropout_mask,
    finite_difference_check,
    l2_penalty,
    mlp_forward,
    softmax_rows,
)


def test_add_mul_matmul_grads(rng):
    a = Tensor(rng.normal(size=(3, 4)))
    b = Tensor(rng.normal(size=(4, 2)))
    c = Tensor(rng.normal(size=(3, 2)))

    def loss_fn():
        return ((a @ b + c) * (a @ b)).sum()

    assert finite_difference_check(loss_fn, [a, b, c]) < 1e-6


def test_broadcast_bias_grad(rng):
    x = rng.normal(size=(5, 3))
    w = Tensor(rng.normal(size=(3, 2)))
    bias = Tensor(rng.normal(size=2))

    def loss_fn():
        return ((Tensor(x) @ w + bias) ** 2).mean()

    assert finite_difference_check(loss_fn, [w, bias]) < 1e-6


def test_elementwise_chain_grads(rng):
    t = Tensor(rng.uniform(0.5, 2.0, size=(4, 3)))

    def loss_fn():
        return ((t.log() + (t * 0.3).exp()) / (t + 2.0)).sum()

    assert finite_difference_check(loss_fn, [t]) < 1e-6


def test_relu_grad_away_from_kink(rng):
    t = Tensor(rng.normal(size=(6, 4)) + 0.2)

    def loss_fn():
        return (t.relu() ** 2).sum()

    assert finite_difference_check(loss_fn, [t]) < 1e-6


def test_sum_axis_and_mean_grads(rng):
    t = Tensor(rng.normal(size=(4, 5)))

    def loss_fn():
        return (t.sum(axis=1, keepdims=True) * t.mean(axis=0, keepdims=True)).sum()

    assert finite_difference_check(loss_fn, [t]) < 1e-6


def test_transpose_reshape_grads(rng):
    t = Tensor(rng.normal(size=(3, 4)))

    def loss_fn():
        return ((t.T @ t).reshape(16) ** 2).sum()

    assert finite_difference_check(loss_fn, [t]) < 1e-6


def test_softmax_rows_weights_sum_to_one(rng):
    scores = [Tensor(rng.normal(size=(7, 1))) for _ in range(4)]
    probs = softmax_rows(scores)
    total = sum(p.data for p in probs)
    assert np.allclose(total, 1.0, atol=1e-12)
    assert all((p.data >= 0).all() for p in probs)


def test_softmax_rows_grad(rng):
    scores = [Tensor(rng.normal(size=(3, 1))) for _ in range(3)]
    values = [rng.normal(size=(3, 2)) for _ in range(3)]

    def loss_fn():
        probs = softmax_rows(scores)
        out = None
        for p, v in zip(probs, values):
            term = p * Tensor(v)
            out = term if out is None else out + term
        return (out ** 2).sum()

    assert finite_difference_check(loss_fn, scores) < 1e-6


def test_backward_requires_scalar():
    t = Tensor(np.ones((2, 2)))
    with pytest.raises(ValueError):
        (t * 2).backward()


def test_grad_accumulates_on_reuse(rng):
    t = Tensor(np.array(2.0))
    y = t * t + t * 3.0
    y.backward()
    assert t.grad == pytest.approx(2 * 2.0 + 3.0)


def test_adam_reduces_quadratic():
    w = Tensor(np.array([5.0, -3.0]))
    opt = Adam([w], lr=0.1)
    for _ in range(200):
        opt.zero_grad()
        loss = (w * w).sum()
        loss.backward()
        opt.step()
    assert np.abs(w.data).max() < 1e-2


def test_mlp_forward_and_l2(rng):
    layers = dense_stack([3, 5, 1], rng)
    x = rng.normal(size=(4, 3))
    out = mlp_forward(layers, Tensor(x))
    assert out.shape == (4, 1)
    penalty = l2_penalty([l.w for l in layers])
    assert penalty.data == pytest.approx(sum((l.w.data ** 2).sum() for l in layers))


def test_dropout_mask_scaling(rng):
    mask = dropout_mask((1000, 10), 0.25, rng)
    kept = mask[mask > 0]
    assert np.allclose(kept, 1.0 / 0.75)
    assert abs((mask == 0).mean() - 0.25) < 0.03
    assert dropout_mask((5, 5), 0.0, rng).min() == 1.0
