import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fairrobust.evaluation import finite_difference_check
from fairrobust.models import (LinearClassifier, MlpClassifier, ModelFormatError, cross_entropy_grad,
                               deserialize_model, forward, init_model, kl_boundary_grad, logits, predict,
                               serialize_model, sgd_step, zeros_like)
from fairrobust.rng import generator


def random_model(seed, kind, p=3, h=4, c=3, activation="tanh"):
    rng = generator(seed, "test-model")
    if kind == "linear":
        return LinearClassifier(rng.normal(0, 1, p), float(rng.normal()))
    m = init_model("mlp", [p, h, c], seed, activation)
    return m.with_params(rng.normal(0, 0.8, m.param_count))


def test_linear_forward_margin():
    m = LinearClassifier(np.ones(2), 0.0)
    assert forward(m, np.array([2.0, 2.0])) == 4.0
    assert logits(m, np.array([[2.0, 2.0]])).tolist() == [[0.0, 4.0]]
    assert predict(m, np.array([[1.0, 1.0], [-1.0, -1.0]])).tolist() == [1, 0]


def test_zero_mlp_gives_uniform_logits():
    m = zeros_like(init_model("mlp", [3, 5, 4], 0))
    z = logits(m, np.array([[1.0, -2.0, 3.0]]))
    assert np.all(z == z[0, 0])


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        forward(LinearClassifier(np.ones(2), 0.0), np.ones(3))
    with pytest.raises(ValueError):
        cross_entropy_grad(init_model("mlp", [2, 3, 2], 0), np.ones((1, 3)), [0])


def test_invalid_parameters():
    with pytest.raises(ValueError):
        LinearClassifier(np.array([np.inf]), 0.0)
    with pytest.raises(ValueError):
        MlpClassifier((2, 3), (np.zeros((3, 2)),), (np.zeros(3),))
    with pytest.raises(ValueError):
        init_model("mlp", [2, 3, 2], 0, "sigmoid")


@pytest.mark.parametrize("seed", range(5))
def test_tanh_lipschitz_bound(seed):
    m = random_model(seed, "mlp", p=4, h=8, c=3)
    lip = np.prod([np.linalg.norm(W, 2) for W in m.weights])
    rng = generator(seed, "lip")
    for _ in range(50):
        x, d = rng.normal(size=4), rng.normal(size=4) * 0.1
        assert np.linalg.norm(forward(m, x + d) - forward(m, x)) <= lip * np.linalg.norm(d) + 1e-12


def test_uniform_logits_loss_is_log_two():
    m = zeros_like(init_model("mlp", [2, 3, 2], 0))
    lg = cross_entropy_grad(m, np.array([[1.0, 2.0]]), [1], sample_weight=1.5)
    assert lg.loss == pytest.approx(1.5 * math.log(2), abs=1e-15)


def test_invalid_class_index():
    m = init_model("mlp", [2, 3, 3], 0)
    with pytest.raises(ValueError):
        cross_entropy_grad(m, np.zeros((1, 2)), [3])
    with pytest.raises(ValueError):
        cross_entropy_grad(m, np.zeros((1, 2)), [-1])


@given(st.integers(0, 10_000), st.sampled_from(["linear", "mlp"]))
def test_weight_scales_loss_and_gradient_exactly(seed, kind):
    m = random_model(seed, kind)
    rng = generator(seed, "x")
    x, y = rng.normal(size=(5, 3)), rng.integers(0, m.class_count, 5)
    a = cross_entropy_grad(m, x, y, 1.0)
    b = cross_entropy_grad(m, x, y, 2.0)
    assert b.loss == 2 * a.loss
    assert np.array_equal(b.grad, 2 * a.grad)
    assert np.array_equal(b.input_grad, 2 * a.input_grad)
    xa = x + rng.normal(size=x.shape) * 0.3
    a, b = kl_boundary_grad(m, x, xa, 1.0), kl_boundary_grad(m, x, xa, 2.0)
    assert b.loss == 2 * a.loss and np.array_equal(b.grad, 2 * a.grad)


def test_gradient_length_matches_params():
    for kind in ("linear", "mlp"):
        m = random_model(0, kind)
        lg = cross_entropy_grad(m, np.ones((2, 3)), [0, 1])
        assert lg.grad.shape == (m.param_count,)
        assert np.all(np.isfinite(lg.grad))


def test_kl_identical_inputs():
    m = random_model(3, "mlp")
    x = generator(3, "x").normal(size=(6, 3))
    lg = kl_boundary_grad(m, x, x)
    assert lg.loss == 0.0
    assert np.max(np.abs(lg.grad)) < 1e-15


def test_kl_non_negative_on_random_triples():
    for i in range(1000):
        kind = "linear" if i % 3 == 0 else "mlp"
        m = random_model(i, kind)
        rng = generator(i, "kl")
        x = rng.normal(size=(1, 3))
        xa = x + rng.normal(size=(1, 3))
        lg = kl_boundary_grad(m, x, xa)
        assert lg.loss >= 0 and lg.row_losses[0] >= -1e-15


@pytest.mark.parametrize("case", range(120))
def test_cross_entropy_finite_differences(case):
    kind = ("linear", "mlp", "mlp_relu")[case % 3]
    m = random_model(case, "mlp" if kind != "linear" else "linear",
                     activation="relu" if kind == "mlp_relu" else "tanh")
    rng = generator(case, "fd")
    x, y = rng.normal(size=(3, 3)), rng.integers(0, m.class_count, 3)
    err = finite_difference_check(m, "ce", x, y)
    if err is None:
        pytest.skip("kink")
    assert err <= 1e-4


@pytest.mark.parametrize("case", range(120))
def test_kl_finite_differences(case):
    kind = ("linear", "mlp", "mlp_relu")[case % 3]
    m = random_model(case, "mlp" if kind != "linear" else "linear",
                     activation="relu" if kind == "mlp_relu" else "tanh")
    rng = generator(case, "fd-kl")
    x = rng.normal(size=(3, 3))
    err = finite_difference_check(m, "kl", x, x_adv=x + 0.5 * rng.normal(size=x.shape))
    if err is None:
        pytest.skip("kink")
    assert err <= 1e-4


def test_fd_check_on_degenerate_model():
    m = zeros_like(init_model("mlp", [1, 1, 2], 0))
    err = finite_difference_check(m, "ce", np.zeros((1, 1)), [0], check_inputs=False)
    assert err <= 1e-4
    with pytest.raises(ValueError):
        finite_difference_check(m, "ce", np.zeros((1, 1)), [0], step=0)


def test_relu_kink_is_excluded():
    m = init_model("mlp", [1, 2, 2], 0, "relu")
    m = m.with_params(np.array([1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]))
    assert finite_difference_check(m, "ce", np.zeros((1, 1)), [0]) is None


def test_sgd_step_arithmetic():
    m = random_model(1, "mlp")
    assert np.array_equal(sgd_step(m, np.zeros(m.param_count), 0.1).params(), m.params())
    assert not np.any(sgd_step(m, m.params(), 1.0).params())
    with pytest.raises(ValueError):
        sgd_step(m, m.params(), 0.0)


def test_init_is_deterministic():
    a, b = init_model("mlp", [4, 8, 3], 12), init_model("mlp", [4, 8, 3], 12)
    assert np.array_equal(a.params(), b.params())
    assert not np.array_equal(a.params(), init_model("mlp", [4, 8, 3], 13).params())
    bound = 1 / math.sqrt(4)
    assert np.all(np.abs(a.weights[0]) <= bound)


@given(st.integers(0, 10_000), st.sampled_from(["linear", "mlp"]))
def test_serialization_round_trip(seed, kind):
    m = random_model(seed, kind)
    back = deserialize_model(serialize_model(m))
    assert type(back) is type(m)
    assert np.array_equal(back.params(), m.params())
    x = generator(seed, "rt").normal(size=(4, 3))
    assert np.array_equal(logits(back, x), logits(m, x))


def test_serialized_document_fields():
    import json
    doc = json.loads(serialize_model(init_model("mlp", [2, 4, 3], 0, "relu")))
    assert doc["format_version"] == 1 and doc["kind"] == "mlp"
    assert doc["dims"] == [2, 4, 3] and doc["activation"] == "relu"
    assert len(doc["params"]) == 2 * 4 + 4 + 4 * 3 + 3


@pytest.mark.parametrize("mutate", [
    lambda s: s[: len(s) // 2],
    lambda s: s.replace('"format_version": 1', '"format_version": 2'),
    lambda s: s.replace('"kind": "mlp"', '"kind": "cnn"'),
    lambda s: s.replace('"dims": [2, 4, 3]', '"dims": [2, 5, 3]'),
    lambda s: "[]",
])
def test_malformed_documents(mutate):
    text = serialize_model(init_model("mlp", [2, 4, 3], 0))
    with pytest.raises(ModelFormatError):
        deserialize_model(mutate(text))
