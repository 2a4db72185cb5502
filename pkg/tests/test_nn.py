import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from templatenet.errors import InvalidEpsilon, NonFinite, ShapeMismatch, ZeroFilter
from templatenet.nn import (
    SGD,
    Conv1d,
    CosineConv1d,
    Dense,
    MaxPool1d,
    ModelGraph,
    OneMaxPool,
    ReLU,
    grad_check,
    layer_grad_check,
    log_softmax,
    one_max_pool_backward,
    one_max_pool_forward,
    project_unit_rows,
    sgd_step,
    softmax,
    softmax_ce_check,
    standard_cases,
)
from templatenet.nn import checkpoint, ops


@pytest.mark.parametrize("taps, stride", [(3, 1), (5, 2), (20, 1), (24, 3)])
def test_correlate_matches_loops(rng, taps, stride):
    x = rng.normal(size=(2, 2, 60))
    w = rng.normal(size=(3, 2, taps))
    np.testing.assert_allclose(ops.correlate(x, w, stride), oracles.correlate(x, w, stride), atol=1e-10)


@pytest.mark.parametrize("taps, stride", [(4, 1), (4, 3), (30, 1), (30, 2)])
def test_adjoints_satisfy_inner_product_identity(rng, taps, stride):
    # <correlate(x, w), u> == <x, input_grad(u, w)> == <w, weight_grad(x, u)>
    x = rng.normal(size=(2, 2, 80))
    w = rng.normal(size=(3, 2, taps))
    u = rng.normal(size=ops.correlate(x, w, stride).shape)
    lhs = np.sum(ops.correlate(x, w, stride) * u)
    assert np.sum(x * ops.input_grad(u, w, 80, stride)) == pytest.approx(lhs, rel=1e-10)
    assert np.sum(w * ops.weight_grad(x, u, taps, stride)) == pytest.approx(lhs, rel=1e-10)


def test_window_sum(rng):
    c = rng.normal(size=(2, 7))
    taps = 3
    s = ops.window_sum(c, taps)
    for t in range(9):
        expected = sum(c[:, j] for j in range(7) if j <= t < j + taps)
        np.testing.assert_allclose(s[:, t], expected, atol=1e-12)


@pytest.mark.parametrize("mode", ["cosine_full", "cosine_normalized"])
def test_cosine_matches_oracle(rng, mode):
    w = project_unit_rows(rng.normal(size=(2, 6))) if mode == "cosine_normalized" else rng.normal(size=(2, 6))
    x = rng.normal(size=(2, 1, 20))
    x[0, 0, 3:12] = 0.0  # some windows fall under the norm guard
    out = CosineConv1d(w, mode).forward(x)
    np.testing.assert_allclose(out, oracles.cosine_windows(x, w, mode == "cosine_full"), atol=1e-12)


def test_cosine_full_rejects_zero_filter():
    layer = CosineConv1d(np.zeros((1, 4)), "cosine_full")
    with pytest.raises(ZeroFilter):
        layer.forward(np.ones((1, 1, 8)))


def test_cosine_shape_errors():
    with pytest.raises(ShapeMismatch):
        CosineConv1d(np.ones((1, 4)) / 2).forward(np.ones((1, 2, 8)))
    with pytest.raises(ShapeMismatch):
        CosineConv1d(np.ones((1, 9)) / 3).forward(np.ones((1, 1, 8)))
    with pytest.raises(ShapeMismatch):
        CosineConv1d(np.ones((1, 4)) / 2, stride=2)


def test_standard_layers_pass_grad_check():
    rng = np.random.default_rng(0)
    worst = {}
    for name, layer, x in standard_cases(rng, instances=20):
        err, checked, _ = layer_grad_check(layer, x, rng)
        assert checked > 0
        worst[name] = max(worst.get(name, 0.0), err)
    z = rng.normal(size=(6, 5))
    ce, _ = softmax_ce_check(z, rng.integers(0, 5, size=6))
    worst["softmax_ce"] = ce
    assert set(worst) == {"conv", "cosine_full", "cosine_normalized", "one_max_pool", "max_pool", "dense", "softmax_ce"}
    assert max(worst.values()) <= 1e-5, worst


def test_whole_model_grad_check(rng):
    layers = [CosineConv1d.init(rng, 3, 8), OneMaxPool(), Dense.init(rng, 3, 4)]
    model = ModelGraph(layers)
    report = grad_check(model, rng.normal(size=(3, 40)), rng.integers(0, 4, size=3))
    assert report.worst <= 1e-5


def test_invalid_epsilon(rng):
    with pytest.raises(InvalidEpsilon):
        layer_grad_check(ReLU(), rng.normal(size=(1, 1, 4)), rng, epsilon=0.0)


@given(st.integers(0, 10**6), st.sampled_from([0.1, 0.5, 2.0, 10.0]))
def test_cosine_amplitude_invariance(seed, c):
    rng = np.random.default_rng(seed)
    layer = CosineConv1d.init(rng, 2, 10)
    x = rng.normal(size=(1, 1, 40))
    np.testing.assert_allclose(layer.forward(c * x), layer.forward(x), atol=1e-9, rtol=0)


def test_one_max_routes_to_single_window(rng):
    taps = 12
    layer = CosineConv1d.init(rng, 4, taps)
    x = rng.normal(size=(3, 1, 200))
    o = layer.forward(x)
    pooled, arg = one_max_pool_forward(o)
    u = rng.normal(size=pooled.shape)
    layer.backward(one_max_pool_backward(arg, u, o.shape[-1]))
    expected = np.zeros_like(layer.weight)
    for b in range(3):
        for k in range(4):
            j = arg[b, k]
            seg = x[b, 0, j : j + taps]
            expected[k] += u[b, k, 0] * seg / np.sqrt(np.einsum("l,l->", seg, seg))
    np.testing.assert_array_equal(layer.grads["weight"], expected)


def test_one_max_backward_has_one_nonzero(rng):
    o = rng.normal(size=(4, 3, 50))
    _, arg = one_max_pool_forward(o)
    g = one_max_pool_backward(arg, np.ones((4, 3)), 50)
    assert np.all(np.count_nonzero(g, axis=-1) == 1)
    np.testing.assert_array_equal(g.argmax(axis=-1), arg)


def test_one_max_lowest_index_on_ties():
    _, arg = one_max_pool_forward(np.array([[[1.0, 3.0, 3.0, 0.0]]]))
    assert arg[0, 0] == 1


def test_maxpool_drops_tail_and_routes(rng):
    pool = MaxPool1d(3)
    x = rng.normal(size=(1, 1, 10))
    y = pool.forward(x)
    assert y.shape == (1, 1, 3)
    g = pool.backward(np.ones_like(y))
    assert g[0, 0, 9] == 0 and g.sum() == 3
    with pytest.raises(ShapeMismatch):
        MaxPool1d(0)


def test_softmax_properties(rng):
    z = rng.normal(size=(5, 4)) * 50
    p = softmax(z)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_allclose(np.exp(log_softmax(z)), p, atol=1e-12)
    np.testing.assert_allclose(softmax(z + 1000), p, atol=1e-12)


def test_dense_shape_mismatch(rng):
    with pytest.raises(ShapeMismatch):
        Dense.init(rng, 5, 2).forward(np.ones((1, 1, 4)))


def test_sgd_step_keeps_unit_norm(rng):
    w = project_unit_rows(rng.normal(size=(4, 9)))
    params, vel = {"w": w, "b": np.zeros(3)}, None
    for _ in range(5):
        grads = {"w": rng.normal(size=w.shape), "b": rng.normal(size=3)}
        params, vel = sgd_step(params, grads, lr=0.3, momentum=0.9, velocity=vel, unit_norm={"w"})
        np.testing.assert_allclose(np.linalg.norm(params["w"], axis=1), 1, atol=1e-12)


def test_sgd_momentum_rule():
    p = {"a": np.array([1.0])}
    p1, v1 = sgd_step(p, {"a": np.array([2.0])}, lr=0.1, momentum=0.5)
    p2, v2 = sgd_step(p1, {"a": np.array([2.0])}, lr=0.1, momentum=0.5, velocity=v1)
    assert v2["a"][0] == pytest.approx(3.0)
    assert p2["a"][0] == pytest.approx(1.0 - 0.2 - 0.3)


def test_sgd_rejects_bad_input():
    with pytest.raises(ValueError):
        sgd_step({"a": np.ones(1)}, {"a": np.ones(1)}, lr=0.0)
    with pytest.raises(NonFinite):
        sgd_step({"a": np.ones(1)}, {"a": np.array([np.inf])}, lr=1.0)


def test_sgd_object_updates_model(rng):
    model = ModelGraph([CosineConv1d.init(rng, 2, 5), OneMaxPool(), Dense.init(rng, 2, 3)])
    before = model.state()
    model.loss_and_grads(rng.normal(size=(4, 30)), np.array([0, 1, 2, 0]))
    SGD(0.1, 0.9).step(model)
    after = model.state()
    assert any(not np.array_equal(before[k], after[k]) for k in before)
    np.testing.assert_allclose(np.linalg.norm(after["0.cosine_conv.weight"], axis=1), 1, atol=1e-12)


def _model(rng):
    return ModelGraph(
        [Conv1d.init(rng, 1, 1, 5, 2), ReLU(), MaxPool1d(2), CosineConv1d.init(rng, 2, 3, "cosine_full"),
         OneMaxPool(), Dense.init(rng, 2, 3)],
        seed=7,
    )


def test_checkpoint_roundtrip(tmp_path, rng):
    model = _model(rng)
    path = tmp_path / "m.ckpt"
    bank = rng.normal(size=(2, 4))
    checkpoint.save(path, model, {"filterbank": (bank, {"fs": 100.0})})
    loaded, sections = checkpoint.load(path)
    x = rng.normal(size=(2, 40))
    np.testing.assert_array_equal(loaded.forward(x), model.forward(x))
    assert loaded.seed == 7
    np.testing.assert_array_equal(sections["filterbank"][0], bank)
    assert sections["filterbank"][1]["fs"] == 100.0
    assert checkpoint.dumps(loaded, {"filterbank": (bank, {"fs": 100.0})}) == path.read_bytes()


def test_checkpoint_rejects_garbage():
    from templatenet.errors import Malformed

    with pytest.raises(Malformed):
        checkpoint.loads(b"not a checkpoint at all")


def test_model_state_and_copy(rng):
    model = _model(rng)
    clone = model.copy()
    x = rng.normal(size=(1, 40))
    np.testing.assert_array_equal(clone.forward(x), model.forward(x))
    clone.named_params()["5.dense.bias"][:] = 1.0
    assert not np.array_equal(clone.forward(x), model.forward(x))
    with pytest.raises(ShapeMismatch):
        model.load_state({"nope": np.zeros(1)})
    assert model.param_count() == sum(v.size for v in model.named_params().values())
