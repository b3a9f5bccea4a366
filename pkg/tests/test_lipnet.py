import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from flatmetric.errors import BadGroupSize, DimensionMismatch, ShapeMismatch, StaleCache
from flatmetric.lipnet import AdamState, DenseLayer, LipschitzNet, adam_step, group_sort, spectral_normalize


def _numeric_grads(net, x, g, h=1e-5):
    """Central differences of sum(g * f(x)) with the power-iteration state frozen."""
    out = []
    for p in net.parameters():
        grad = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = g @ net.forward(x, update=False)
            p[idx] = old - h
            down = g @ net.forward(x, update=False)
            p[idx] = old
            grad[idx] = (up - down) / (2 * h)
        out.append(grad)
    return out


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def test_group_sort_examples():
    assert group_sort([3, 1, 2, 5]).tolist() == [1, 3, 2, 5]
    assert group_sort([1, 3, 2, 5]).tolist() == [1, 3, 2, 5]
    assert group_sort([4, 3, 2, 1], 4).tolist() == [1, 2, 3, 4]
    with pytest.raises(BadGroupSize):
        group_sort([1, 2, 3], 2)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=6).map(lambda v: v * 4), st.sampled_from([1, 2, 4]))
def test_group_sort_is_a_blockwise_permutation(v, g):
    out = group_sort(v, g).reshape(-1, g)
    inp = np.asarray(v).reshape(-1, g)
    np.testing.assert_array_equal(np.sort(inp, axis=1), out)
    # norm preserving
    assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(inp))


def test_spectral_normalize_examples():
    rng = np.random.default_rng(0)
    eye = DenseLayer(np.eye(3), np.zeros(3), np.ones(3) / np.sqrt(3), np.zeros(3))
    np.testing.assert_allclose(spectral_normalize(eye, 20), np.eye(3))
    diag = DenseLayer(np.diag([2.0, 1.0]), np.zeros(2), np.array([0.6, 0.8]), np.zeros(2))
    np.testing.assert_allclose(spectral_normalize(diag, 60), np.diag([1.0, 0.5]), atol=1e-9)
    for _ in range(5):
        w = rng.normal(size=(7, 5)) * rng.uniform(0.1, 50)
        layer = DenseLayer(w, np.zeros(7), rng.normal(size=7), np.zeros(5))
        layer.u /= np.linalg.norm(layer.u)
        w_hat = spectral_normalize(layer, 20)
        assert np.linalg.svd(w_hat, compute_uv=False)[0] <= 1 + 1e-3


def test_zero_net_and_identity_layer():
    net = LipschitzNet.create(2, (4,), seed=0)
    net.set_parameters([np.zeros_like(p) for p in net.parameters()])
    np.testing.assert_array_equal(net(np.random.default_rng(0).normal(size=(5, 2))), 0.0)

    single = LipschitzNet.create(1, (), seed=0)
    single.set_parameters([np.ones((1, 1)), np.zeros(1)])
    x = np.linspace(-3, 3, 7)[:, None]
    np.testing.assert_allclose(single(x), x[:, 0])


def test_single_layer_gradient():
    rng = np.random.default_rng(11)
    net = LipschitzNet.create(3, (), seed=1)
    x = rng.normal(size=(1, 3))
    net.forward(x)
    g = np.ones(1)
    analytic = net.backward(g)
    numeric = _numeric_grads(net, x, g)
    for a, n in zip(analytic, numeric):
        assert _rel_err(a, n) < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_full_net_gradient(seed):
    rng = np.random.default_rng(seed)
    net = LipschitzNet.create(2, (16, 16), seed=seed)
    x = rng.normal(size=(12, 2))
    g = rng.normal(size=12)
    net.forward(x)
    analytic = net.backward(g)
    numeric = _numeric_grads(net, x, g)
    for a, n in zip(analytic, numeric):
        assert _rel_err(a, n) < 1e-3


def test_group_sort_gradient_is_permuted_upstream():
    net = LipschitzNet.create(1, (2,), seed=0)
    net.set_parameters([np.array([[1.0], [-1.0]]), np.zeros(2), np.array([[1.0, 2.0]]), np.zeros(1)])
    x = np.array([[0.5]])
    net.forward(x, update=False)
    # pre-activation (0.5, -0.5)/sigma is swapped by the sort, so the bias gradient is swapped too
    grads = net.backward(np.ones(1))
    np.testing.assert_allclose(sorted(grads[1]), sorted(net.layers[1].weight[0] / net.layers[1].sigma))
    assert grads[1][0] == pytest.approx(2.0 / net.layers[1].sigma)


def test_backward_needs_fresh_forward():
    net = LipschitzNet.create(2, (4,), seed=0)
    with pytest.raises(StaleCache):
        net.backward(np.ones(1))
    net.forward(np.zeros((1, 2)))
    net.touch()
    with pytest.raises(StaleCache):
        net.backward(np.ones(1))
    net.forward(np.zeros((3, 2)))
    with pytest.raises(ShapeMismatch):
        net.backward(np.ones(2))
    with pytest.raises(DimensionMismatch):
        net.forward(np.zeros((1, 3)))


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3))
def test_lipschitz_for_scaled_parameters(seed, log_scale):
    rng = np.random.default_rng(seed)
    net = LipschitzNet.create(3, (8, 8), seed=rng)
    net.set_parameters([p * 10.0**log_scale + rng.normal(size=p.shape) for p in net.parameters()])
    a, b = rng.normal(size=(200, 3)) * 5, rng.normal(size=(200, 3)) * 5
    ratio = np.abs(net(a) - net(b)) / np.linalg.norm(a - b, axis=1)
    assert ratio.max() <= 1 + 1e-6


def test_adam_examples():
    p = [np.array([1.0, -2.0])]
    state = AdamState(lr=0.1)
    adam_step(p, [np.zeros(2)], state)
    np.testing.assert_array_equal(p[0], [1.0, -2.0])

    p = [np.array([1.0])]
    state = AdamState(lr=0.1)
    adam_step(p, [np.array([0.5])], state)
    assert p[0][0] == pytest.approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8))

    with pytest.raises(ShapeMismatch):
        adam_step([np.zeros(2)], [np.zeros(3)], AdamState())


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(10, 4))
    p = [np.zeros(4)]
    state = AdamState(lr=0.01, beta1=0.8, beta2=0.99, weight_decay=0.05)
    ref, m, v = np.zeros(4), np.zeros(4), np.zeros(4)
    for t, g in enumerate(grads, 1):
        adam_step(p, [g], state)
        g = g + 0.05 * ref
        m = 0.8 * m + 0.2 * g
        v = 0.99 * v + 0.01 * g * g
        ref = ref - 0.01 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.99**t)) + 1e-8)
    np.testing.assert_allclose(p[0], ref, rtol=1e-12)


def _run(seed):
    net = LipschitzNet.create(2, (8, 8), seed=seed)
    x = np.random.default_rng(seed).normal(size=(10, 2))
    state = AdamState()
    params = net.parameters()
    for _ in range(20):
        net.forward(x)
        adam_step(params, net.backward(np.ones(10)), state)
        net.touch()
    return net


def test_training_steps_are_deterministic():
    a, b = _run(3), _run(3)
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p, q)


def test_checkpoint_round_trip(tmp_path):
    net = _run(4)
    path = tmp_path / "net.json"
    net.save(path)
    back = LipschitzNet.load(path)
    x = np.random.default_rng(0).normal(size=(6, 2))
    np.testing.assert_array_equal(net.forward(x, update=False), back.forward(x, update=False))


def test_spectral_normalize_is_idempotent():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(6, 4))
    layer = DenseLayer(w, np.zeros(6), rng.normal(size=6), np.zeros(4))
    layer.u /= np.linalg.norm(layer.u)
    once = spectral_normalize(layer, 30)
    again = DenseLayer(once, np.zeros(6), layer.u.copy(), layer.v.copy())
    spectral_normalize(again, 1)
    assert abs(again.sigma - 1.0) < 1e-3
