import numpy as np
import pytest

from oracles import fd_max_rel_error

from phev_ems.neural import Adam, Mlp, NonFiniteGradientError, load_arrays, save_arrays, soft_update


@pytest.mark.parametrize("sizes, out", [((3, 64, 64, 2), "tanh"), ((5, 64, 64, 2), "linear")])
def test_gradients_match_finite_differences(sizes, out, rng):
    net = Mlp(sizes, out, rng)
    x = rng.normal(size=(4, sizes[0]))
    dy = rng.normal(size=(4, sizes[-1]))
    assert fd_max_rel_error(net, x, dy) <= 1e-4


def test_forward_shapes_and_ranges(rng):
    net = Mlp((3, 8, 2), "tanh", rng)
    y = net(rng.normal(size=(10, 3)) * 100)
    assert y.shape == (10, 2) and np.all(np.abs(y) <= 1.0)
    assert net(np.zeros(3)).shape == (2,)
    with pytest.raises(ValueError):
        net(np.zeros(4))


def test_init_bounds(rng):
    net = Mlp((16, 4), "linear", rng)
    assert np.all(np.abs(net.params[0]) <= 0.25) and np.all(np.abs(net.params[1]) <= 0.25)


def test_single_sample_backward_matches_batch(rng):
    net = Mlp((3, 6, 2), "linear", rng)
    x, dy = rng.normal(size=3), rng.normal(size=2)
    g1, dx1 = net.backward(net.forward(x, cache=True)[1], dy)
    g2, dx2 = net.backward(net.forward(x[None], cache=True)[1], dy[None])
    assert all(np.array_equal(a, b) for a, b in zip(g1, g2))
    assert np.array_equal(dx1, dx2[0])


def test_soft_update(rng):
    a, b = Mlp((2, 3, 1), rng=rng), Mlp((2, 3, 1), rng=rng)
    expect = [0.1 * o + 0.9 * t for t, o in zip(a.params, b.params)]
    soft_update(a, b, 0.1)
    assert all(np.allclose(p, e, rtol=0, atol=1e-15) for p, e in zip(a.params, expect))
    soft_update(a, b, 1.0)
    assert all(np.array_equal(p, o) for p, o in zip(a.params, b.params))
    with pytest.raises(ValueError):
        soft_update(a, Mlp((2, 4, 1)), 0.5)


def test_adam_first_step_hand_value():
    p = np.array([1.0, -2.0])
    opt = Adam([p], lr=0.1)
    opt.step([np.array([0.5, -4.0])])
    # bias correction makes the first step exactly lr * sign(g), up to eps
    assert np.allclose(p, [0.9, -1.9], rtol=0, atol=1e-7)
    assert opt.t == 1


def test_adam_minimises_quadratic():
    p = np.array([3.0, -1.0])
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        opt.step([2 * p])
    assert np.all(np.abs(p) < 1e-3)


def test_adam_rejects_non_finite_gradient():
    net = Mlp((2, 3, 1))
    opt = Adam(net.params, 1e-3, names=net.layer_names())
    grads = [np.zeros_like(p) for p in net.params]
    grads[2][0, 0] = np.nan
    with pytest.raises(NonFiniteGradientError, match="layer1.W"):
        opt.step(grads)
    assert opt.t == 0


def test_save_load_round_trip(tmp_path, rng):
    net = Mlp((3, 5, 2), "tanh", rng)
    net.save(tmp_path / "n.npz")
    back = Mlp.load(tmp_path / "n.npz")
    assert back.describe() == net.describe()
    assert all(np.array_equal(a, b) for a, b in zip(back.params, net.params))
    x = rng.normal(size=(7, 3))
    assert np.array_equal(back(x), net(x))


def test_checkpoint_version_check(tmp_path):
    save_arrays(tmp_path / "a.npz", {"x": 1}, {"g": [np.ones(2)]})
    meta, groups = load_arrays(tmp_path / "a.npz")
    assert meta["x"] == 1 and np.array_equal(groups["g"][0], np.ones(2))
    import json

    with np.load(tmp_path / "a.npz") as z:
        payload = dict(z)
    payload["__meta__"] = np.array(json.dumps({"format_version": 99, "groups": {}}))
    np.savez(tmp_path / "b.npz", **payload)
    with pytest.raises(ValueError, match="unsupported"):
        load_arrays(tmp_path / "b.npz")


def test_load_params_shape_mismatch(rng):
    net = Mlp((3, 4, 2))
    bad = [p.copy() for p in net.params]
    bad[0] = np.zeros((4, 4))
    with pytest.raises(ValueError, match="layer0.W"):
        net.load_params(bad)
