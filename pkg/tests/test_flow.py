import math

import numpy as np
import pytest

from dinof.autodiff import AdamState, Tape, Tensor, adam_step
from dinof.errors import FlowStateError
from dinof.flow import ActNorm, AffineCoupling, FlowModel, flow_forward, flow_inverse, flow_nll

from helpers import central_diff, identity_flow, numerical_logdet, randomized, rel_err


def test_identity_flow_permutes_with_zero_logdet():
    f = identity_flow(5, blocks=1)
    x = np.random.default_rng(0).standard_normal((7, 5))
    z, logdet = flow_forward(f, x)
    np.testing.assert_array_equal(z, x[:, f.layers[1].perm])
    np.testing.assert_array_equal(logdet, 0.0)
    np.testing.assert_array_equal(flow_inverse(f, z), x)


def test_permutations_are_never_identity():
    f = FlowModel(2, 6, 4, rng=np.random.default_rng(3))
    assert all(p == [1, 0] for p in f.permutations())


def test_single_coupling_logdet_matches_numerical_jacobian():
    rng = np.random.default_rng(5)
    layer = AffineCoupling("c", 2, hidden=6)
    params = {k: rng.standard_normal(v.shape) for k, v in layer.init_params(rng).items()}
    for x in rng.standard_normal((5, 2)):
        y, ld = layer.forward_np(x[None], params)
        h = 1e-6
        jac = np.stack([
            (layer.forward_np((x + h * e)[None], params)[0][0] - layer.forward_np((x - h * e)[None], params)[0][0]) / (2 * h)
            for e in np.eye(2)
        ], axis=1)
        ref = np.log(abs(np.linalg.det(jac)))
        assert abs(ld[0] - ref) <= 1e-5 * max(1.0, abs(ref))


def test_duplicate_rows_duplicate_outputs():
    f = randomized(3)
    x = np.random.default_rng(1).standard_normal((4, 3))
    x[2] = x[0]
    z, ld = flow_forward(f, x)
    np.testing.assert_array_equal(z[2], z[0])
    assert ld[2] == ld[0]


@pytest.mark.parametrize("seed", range(100))
def test_round_trip(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 9))
    f = randomized(d, blocks=3, seed=seed)
    x = rng.standard_normal((16, d)) * 2
    assert np.max(np.abs(f.inverse(f.forward_np(x)[0]) - x)) <= 1e-8
    z = rng.standard_normal((16, d))
    assert np.max(np.abs(f.forward_np(f.inverse(z))[0] - z)) <= 1e-8


@pytest.mark.parametrize("d", [2, 4, 8])
def test_logdet_matches_numerical_jacobian(d):
    f = randomized(d, blocks=4, seed=d)
    xs = np.random.default_rng(d).standard_normal((5, d))
    _, ld = f.forward_np(xs)
    for x, l in zip(xs, ld):
        ref = numerical_logdet(f, x)
        assert abs(l - ref) <= 1e-5 * max(1.0, abs(ref))


def test_tape_and_numpy_forward_agree():
    f = randomized(4, blocks=3, seed=2)
    x = np.random.default_rng(0).standard_normal((6, 4))
    z_t, ld_t = f.forward(Tensor(x))
    z_n, ld_n = f.forward_np(x)
    np.testing.assert_allclose(z_t.data, z_n, rtol=1e-13, atol=1e-13)
    np.testing.assert_allclose(ld_t.data, ld_n, rtol=1e-13, atol=1e-13)


def test_identity_flow_nll_is_standard_normal_nll():
    f = identity_flow(3)
    x = np.random.default_rng(0).standard_normal((50, 3))
    expected = np.mean(0.5 * np.sum(x**2, axis=1) + 1.5 * math.log(2 * math.pi))
    assert flow_nll(f, x).item() == pytest.approx(expected, rel=1e-14)


def test_actnorm_scale_adds_d_log_c():
    d, c = 3, 1.7
    f = identity_flow(d)
    x = np.random.default_rng(0).standard_normal((4, d))
    _, ld0 = f.forward_np(x)
    f.params["block0.actnorm.log_scale"] = f.params["block0.actnorm.log_scale"] + math.log(c)
    _, ld1 = f.forward_np(x)
    np.testing.assert_allclose(ld1 - ld0, d * math.log(c), rtol=1e-14)


def test_actnorm_data_init_standardizes_first_batch():
    layer = ActNorm("a", 3)
    params = layer.init_params(None)
    x = np.random.default_rng(0).standard_normal((500, 3)) * [1.0, 5.0, 0.2] + [3.0, -1.0, 0.5]
    layer.data_init(params, x)
    y, _ = layer.forward_np(x, params)
    np.testing.assert_allclose(y.mean(0), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.std(0), 1.0, rtol=1e-12)


def test_strict_mode_requires_initialization():
    f = FlowModel(2, 2, 4)
    with pytest.raises(FlowStateError):
        f.forward_np(np.zeros((3, 2)), strict=True)
    f.forward_np(np.random.default_rng(0).standard_normal((10, 2)))
    assert f.initialized


def test_density_integrates_to_one_in_2d():
    f = randomized(2, blocks=3, seed=7, scale=0.3)
    # the random flow sends most mass near the origin; integrate on a wide grid
    g = np.linspace(-12, 12, 801)
    xx, yy = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
    dens = np.exp(f.log_prob(pts)).reshape(xx.shape)
    total = np.trapezoid(np.trapezoid(dens, g, axis=1), g)
    assert abs(total - 1.0) <= 0.01


def test_nll_gradient_matches_finite_differences():
    f = randomized(2, blocks=2, hidden=3, seed=4, scale=0.4)
    keys = list(f.params)
    x = np.random.default_rng(1).standard_normal((8, 2))
    base = [f.params[k].copy() for k in keys]

    def nll_of(*arrays):
        f.params = dict(zip(keys, arrays))
        return flow_nll(f, x).item()

    with Tape() as tape:
        ps = {k: tape.watch(Tensor(v.copy())) for k, v in zip(keys, base)}
        grads = tape.gradient(flow_nll(f, x, ps), [ps[k] for k in keys])
    numeric = central_diff(nll_of, [b.copy() for b in base])
    for g, n in zip(grads, numeric):
        assert rel_err(g, n) <= 1e-4


def test_trained_flow_on_standard_normal_reaches_entropy():
    rng = np.random.default_rng(0)
    f = FlowModel(2, 2, 16, rng=rng)
    keys = list(f.params)
    f.initialize(rng.standard_normal((512, 2)))
    state = AdamState.zeros_like([f.params[k] for k in keys])
    for _ in range(300):
        x = rng.standard_normal((256, 2))
        with Tape() as tape:
            ps = {k: tape.watch(Tensor(f.params[k])) for k in keys}
            grads = tape.gradient(flow_nll(f, x, ps), [ps[k] for k in keys])
        new, state = adam_step([f.params[k] for k in keys], grads, state, lr=1e-3)
        f.params = dict(zip(keys, new))
    held_out = rng.standard_normal((50_000, 2))
    entropy = 0.5 * 2 * math.log(2 * math.pi * math.e)
    assert entropy == pytest.approx(2.8379, abs=1e-4)
    assert flow_nll(f, held_out).item() == pytest.approx(entropy, abs=0.02)
