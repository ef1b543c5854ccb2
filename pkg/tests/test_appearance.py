import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sunsplat.appearance import (
    SKIP_EPS,
    Mlp,
    MlpParams,
    appearance_forward,
    positional_encode,
    positional_encode_backward,
    shadow_refine,
)
from sunsplat.gradcheck import numeric_grad, suite_appearance_mlp, suite_shadow_mlp


def test_encoding_layout():
    e = positional_encode(np.array([0.0, 0.5, 1.0]))
    assert e.shape == (24,)
    # component-major, sin/cos interleaved per frequency
    assert np.allclose(e[:8:2], 0.0) and np.allclose(e[1:8:2], 1.0)
    assert e[8] == pytest.approx(np.sin(np.pi * 0.5))
    assert e[10] == pytest.approx(np.sin(2 * np.pi * 0.5), abs=1e-12)


def test_encoding_rejects_zero_frequencies():
    with pytest.raises(ValueError):
        positional_encode(np.zeros(3), L=0)


@given(arrays(np.float64, (4, 3), elements=st.floats(-2, 2)))
def test_encoding_backward(v):
    g = np.random.default_rng(0).normal(size=(4, 24))
    num = numeric_grad(lambda: float(np.sum(g * positional_encode(v))), v)
    assert np.allclose(positional_encode_backward(v, g).ravel(), num, rtol=1e-5, atol=1e-7)


def test_network_shapes_and_init():
    m = MlpParams.create(np.random.default_rng(0))
    assert m.phi.n_in == 120 and m.psi.n_in == 55
    assert [m.phi.params[f"W{k}"].shape for k in range(4)] == [(120, 256), (256, 256), (256, 256), (256, 3)]
    assert [m.psi.params[f"W{k}"].shape for k in range(4)] == [(55, 32), (32, 32), (32, 32), (32, 1)]
    for net in (m.phi, m.psi):
        assert all(not np.any(net.params[f"b{k}"]) for k in range(4))
        for k in range(3):
            W = net.params[f"W{k}"]
            assert np.abs(W).max() <= np.sqrt(6 / W.shape[0])
    assert not np.any(m.psi.params["W3"])


def test_wrong_input_width_rejected():
    net = Mlp(5, (4,), 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, 6)))


@given(arrays(np.float64, 16, elements=st.floats(0, 1)))
def test_fresh_shadow_network_passes_visibility_through(V):
    m = MlpParams.create(np.random.default_rng(1))
    rng = np.random.default_rng(2)
    sun = rng.normal(size=3)
    sun /= np.linalg.norm(sun)
    Vp, _ = shadow_refine(V, sun, rng.uniform(-1, 1, (16, 3)), rng.normal(size=(16, 6)), m.psi)
    assert np.allclose(Vp, np.clip(V, SKIP_EPS, 1 - SKIP_EPS), atol=1e-12)
    assert np.all(np.abs(Vp - V) <= 0.05)


def test_appearance_output_is_a_color():
    m = MlpParams.create(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    rgb, _ = appearance_forward(rng.normal(0, 3, (32, 72)), np.array([0, 0, 1.0]),
                                rng.normal(size=(32, 3)), m.phi)
    assert rgb.shape == (32, 3)
    assert np.all((rgb > 0) & (rgb < 1))


@pytest.mark.parametrize("seed", range(4))
def test_appearance_gradients(seed):
    res = suite_appearance_mlp(np.random.default_rng(seed))
    assert res.passed, res.line()


@pytest.mark.parametrize("seed", range(4))
def test_shadow_network_gradients(seed):
    res = suite_shadow_mlp(np.random.default_rng(seed))
    assert res.passed, res.line()
