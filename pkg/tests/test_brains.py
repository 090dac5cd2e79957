import numpy as np
import pytest

from springbrain import autodiff as ad
from springbrain import brains


def run_forward(brain, u):
    t = ad.NullTape()
    pv = t.parameters(brain.params())
    return brain.forward(pv, t.leaf(u)).value


def test_lil_identity():
    b = brains.LinearInputLayer(np.eye(3), np.zeros(3))
    u = np.array([0.3, -1.0, 2.0])
    assert np.allclose(run_forward(b, u), u)


def test_lil_zero_input_returns_bias():
    b = brains.LinearInputLayer(np.ones((4, 2)), np.array([0.5, -0.5]))
    assert np.allclose(run_forward(b, np.zeros(4)), [0.5, -0.5])


def test_lil_hand_product():
    # W (out x in) = [[1,2],[3,4]], b = [1,1], u = [1,1] -> [4, 8]
    w_in_out = np.array([[1.0, 3.0], [2.0, 4.0]])  # stored input-major
    b = brains.LinearInputLayer(w_in_out, np.array([1.0, 1.0]))
    assert np.allclose(run_forward(b, np.array([1.0, 1.0])), [4.0, 8.0])


def test_lil_additivity():
    b = brains.LinearInputLayer.init(5, 3, seed=0)
    u, v = np.random.default_rng(1).normal(size=(2, 5))
    lhs = run_forward(b, 2.0 * u + 3.0 * v)
    rhs = 2.0 * run_forward(b, u) + 3.0 * run_forward(b, v) - 4.0 * b.b
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_lil_shape_error():
    b = brains.LinearInputLayer.init(5, 3, seed=0)
    with pytest.raises(brains.BrainConfigError):
        run_forward(b, np.zeros(4))


def test_mlp_zero_weights_output_final_bias():
    layers = [(np.zeros((4, 8)), np.zeros(8)),
              (np.zeros((8, 8)), np.zeros(8)),
              (np.zeros((8, 2)), np.array([0.7, -0.2]))]
    b = brains.Mlp(layers)
    assert np.allclose(run_forward(b, np.ones(4)), [0.7, -0.2])


def test_mlp_dead_relu_region_ignores_input():
    layers = [(np.zeros((4, 8)), -np.ones(8)),   # pre-activations all negative
              (np.eye(8), np.zeros(8)),
              (np.ones((8, 2)), np.zeros(2))]
    b = brains.Mlp(layers)
    rng = np.random.default_rng(2)
    out1 = run_forward(b, rng.normal(size=4))
    out2 = run_forward(b, rng.normal(size=4))
    assert np.allclose(out1, out2)


def test_mlp_matches_hand_forward():
    rng = np.random.default_rng(3)
    layers = [(rng.normal(size=(2, 4)), rng.normal(size=4)),
              (rng.normal(size=(4, 4)), rng.normal(size=4)),
              (rng.normal(size=(4, 2)), rng.normal(size=2))]
    b = brains.Mlp(layers)
    u = rng.normal(size=2)
    h1 = np.maximum(u @ layers[0][0] + layers[0][1], 0.0)
    h2 = np.maximum(h1 @ layers[1][0] + layers[1][1], 0.0)
    expected = h2 @ layers[2][0] + layers[2][1]
    assert np.allclose(run_forward(b, u), expected, atol=1e-14)


def test_mlp_piecewise_linearity():
    b = brains.Mlp.init(6, 2, seed=4)
    rng = np.random.default_rng(5)
    u0, direction = rng.normal(size=6), rng.normal(size=6)
    # directional differences constant within a linear region (tiny steps)
    eps = 1e-7
    d1 = run_forward(b, u0 + eps * direction) - run_forward(b, u0)
    d2 = run_forward(b, u0 + 2 * eps * direction) - run_forward(b, u0 + eps * direction)
    assert np.allclose(d1, d2, atol=1e-12)


def test_mlp_hidden_width():
    b = brains.Mlp.init(10, 3, seed=0)
    assert b.layers[0][0].shape == (10, 128)
    assert b.layers[1][0].shape == (128, 128)


def test_xavier_variance():
    b = brains.Mlp.init(100, 2, seed=6)
    w1 = b.layers[0][0]
    expected = 2.0 / (100 + 128)  # uniform(-a, a) variance a^2/3 with a^2 = 6/(fi+fo)
    assert w1.var() == pytest.approx(expected, rel=0.1)


def test_swg_zero_amplitude_is_identity():
    swg = brains.SineWaveGenerator(np.zeros(5), np.linspace(0, 6, 5))
    t = ad.NullTape()
    pv = t.parameters(swg.params())
    l0 = t.leaf(np.full(5, 2.0))
    for tt in (0.0, 0.3, 1.7):
        assert np.allclose(swg.modulate(pv, tt, l0).value, 2.0)


def test_swg_quarter_period_peak():
    # A=0.5, phi=0, omega=2*pi, t=0.25 -> factor 1.5
    swg = brains.SineWaveGenerator(np.array([0.5]), np.array([0.0]))
    t = ad.NullTape()
    pv = t.parameters(swg.params())
    out = swg.modulate(pv, 0.25, t.leaf(np.array([1.0])))
    assert out.value[0] == pytest.approx(1.5, abs=1e-12)


def test_swg_periodicity():
    swg = brains.SineWaveGenerator.init(7, seed=8, amplitude_init=0.4)
    t = ad.NullTape()
    pv = t.parameters(swg.params())
    l0 = t.leaf(np.linspace(0.5, 2.0, 7))
    period = 2.0 * np.pi / swg.omega
    a = swg.modulate(pv, 0.37, l0).value
    b = swg.modulate(pv, 0.37 + period, l0).value
    assert np.allclose(a, b, atol=1e-12)


def test_swg_init_amplitudes():
    for amp in (0.4, 0.5):
        swg = brains.SineWaveGenerator.init(9, seed=1, amplitude_init=amp)
        assert np.all(swg.amplitude == amp)
        assert np.all((swg.phase >= 0) & (swg.phase < 2 * np.pi))
    with pytest.raises(brains.BrainConfigError):
        brains.SineWaveGenerator.init(9, seed=1, amplitude_init=0.3)


def test_fl_constant_and_identity():
    n = 4
    fl = brains.FeedbackLayer(np.zeros((n, n)), np.full(n, 1.5))
    lengths = np.linspace(1.0, 2.0, n)
    assert np.allclose(run_forward_fl(fl, lengths), 1.5)

    fl_id = brains.FeedbackLayer(np.eye(n), np.zeros(n))
    assert np.allclose(run_forward_fl(fl_id, lengths), lengths)


def run_forward_fl(fl, lengths):
    t = ad.NullTape()
    pv = t.parameters(fl.params())
    return fl.forward(pv, t.leaf(lengths)).value


def test_init_determinism():
    for kind, kwargs in [
        ("lil", dict(in_dim=5, out_dim=3)),
        ("mlp", dict(in_dim=5, out_dim=3)),
        ("swg", dict(n_springs=6)),
        ("fl", dict(n_springs=6)),
    ]:
        b1 = brains.init_brain(kind, seed=123, **kwargs)
        b2 = brains.init_brain(kind, seed=123, **kwargs)
        for k, v in b1.params().items():
            assert np.array_equal(v, b2.params()[k]), (kind, k)
    with pytest.raises(brains.BrainConfigError):
        brains.init_brain("rnn", seed=0)


def test_checkpoint_round_trip_bitwise():
    for kind, kwargs in [
        ("lil", dict(in_dim=5, out_dim=3)),
        ("mlp", dict(in_dim=5, out_dim=3)),
        ("swg", dict(n_springs=6, amplitude_init=0.4)),
        ("fl", dict(n_springs=6)),
    ]:
        b = brains.init_brain(kind, seed=99, **kwargs)
        back = brains.brain_from_doc(brains.brain_to_doc(b, seed=99))
        for k, v in b.params().items():
            assert np.array_equal(v, back.params()[k]), (kind, k)


def test_gradients_through_each_brain_kind():
    rng = np.random.default_rng(11)

    def check(build, params):
        report = ad.check_gradient(build, params, max_entries=12)
        for slot, entry in report.items():
            assert entry["max_rel_err"] <= 1e-4, (slot, entry)

    lil = brains.LinearInputLayer.init(4, 3, seed=0)
    u = rng.normal(size=4)
    check(lambda t, vs: ad.sum_(ad.square(lil.forward(vs, t.leaf(u)))), lil.params())

    mlp = brains.Mlp.init(4, 3, seed=1)
    check(lambda t, vs: ad.sum_(ad.square(mlp.forward(vs, t.leaf(u)))), mlp.params())

    swg = brains.SineWaveGenerator.init(5, seed=2)
    l0 = rng.uniform(0.5, 1.5, 5)
    check(lambda t, vs: ad.sum_(ad.square(swg.modulate(vs, 0.3, t.leaf(l0)))),
          swg.params())

    fl = brains.FeedbackLayer.init(5, seed=3)
    check(lambda t, vs: ad.sum_(ad.square(fl.forward(vs, t.leaf(l0)))), fl.params())
