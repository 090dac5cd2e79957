import numpy as np
import pytest

from springbrain import topology as topo
from springbrain.tasks import series as ts


# Independent recurrence oracles, written directly from the definitions.

def oracle_expanded(u, m):
    hist_u = [0.0] * m
    hist_y = [0.0] * m
    out = []
    y = 0.0
    for t in range(len(u)):
        hist_u = [u[t]] + hist_u[:-1]
        su = sum(x ** 3 - x ** 4 for x in hist_u)
        hist_y_now = [y] + hist_y[:-1]
        sy = sum(x ** 3 - x ** 4 for x in hist_y_now)
        y = 0.3 * hist_y_now[0] + su + 0.2 * sy + 0.1
        hist_y = hist_y_now
        out.append(y)
    return np.array(out)


def oracle_narma2(u):
    out, y_prev, y = [], 0.0, 0.0
    for t in range(len(u)):
        y_next = 0.4 * y + 0.4 * y * y_prev + 0.6 * u[t] ** 3 + 0.1
        y_prev, y = y, y_next
        out.append(y_next)
    return np.array(out)


def oracle_narma(u, m):
    ys = [0.0] * (len(u) + 1)
    for t in range(len(u)):
        sy = sum(ys[t - i] if t - i >= 0 else 0.0 for i in range(m))
        u_old = u[t - m + 1] if t - m + 1 >= 0 else 0.0
        ys[t + 1] = 0.3 * ys[t] + 0.05 * ys[t] * sy + 1.5 * u_old * u[t] + 0.1
    return np.array(ys[1:])


def test_expanded_narma_anchors_zero_input():
    y = ts.expanded_narma_target(np.zeros(5), m=2)
    assert y[0] == pytest.approx(0.1, abs=0)
    assert y[1] == pytest.approx(0.13018, abs=1e-12)


def test_expanded_narma_matches_oracle():
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 1, 1000)
    for m in (2, 3):
        got = ts.expanded_narma_target(u, m=m)
        want = oracle_expanded(u, m)
        assert np.max(np.abs(got - want)) <= 1e-12


def test_narma2_matches_oracle():
    rng = np.random.default_rng(1)
    u = rng.uniform(0, 0.5, 1000)
    got = ts.narma_target(u, m=2)
    assert np.max(np.abs(got - oracle_narma2(u))) <= 1e-12


def test_narma10_matches_oracle():
    rng = np.random.default_rng(2)
    u = rng.uniform(0, 0.5, 1000)
    got = ts.narma_target(u, m=10)
    assert np.max(np.abs(got - oracle_narma(u, 10))) <= 1e-12


def test_memory_target_pure_delay():
    u = np.array([0.3, 0.7, 0.2, 0.9, 0.5])
    y = ts.memory_target(u, delay=3)
    assert y[3] == 0.3 and y[4] == 0.7
    assert np.all(y[:3] == 0.0)


def test_memory_target_oracle_1000():
    rng = np.random.default_rng(3)
    u = rng.uniform(0, 1, 1000)
    for d in (1, 8, 17):
        y = ts.memory_target(u, delay=d)
        want = np.array([u[i - d] if i - d >= 0 else 0.0 for i in range(1000)])
        assert np.array_equal(y, want)


def test_series_spec_validation():
    with pytest.raises(ValueError):
        ts.SeriesSpec("narma", order=1)
    with pytest.raises(ValueError):
        ts.SeriesSpec("memory", delay=0)
    with pytest.raises(ValueError):
        ts.SeriesSpec("memory", delay=18)
    with pytest.raises(ValueError):
        ts.SeriesSpec("fibonacci")
    with pytest.raises(ValueError):
        ts.SeriesSpec("narma", tau=0)


def test_target_divergence_detected():
    # NARMA10 with large inputs blows up; must raise, not overflow silently
    u = np.full(400, 4.0)
    with pytest.raises(ts.TargetDivergenceError):
        ts.narma_target(u, m=10)


def test_series_target_dispatch():
    u = np.linspace(0, 1, 10)
    assert np.array_equal(ts.series_target(u, ts.SeriesSpec("memory", delay=2)),
                          ts.memory_target(u, 2))
    assert np.array_equal(ts.series_target(u, ts.SeriesSpec("narma", order=2)),
                          ts.narma_target(u, 2))
    assert np.array_equal(ts.series_target(u, ts.SeriesSpec("expanded-narma", order=2)),
                          ts.expanded_narma_target(u, 2))


def test_rollout_zero_brain_keeps_cmp_still():
    t = topo.double_circle(13)
    body, brain = ts.make_system(t, "lil", seed=5)
    brain.w[:] = 0.0
    brain.b[:] = 0.0
    u = np.random.default_rng(4).uniform(0, 1, 5)
    outputs, _ = ts.timeseries_rollout(t, body, brain, u, tau=5)
    vals = [float(o.value) for o in outputs]
    assert np.allclose(vals, 0.0, atol=1e-12)  # CMP rest y is 0


def test_hold_factor_matters_and_force_constant_within_block():
    t = topo.double_circle(13)
    body, brain = ts.make_system(t, "lil", seed=6)
    u = np.random.default_rng(5).uniform(0, 1, 4)
    out_1, res_1 = ts.timeseries_rollout(t, body, brain, u, tau=1)
    out_20, res_20 = ts.timeseries_rollout(t, body, brain, u, tau=20)
    assert not np.allclose([o.value for o in out_1], [o.value for o in out_20])

    # within each block of tau steps the drive is one cached Var
    tape = None
    cache_probe = {}
    orig_forward = brain.forward

    def counting_forward(pv, x):
        cache_probe["calls"] = cache_probe.get("calls", 0) + 1
        return orig_forward(pv, x)

    brain.forward = counting_forward
    ts.timeseries_rollout(t, body, brain, u, tau=20)
    assert cache_probe["calls"] == len(u)
    brain.forward = orig_forward


def test_rollout_outputs_align_with_inputs():
    t = topo.double_circle(13)
    body, brain = ts.make_system(t, "lil", seed=7)
    u = np.random.default_rng(6).uniform(0, 1, 7)
    outputs, res = ts.timeseries_rollout(t, body, brain, u, tau=3)
    assert len(outputs) == 7
    assert len(res.trace) == 7 * 3 + 1


def test_training_reduces_loss_smoke():
    t = topo.double_circle(13)
    body, brain = ts.make_system(t, "lil", seed=8)
    config = ts.SeriesTaskConfig(spec=ts.SeriesSpec("memory", delay=1, tau=5),
                                 length=40, washout=10, updates=8)
    run = ts.train(t, body, brain, config, seed=8)
    assert run.updates == 8
    assert run.loss_history[-1] < run.loss_history[0]


def test_training_reproducible():
    t = topo.double_circle(13)

    def go():
        body, brain = ts.make_system(t, "lil", seed=9)
        config = ts.SeriesTaskConfig(spec=ts.SeriesSpec("memory", delay=1, tau=4),
                                     length=20, washout=5, updates=3)
        return ts.train(t, body, brain, config, seed=9).loss_history

    assert go() == go()
