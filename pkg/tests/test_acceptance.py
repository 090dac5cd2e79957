"""End-to-end acceptance suite.

One test per acceptance criterion; each prints a single PASS/FAIL line.
Criteria 4 and 5 require the real handwritten-digit IDX files (point
$SPRINGBRAIN_DATA at a directory containing them); without the dataset
they skip with an explicit environment note rather than asserting against
synthetic stand-ins.
"""

import time

import numpy as np
import pytest

from springbrain import analysis as an
from springbrain import autodiff as ad
from springbrain import brains as br
from springbrain import closedloop as cl
from springbrain import mnist_io
from springbrain import physics as ph
from springbrain import pipelines as pl
from springbrain import topology as topo
from springbrain import training as tr
from springbrain.tasks import digits, lissajous as lj, locomotion as loco
from springbrain.tasks import series as ts

pytestmark = pytest.mark.acceptance


def report(criterion, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"\n[criterion {criterion}] {status}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


# ------------------------------------------------------------ criterion 1

def test_criterion_1_gradient_fidelity():
    """Autodiff vs central differences, rel err <= 1e-4, every class."""
    t0 = time.time()
    body_topology = topo.double_circle(13)
    rng = np.random.default_rng(0)
    body = {"k": rng.uniform(1, 100, body_topology.n_springs),
            "d": rng.uniform(0, 10, body_topology.n_springs),
            "l": body_topology.rest_lengths()}
    sel = body_topology.selector([body_topology.cmp_index])
    worst = {}

    def check(build, params, picks=4):
        rep = ad.check_gradient(build, params, max_entries=picks,
                                rng=np.random.default_rng(1))
        for slot, entry in rep.items():
            worst[slot] = entry["max_rel_err"]

    # body + sine generator classes (k, d, l, A, phi)
    swg = br.SineWaveGenerator.init(body_topology.n_springs, seed=2)
    target = 0.05 * np.random.default_rng(3).normal(size=(50, 2))

    def build_swg(tape, pv):
        body_v = {c: pv[c] for c in ("k", "d", "l")}
        res = ph.rollout(body_topology, body_v, 50, tape=tape,
                         control=lambda tt, lengths: swg.modulate(pv, tt, pv["l"]))
        traj = ad.stack([ad.reshape(ad.lincomb(sel, p), (2,))
                         for p in res.positions[1:]], axis=0)
        return tr.mse(traj, target)

    check(build_swg, {**body, **swg.params()})

    # input-layer / MLP classes through a held-input force drive
    u = np.random.default_rng(4).uniform(0, 1, 10)
    for kind in ("lil", "mlp"):
        brain = br.init_brain(kind, seed=5, in_dim=1,
                              out_dim=2 * (body_topology.n_movable - 1))
        slots = list(brain.params())

        def build_brain(tape, pv, brain=brain, slots=slots):
            body_v = {c: pv[c] for c in ("k", "d", "l")}
            outs, _ = ts.timeseries_rollout(body_topology, body_v, brain, u,
                                            tape=tape, tau=5,
                                            brain_vars={k: pv[k] for k in slots})
            return tr.mse(ad.stack(outs, axis=0), np.linspace(0, 0.1, 10))

        check(build_brain, {**body, **brain.params()}, picks=3)

    # feedback-layer class through a closed-loop rollout
    fl = br.FeedbackLayer.init(body_topology.n_springs, seed=6)
    fl.w *= 0.02
    fl.b = body_topology.rest_lengths() * (1 + 0.02 * np.random.default_rng(7).normal(size=body_topology.n_springs))

    def build_fl(tape, pv):
        body_v = {c: pv[c] for c in ("k", "d", "l")}
        res = ph.rollout(body_topology, body_v, 50, tape=tape,
                         control=lambda tt, lengths: fl.forward(pv, lengths))
        traj = ad.stack([ad.reshape(ad.lincomb(sel, p), (2,))
                         for p in res.positions[1:]], axis=0)
        return tr.mse(traj, target)

    check(build_fl, {**body, **fl.params()}, picks=3)

    elapsed = time.time() - t0
    bad = {k: v for k, v in worst.items() if v > 1e-4}
    report(1, not bad and elapsed < 60.0,
           f"max rel err {max(worst.values()):.2e} over {len(worst)} classes "
           f"(all <= 1e-4: {not bad}), runtime {elapsed:.1f}s < 60s")


# ------------------------------------------------------------ criterion 2

def test_criterion_2_integrator_fidelity():
    # harmonic oscillator: spring offset keeps the length positive; the
    # displacement about x = l obeys x'' = -x exactly
    l0, amp = 10.0, 1.0
    pts = np.array([[0.0, 0.0], [l0 + amp, 0.0]])
    t = topo.Topology(pts, np.array([False, True]), np.array([[1, 0]]), "custom")
    body = {"k": np.array([1.0]), "d": np.array([0.0]), "l": np.array([l0])}
    res = ph.rollout(t, body, 1000, state0=ph.SimState(pts.copy(), np.zeros((2, 2))))
    xs = res.trace.positions[:, 1, 0] - l0
    max_err = float(np.max(np.abs(xs - amp * np.cos(res.trace.times))))

    body_topology = topo.double_circle(13)
    rng = np.random.default_rng(14)
    body2 = {"k": rng.uniform(1, 100, body_topology.n_springs),
             "d": np.zeros(body_topology.n_springs),
             "l": body_topology.rest_lengths()}
    v0 = 0.1 * rng.normal(size=body_topology.points.shape) * body_topology.movable[:, None]
    res2 = ph.rollout(body_topology, body2, 10_000,
                      state0=ph.SimState(body_topology.points.copy(), v0),
                      record=("velocities", "lengths"))
    energy = ph.mechanical_energy(res2.trace, body_topology, body2)
    drift = float(np.max(np.abs(energy - energy[0])) / energy[0])

    report(2, max_err <= 1e-3 and drift <= 0.01,
           f"oscillator max err {max_err:.2e} <= 1e-3; "
           f"energy drift {drift:.4f} <= 0.01 over 10^4 steps")


# ------------------------------------------------------------ criterion 3

def _oracle_expanded(u, m):
    y = [0.0]
    for t in range(len(u)):
        su = sum((u[t - i] ** 3 - u[t - i] ** 4) for i in range(m) if t - i >= 0)
        sy = sum((y[t - i] ** 3 - y[t - i] ** 4) for i in range(m) if t - i >= 0)
        y.append(0.3 * y[t] + su + 0.2 * sy + 0.1)
    return np.array(y[1:])


def _oracle_narma(u, m):
    y = [0.0] * (len(u) + 1)
    for t in range(len(u)):
        if m == 2:
            prev = y[t - 1] if t >= 1 else 0.0
            y[t + 1] = 0.4 * y[t] + 0.4 * y[t] * prev + 0.6 * u[t] ** 3 + 0.1
        else:
            sy = sum(y[t - i] for i in range(m) if t - i >= 0)
            uo = u[t - m + 1] if t - m + 1 >= 0 else 0.0
            y[t + 1] = 0.3 * y[t] + 0.05 * y[t] * sy + 1.5 * uo * u[t] + 0.1
    return np.array(y[1:])


def test_criterion_3_series_oracles():
    rng = np.random.default_rng(7)
    u = rng.uniform(0, 0.5, 1000)
    gaps = [
        np.max(np.abs(ts.expanded_narma_target(u, 2) - _oracle_expanded(u, 2))),
        np.max(np.abs(ts.narma_target(u, 2) - _oracle_narma(u, 2))),
        np.max(np.abs(ts.narma_target(u, 10) - _oracle_narma(u, 10))),
        np.max(np.abs(ts.memory_target(u, 5)
                      - np.array([u[i - 5] if i >= 5 else 0.0 for i in range(1000)]))),
    ]
    zeros = ts.expanded_narma_target(np.zeros(3), 2)
    anchors = (abs(zeros[0] - 0.1) == 0.0 and abs(zeros[1] - 0.13018) < 1e-12)
    report(3, max(gaps) <= 1e-12 and anchors,
           f"max oracle gap {max(gaps):.2e} <= 1e-12 over 1000 steps; "
           f"anchors y(1)=0.1, y(2)=0.13018 hold")


# ------------------------------------------------------------ criteria 4, 5

def _require_digit_data():
    if mnist_io.find_split("train") is None or mnist_io.find_split("test") is None:
        pytest.skip(
            "handwritten-digit IDX files unavailable: this build environment "
            "has no network route to any dataset host and no local copy; set "
            "$SPRINGBRAIN_DATA to a directory with train/t10k IDX files to "
            "run this criterion at full fidelity")


def test_criterion_4_mnist_readout():
    _require_digit_data()
    t0 = time.time()
    from springbrain import config as cfg
    base = {"task": "mnist-readout", "train_images": 10_000, "epochs": 20,
            "seed": 1}
    nobody = pl.train_mnist_readout(cfg.resolve_config(
        {**base, "with_body": False, "out": "out/acc4-nobody"}))
    body = pl.train_mnist_readout(cfg.resolve_config(
        {**base, "with_body": True, "out": "out/acc4-body"}))
    acc_nb, acc_b = nobody["test_accuracy"], body["test_accuracy"]
    elapsed = time.time() - t0
    report(4, acc_nb >= 0.88 and acc_b >= acc_nb + 0.02,
           f"no-body {acc_nb:.4f} >= 0.88; body {acc_b:.4f} >= no-body + 0.02 "
           f"({elapsed / 60:.1f} min)")


def test_criterion_5_mnist_draw():
    _require_digit_data()
    from springbrain import config as cfg
    train_set = mnist_io.load_split("train")
    subset = mnist_io.pick_per_label(train_set, 10, seed=101)
    body_topology = topo.multiple_circle(17)
    rng = np.random.default_rng(5)
    body = {"k": rng.uniform(1, 100, body_topology.n_springs),
            "d": rng.uniform(0, 10, body_topology.n_springs),
            "l": body_topology.rest_lengths()}
    brain = br.init_brain("mlp", seed=5, in_dim=784,
                          out_dim=2 * (body_topology.n_movable - 1))
    config = digits.DrawConfig()
    untrained = digits.evaluate_draw(body_topology, body, brain, subset, config)
    run = digits.train_draw(body_topology, body, brain, subset,
                            digits.DrawConfig(epochs=60), seed=5)
    trained = digits.evaluate_draw(body_topology, body, brain, subset, config)
    report(5, untrained["accuracy"] <= 0.20 and trained["accuracy"] >= 0.80,
           f"untrained {untrained['accuracy']:.2f} <= 0.20; "
           f"trained {trained['accuracy']:.2f} >= 0.80 on the 100-image regime")


# ------------------------------------------------------------ criterion 6

def test_criterion_6_memory_trend():
    delays = [1, 4, 8, 12, 16]
    rates = tr.default_rates("timeseries").scaled(0.3)
    means = {}
    for kind in ("double-circle", "multiple-circle"):
        errs = np.zeros((3, len(delays)))
        for s, seed in enumerate((0, 1, 2)):
            for di, d in enumerate(delays):
                body_topology = topo.build_topology(kind, 17)
                body, brain = ts.make_system(body_topology, "lil", seed=seed)
                spec = ts.SeriesSpec("memory", delay=d, tau=20)
                config = ts.SeriesTaskConfig(spec=spec, length=150, washout=30,
                                             updates=40)
                ts.train(body_topology, body, brain, config, seed=seed,
                         rates=rates)
                ev = ts.evaluate(body_topology, body, brain, spec, length=700,
                                 washout=50, seed=seed + 70)
                errs[s, di] = ev["mse"]
        means[kind] = errs.mean(axis=0)
    rho_d = an.spearman(delays, means["double-circle"])
    rho_m = an.spearman(delays, means["multiple-circle"])
    better = means["multiple-circle"].mean() <= means["double-circle"].mean()
    report(6, rho_d >= 0.8 and rho_m >= 0.8 and better,
           f"spearman(double)={rho_d:.2f}, spearman(multiple)={rho_m:.2f} "
           f"(both >= 0.8); multiple mean {means['multiple-circle'].mean():.5f} "
           f"<= double mean {means['double-circle'].mean():.5f}")


# ------------------------------------------------------------ criterion 7

def _drive_states(body_topology, body, drive_ids, scale, axis_only, u, tau=5):
    rngw = np.random.default_rng(3)
    w = rngw.normal(size=len(drive_ids))
    b = rngw.normal(size=len(drive_ids))
    place = body_topology.selector(drive_ids).T
    tape = ad.NullTape()
    cache = {}

    def external(step, t):
        j = min(step // tau, len(u) - 1)
        if j not in cache:
            field = np.zeros((len(drive_ids), 2))
            field[:, 0] = w * (scale * u[j]) + b
            cache[j] = tape.leaf(place @ field)
        return cache[j]

    res = ph.rollout(body_topology, body, len(u) * tau, external=external,
                     record=("positions",))
    states = res.trace.positions[tau::tau]
    ids = body_topology.movable_ids
    if axis_only:
        return states[:, ids, 0]
    return states[:, ids, :].reshape(len(states), -1)


def test_criterion_7_ipc_properties(timeseries_trained):
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 1, 1500)

    # (a) rank-one output: total capacity bounded by one
    out0 = timeseries_trained["epoch0"]["profile"]
    ok_a = out0.rank == 1 and out0.total <= 1.0 + 1e-9

    # (b) axial chain stays linear; the planar body does not
    chain = topo.chain(6)
    body_c = {"k": np.full(5, 80.0), "d": np.full(5, 5.0),
              "l": chain.rest_lengths()}
    states = _drive_states(chain, body_c, list(chain.movable_ids), 3.0, True, u)
    prof_chain = an.ipc(states[100:], u[100:], max_degree=3, max_delay=4,
                        surrogates=100, seed=0)
    nl_chain = sum(v for k, v in prof_chain.by_degree().items() if k >= 2)

    circle = topo.double_circle(13)
    rng_b = np.random.default_rng(4)
    body_o = {"k": rng_b.uniform(1, 100, circle.n_springs),
              "d": np.random.default_rng(5).uniform(0, 10, circle.n_springs),
              "l": circle.rest_lengths()}
    drive = [i for i in circle.movable_ids if i != circle.cmp_index]
    states_c = _drive_states(circle, body_o, drive, 3.0, False, u)
    prof_circ = an.ipc(states_c[100:], u[100:], max_degree=3, max_delay=4,
                       surrogates=100, seed=0)
    deg2 = [cap for (p, cap) in prof_circ.entries
            if sum(d for _, d in p) == 2]
    # family-wise tolerance: ~50 null entries at the 99th-percentile
    # threshold admit a capacity-0.01-scale false positive
    ok_b = nl_chain <= 0.02 and max(deg2) >= 0.05

    # (c) training raises the output's degree-2+3 capacity
    nl_before = timeseries_trained["epoch0"]["nl23"]
    nl_after = timeseries_trained["final"]["nl23"]
    ok_c = nl_after > nl_before

    report(7, ok_a and ok_b and ok_c,
           f"(a) 1-D total {out0.total:.3f} <= rank {out0.rank}; "
           f"(b) chain deg>=2 {nl_chain:.4f} <= 0.02 vs body max deg-2 "
           f"{max(deg2):.3f} >= 0.05; (c) trained deg-2+3 {nl_after:.4f} > "
           f"untrained {nl_before:.4f}")


# ------------------------------------------------------------ criterion 8

def test_criterion_8_lissajous_training(lissajous_trained):
    run = lissajous_trained["run"]
    start = float(np.mean(run.loss_history[:5]))
    end = float(np.mean(run.loss_history[-5:]))
    ratio = start / end

    res = lj.evaluate(lissajous_trained["topology"], lissajous_trained["body"],
                      lissajous_trained["swg"], lissajous_trained["config"],
                      steps=1200)
    fx, fy = lj.dominant_frequencies(res.trace, lissajous_trained["topology"],
                                     skip=200)
    bin_hz = 1.0 / ((1200 - 200) * ph.DT_DEFAULT)
    spec = lissajous_trained["config"].spec
    omega_hz = lissajous_trained["swg"].omega / (2 * np.pi)
    ok_freq = (abs(fx - spec.alpha * omega_hz) <= bin_hz + 1e-9
               and abs(fy - spec.beta * omega_hz) <= bin_hz + 1e-9)
    report(8, ratio >= 10.0 and ok_freq,
           f"loss ratio {ratio:.1f} >= 10; CMP peaks ({fx:.2f}, {fy:.2f}) Hz "
           f"within one bin ({bin_hz:.2f} Hz) of ({spec.alpha}, {spec.beta}) Hz")


# ------------------------------------------------------------ criterion 9

def test_criterion_9_closed_loop_transfer(lissajous_transfer, locomotion_trained):
    # replay oracle: bit-exact equality with the open loop
    t = lissajous_transfer["topology"]
    body, swg = lissajous_transfer["body"], lissajous_transfer["swg"]
    warmup, post = 150, 120
    tape = ad.NullTape()
    pv = {k: tape.leaf(v) for k, v in swg.params().items()}
    l_var = tape.leaf(body["l"])
    open_res = ph.rollout(t, body, warmup + post, tape=tape,
                          control=lambda tt, lengths: swg.modulate(pv, tt, l_var),
                          record=("positions", "control"))
    fl0 = br.FeedbackLayer(np.zeros((t.n_springs, t.n_springs)), np.zeros(t.n_springs))
    oracle = cl.ClosedLoopSystem(t, body, fl0, swg=swg, warmup_steps=warmup)
    closed = oracle.rollout(post, replay=open_res.trace.control[warmup:])
    bit_exact = np.array_equal(closed.trace.positions,
                               open_res.trace.positions[warmup:])

    # >= 1 drawing transfer success over 5 seeds
    lj_results = [lissajous_transfer["metrics"]]  # seed 1, shared fixture
    for seed in (0, 2, 3, 4):
        try:
            topo13 = topo.double_circle(13)
            body_s, swg_s = lj.make_system(topo13, seed=seed)
            lj.train_single(topo13, body_s, swg_s, lj.LissajousConfig(updates=400),
                            seed=seed)
            _, metrics = pl.transfer_lissajous(topo13, body_s, swg_s, seed=seed)
        except tr.TrainingError as err:
            metrics = {"success": False, "ratio": float("nan"), "error": str(err)}
        lj_results.append(metrics)
    lj_wins = sum(1 for m in lj_results if m.get("success"))

    # >= 1 locomotion transfer success over 5 seeds
    loco_results = []
    for seed in (0, 1, 2, 3, 4):
        if seed == 1:
            parts = (locomotion_trained["topology"], locomotion_trained["body"],
                     locomotion_trained["swg"])
        else:
            topoc, body_s, swg_s = loco.make_system(seed=seed)
            loco.train_forward(topoc, body_s, swg_s,
                               loco.LocomotionConfig(total_steps=24000), seed=seed)
            parts = (topoc, body_s, swg_s)
        try:
            _, metrics = pl.transfer_locomotion(*parts, seed=seed)
        except ph.PhysicsError:
            metrics = {"success": False, "ratio": float("nan")}
        loco_results.append(metrics)
    loco_wins = sum(1 for m in loco_results if m.get("success"))

    report(9, bit_exact and lj_wins >= 1 and loco_wins >= 1,
           f"replay bit-exact: {bit_exact}; drawing successes {lj_wins}/5 "
           f"(ratios {[round(m.get('ratio', float('nan')), 2) for m in lj_results]}); "
           f"locomotion successes {loco_wins}/5 "
           f"(ratios {[round(m.get('ratio', float('nan')), 2) for m in loco_results]})")


# ------------------------------------------------------------ criterion 10

def test_criterion_10_perturbation_robustness(lissajous_transfer):
    t = lissajous_transfer["topology"]
    body, swg = lissajous_transfer["body"], lissajous_transfer["swg"]
    system = lissajous_transfer["system"]
    metrics = lissajous_transfer["metrics"]
    spec = lissajous_transfer["config"].spec

    def closed_trial(sigma, seed):
        return pl.lissajous_perturb_trial(system, spec, sigma=sigma, seed=seed,
                                          e_orig=metrics["E_orig"], settle=400)

    def open_trial(sigma, seed):
        return pl.lissajous_perturb_trial(system, spec, sigma=sigma, seed=seed,
                                          e_orig=metrics["E_orig"], settle=400,
                                          open_loop=True, swg=swg, body=body,
                                          topology=t)

    closed = cl.perturb_and_test(closed_trial, seeds=25, rule="closed")
    open_rep = cl.perturb_and_test(open_trial, seeds=25, rule="open")
    rho = an.spearman(closed.sigmas, closed.rates)
    gap = float(np.abs(closed.rates - open_rep.rates).mean())
    report(10, closed.rates[0] == 1.0 and rho <= -0.5 and gap <= 0.2,
           f"rate(sigma=0)={closed.rates[0]}; trend spearman {rho:.2f} <= -0.5; "
           f"open/closed mean gap {gap:.3f} <= 0.2 "
           f"(closed {np.round(closed.rates, 2).tolist()}, "
           f"open {np.round(open_rep.rates, 2).tolist()})")


# ------------------------------------------------------------ criterion 11

def test_criterion_11_locomotion(locomotion_trained):
    trained = locomotion_trained["trained_speed"]
    untrained = locomotion_trained["untrained_speed"]
    ratio = abs(trained) / max(abs(untrained), 1e-9)
    ok_forward = trained > 0 and ratio >= 5.0

    # switching: headwind recovery within 5 s of onset
    t = locomotion_trained["topology"]
    body = {k: v.copy() for k, v in locomotion_trained["body"].items()}
    swg = br.SineWaveGenerator(locomotion_trained["swg"].amplitude.copy(),
                               locomotion_trained["swg"].phase.copy())
    v_max = loco.achieved_max_speed(t, body, swg)
    loco.train_switching(t, body, swg, loco.LocomotionConfig(), seed=1,
                         v_target=v_max / 2, total_steps=30_000, wind_period=5.0,
                         rates=tr.default_rates("locomotion-forward").scaled(5.0))
    state = loco.settled_state(t, body)
    res, _ = loco.evaluate_speed(t, body, swg, duration=12.0, state=state,
                                 wind_magnitude=-1.0, wind_onset=6.0)
    v = res.trace.velocities[:, :, 0].mean(axis=1)
    windless = float(v[300:600].mean())
    recovered = float(v[1000:1100].mean())      # 4-5 s after onset
    frac = recovered / max(windless, 1e-9)
    report(11, ok_forward and frac >= 0.7,
           f"trained {trained:.3f} >= 5x untrained {untrained:.3f} "
           f"(ratio {ratio:.1f}); wind recovery {recovered:.3f} = "
           f"{frac:.2f}x windless {windless:.3f} within 5 s (>= 0.7)")


# ------------------------------------------------------------ criterion 12

def test_criterion_12_scheme1_negative(lissajous_transfer):
    baseline = lissajous_transfer["metrics"]["E_closed"]
    spec = lissajous_transfer["config"].spec
    t = lissajous_transfer["topology"]
    offset = t.points[t.cmp_index]
    omega = lissajous_transfer["swg"].omega

    def target_fn(times):
        return lj.lissajous_target(spec, omega * times, offset)

    ratios = []
    for seed in range(5):
        body, _ = lj.make_system(t, seed=seed + 10)
        fl = br.FeedbackLayer.init(t.n_springs, seed=seed)
        run = cl.simultaneous_scheme_1(t, body, fl, target_fn, updates=60,
                                       segment=100, seed=seed)
        final = float(np.mean(run.loss_history[-5:])) if run.loss_history else np.inf
        ratios.append(final / baseline)
    all_fail = all(r >= 10.0 for r in ratios)
    report(12, all_fail,
           f"closed-loop-from-scratch final/baseline error ratios "
           f"{['%.1e' % r for r in ratios]} all >= 10 across 5 seeds")
