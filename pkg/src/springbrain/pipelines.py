"""End-to-end experiment pipelines: train, transfer, test, export.

Each pipeline takes a resolved config (see :mod:`springbrain.config`),
runs the experiment, writes artifacts into the config's output directory
(CSV + JSON next to rendered figures), and returns a summary dict.  Every
artifact records the config hash and seed.
"""

from __future__ import annotations

import os

import numpy as np

from . import analysis as an
from . import closedloop as cl
from . import config as cfg
from . import mnist_io
from . import physics as ph
from . import reporting as rep
from . import topology as tp
from . import training as tr
from .brains import SineWaveGenerator
from .tasks import digits, lissajous as lj, locomotion as loco, series as ts


def _rates(config, task_key):
    rates = tr.default_rates(task_key)
    if "rates" in config:
        rates = rates.override(**config["rates"])
    return rates


def _outdir(config):
    return rep.ensure_dir(config["out"])


def _finish(config, outdir, summary, run=None):
    summary = {"config_hash": cfg.config_hash(config), "seed": config["seed"],
               **summary}
    if run is not None:
        run.write_csv(os.path.join(outdir, "loss.csv"))
        rep.figure_loss(os.path.join(outdir, "loss.png"), run.loss_history)
        summary["final_loss"] = run.summary()["final_loss"]
        summary["updates"] = run.updates
        summary["skipped_items"] = run.skipped_items
    rep.write_json(os.path.join(outdir, "config.json"),
                   {**config, "hash": cfg.config_hash(config)})
    rep.write_json(os.path.join(outdir, "summary.json"), summary)
    return summary


# ---------------------------------------------------------------- training

def train_lissajous_single(config):
    outdir = _outdir(config)
    topology = tp.double_circle(13)
    body, swg = lj.make_system(topology, config["seed"], config["amplitude_init"])
    spec = lj.LissajousSpec(config["alpha"], config["beta"], config["delta"])
    task_config = lj.LissajousConfig(spec=spec, segment=config["segment"],
                                     updates=config["updates"])
    run = lj.train_single(topology, body, swg, task_config, config["seed"],
                          rates=_rates(config, "lissajous-single"))
    cfg.save_system(os.path.join(outdir, "checkpoint.json"), topology, body,
                    {"swg": swg}, meta={"task": config["task"],
                                        "seed": config["seed"],
                                        "hash": cfg.config_hash(config)})
    res = lj.evaluate(topology, body, swg, task_config)
    err = lj.steady_error(topology, res, spec, swg.omega, task_config.washout)
    rep.write_trace_csv(os.path.join(outdir, "trace.csv"), res.trace)
    cmp_xy = res.trace.positions[task_config.washout:, topology.cmp_index, :]
    target = lj.lissajous_target(spec, swg.omega * res.trace.times[task_config.washout:],
                                 topology.points[topology.cmp_index])
    rep.figure_trajectory(os.path.join(outdir, "trajectory.png"), cmp_xy, target)
    return _finish(config, outdir, {"steady_mse": err}, run)


def train_lissajous_switching(config):
    outdir = _outdir(config)
    topology = tp.double_circle(13)
    body, swg = lj.make_system(topology, config["seed"], config["amplitude_init"])
    spec = lj.LissajousSpec(config["alpha"], config["beta"], config["delta"])
    task_config = lj.LissajousConfig(spec=spec, segment=config["segment"],
                                     updates=config["pre_updates"])
    lj.train_single(topology, body, swg, task_config, config["seed"],
                    rates=_rates(config, "lissajous-single"))
    alternate = None
    if config["alternate"] is not None:
        alternate = lj.LissajousSpec(*config["alternate"])
    wind = lj.WindSpec(magnitude=config["wind_magnitude"], alternate=alternate)
    run = lj.train_switching(topology, body, swg, task_config, config["seed"],
                             wind, rates=_rates(config, "lissajous-switching"),
                             fixed_slot=config["fixed_slot"],
                             updates=config["updates"])
    cfg.save_system(os.path.join(outdir, "checkpoint.json"), topology, body,
                    {"swg": swg}, meta={"task": config["task"],
                                        "seed": config["seed"],
                                        "wind_magnitude": config["wind_magnitude"],
                                        "alternate": config["alternate"],
                                        "spec": [spec.alpha, spec.beta, spec.delta],
                                        "hash": cfg.config_hash(config)})
    return _finish(config, outdir, {}, run)


def train_locomotion_forward(config):
    outdir = _outdir(config)
    topology, body, swg = loco.make_system(config["seed"], config["amplitude_init"])
    _, untrained = loco.evaluate_speed(topology, body, swg, duration=10.0)
    task_config = loco.LocomotionConfig(total_steps=config["total_steps"],
                                        segment=config["segment"])
    run = loco.train_forward(topology, body, swg, task_config, config["seed"],
                             rates=_rates(config, "locomotion-forward"))
    res, trained = loco.evaluate_speed(topology, body, swg, duration=10.0)
    v_max = loco.achieved_max_speed(topology, body, swg)
    cfg.save_system(os.path.join(outdir, "checkpoint.json"), topology, body,
                    {"swg": swg}, meta={"task": config["task"],
                                        "seed": config["seed"],
                                        "v_max": v_max,
                                        "hash": cfg.config_hash(config)})
    speeds = res.trace.velocities[:, :, 0].mean(axis=1)
    rep.figure_speed(os.path.join(outdir, "speed.png"), res.trace.times, speeds)
    rep.write_trace_csv(os.path.join(outdir, "trace.csv"), res.trace,
                        channels=("positions",))
    return _finish(config, outdir,
                   {"untrained_speed": untrained, "trained_speed": trained,
                    "v_max": v_max}, run)


def train_locomotion_switching(config):
    outdir = _outdir(config)
    topology, body, swg = loco.make_system(config["seed"], config["amplitude_init"])
    task_config = loco.LocomotionConfig(total_steps=config["pre_total_steps"],
                                        segment=config["segment"])
    loco.train_forward(topology, body, swg, task_config, config["seed"],
                       rates=_rates(config, "locomotion-forward"))
    v_max = loco.achieved_max_speed(topology, body, swg)
    run = loco.train_switching(topology, body, swg, task_config, config["seed"],
                               v_target=v_max / 2.0,
                               wind_magnitude=config["wind_magnitude"],
                               wind_period=config["wind_period"],
                               rates=_rates(config, "locomotion-switching"),
                               total_steps=config["total_steps"])
    cfg.save_system(os.path.join(outdir, "checkpoint.json"), topology, body,
                    {"swg": swg}, meta={"task": config["task"],
                                        "seed": config["seed"], "v_max": v_max,
                                        "wind_magnitude": config["wind_magnitude"],
                                        "wind_period": config["wind_period"],
                                        "hash": cfg.config_hash(config)})
    return _finish(config, outdir, {"v_max": v_max, "v_target": v_max / 2.0}, run)


def train_timeseries(config):
    outdir = _outdir(config)
    topology = tp.build_topology(config["topology"], config["n_mov"])
    body, brain = ts.make_system(topology, config["brain"], config["seed"])
    if config["task"] == "memory":
        spec = ts.SeriesSpec("memory", delay=config["delay"], tau=config["tau"])
    else:
        spec = ts.SeriesSpec(config["kind"], order=config["order"],
                             tau=config["tau"])
    task_config = ts.SeriesTaskConfig(spec=spec, length=config["length"],
                                      washout=config["washout"],
                                      updates=config["updates"])
    run = ts.train(topology, body, brain, task_config, config["seed"],
                   rates=_rates(config, "timeseries"))
    ev = ts.evaluate(topology, body, brain, spec, length=config["length"],
                     washout=config["washout"], seed=config["seed"] + 1)
    cfg.save_system(os.path.join(outdir, "checkpoint.json"), topology, body,
                    {"brain": brain}, meta={"task": config["task"],
                                            "seed": config["seed"],
                                            "series": spec.kind,
                                            "tau": spec.tau,
                                            "order": spec.order,
                                            "delay": spec.delay,
                                            "brain_kind": config["brain"],
                                            "hash": cfg.config_hash(config)})
    rep.figure_series(os.path.join(outdir, "series.png"), ev["targets"],
                      ev["outputs"], washout=config["washout"])
    rep.write_rows_csv(os.path.join(outdir, "series.csv"),
                       ["step", "input", "target", "output"],
                       list(zip(range(len(ev["inputs"])),
                                map(float, ev["inputs"]),
                                map(float, ev["targets"]),
                                map(float, ev["outputs"]))))
    return _finish(config, outdir, {"eval_mse": ev["mse"]}, run)


def _load_mnist_sets(config):
    root = config.get("data_root") or mnist_io.dataset_root()
    train = mnist_io.load_split("train", root)
    test = mnist_io.load_split("test", root)
    return train, test


def train_mnist_draw(config):
    outdir = _outdir(config)
    topology = tp.build_topology(config["topology"], config["n_mov"])
    train_set, _ = _load_mnist_sets(config)
    subset = mnist_io.pick_per_label(train_set, config["per_label"],
                                     seed=cfg.stream_seed(config["seed"], "data"))
    rng = cfg.seed_stream(config["seed"], "init")
    body = {"k": rng.uniform(1, 100, topology.n_springs),
            "d": rng.uniform(0, 10, topology.n_springs),
            "l": topology.rest_lengths()}
    n_drive = topology.n_movable - 1
    from . import brains as br
    brain = br.init_brain(config["brain"], seed=cfg.stream_seed(config["seed"], "brain"),
                          in_dim=784, out_dim=2 * n_drive)
    task_config = digits.DrawConfig(steps=config["steps"],
                                    batch_size=config["batch_size"],
                                    epochs=config["epochs"])
    run = digits.train_draw(topology, body, brain, subset, task_config,
                            config["seed"], rates=_rates(config, "mnist"))
    metrics = digits.evaluate_draw(topology, body, brain, subset, task_config)
    cfg.save_system(os.path.join(outdir, "checkpoint.json"), topology, body,
                    {"brain": brain}, meta={"task": "mnist-draw",
                                            "seed": config["seed"],
                                            "steps": config["steps"],
                                            "hash": cfg.config_hash(config)})
    return _finish(config, outdir, {"train_accuracy": metrics["accuracy"]}, run)


def train_mnist_readout(config):
    outdir = _outdir(config)
    topology = tp.build_topology(config["topology"], config["n_mov"])
    train_set, test_set = _load_mnist_sets(config)
    n = min(config["train_images"], len(train_set))
    order = cfg.seed_stream(config["seed"], "data").permutation(len(train_set))[:n]
    subset = train_set.subset(np.sort(order))
    rng = cfg.seed_stream(config["seed"], "init")
    body = {"k": rng.uniform(1, 100, topology.n_springs),
            "d": rng.uniform(0, 10, topology.n_springs),
            "l": topology.rest_lengths()}
    lil, readout = digits.make_readout_system(
        topology, cfg.stream_seed(config["seed"], "brain"),
        with_body=config["with_body"])
    task_config = digits.ReadoutConfig(epochs=config["epochs"],
                                       batch_size=config["batch_size"],
                                       with_body=config["with_body"])
    run = digits.train_readout(topology, body, lil, readout, subset,
                               task_config, config["seed"],
                               rates=_rates(config, "mnist"))
    accuracy = digits.readout_accuracy(topology, body, lil, readout, test_set,
                                       with_body=config["with_body"])
    cfg.save_system(os.path.join(outdir, "checkpoint.json"), topology, body,
                    {"lil": lil, "readout": readout},
                    meta={"task": "mnist-readout", "seed": config["seed"],
                          "with_body": config["with_body"],
                          "hash": cfg.config_hash(config)})
    return _finish(config, outdir, {"test_accuracy": accuracy}, run)


TRAIN_PIPELINES = {
    "lissajous-single": train_lissajous_single,
    "lissajous-switching": train_lissajous_switching,
    "locomotion-forward": train_locomotion_forward,
    "locomotion-switching": train_locomotion_switching,
    "timeseries": train_timeseries,
    "memory": train_timeseries,
    "mnist-draw": train_mnist_draw,
    "mnist-readout": train_mnist_readout,
}


def train_pipeline(config):
    return TRAIN_PIPELINES[config["task"]](config)


# ---------------------------------------------------------------- transfer

def transfer_lissajous(topology, body, swg, *, seed, collect_steps=16000,
                       washout=300, noise_std=cl.NOISE_STD_DRAWING,
                       spec=None, warmup=300, settle=200, window=200):
    """Fit a feedback layer and score the closed loop against the open loop.

    Returns (ClosedLoopSystem, metrics): E_orig from the generator-driven
    steady cycle, E from the feedback-driven continuation after a settle
    window, success when E/E_orig < 2.
    """
    spec = spec or lj.LissajousSpec()
    ds = cl.collect_fl_dataset(topology, body, swg, steps=collect_steps,
                               noise_std=noise_std, seed=seed, washout=washout)
    fl, lam = cl.fit_feedback_layer(ds)
    system = cl.ClosedLoopSystem(topology, body, fl, swg=swg, warmup_steps=warmup)
    offset = topology.points[topology.cmp_index]

    open_res = lj.evaluate(topology, body, swg,
                           lj.LissajousConfig(spec=spec), steps=warmup + settle + window)
    e_orig = lj.phase_aligned_error(open_res.trace, topology, spec, swg.omega,
                                    warmup + settle, offset)
    closed = system.rollout(settle + window)
    e_closed = lj.phase_aligned_error(closed.trace, topology, spec, swg.omega,
                                      settle, offset)
    ratio = e_closed / e_orig if e_orig > 0 else np.inf
    return system, {"E_orig": e_orig, "E_closed": e_closed, "ratio": ratio,
                    "success": bool(ratio < 2.0), "lambda": lam}


def transfer_locomotion(topology, body, swg, *, seed, collect_steps=1500,
                        washout=300, noise_std=cl.NOISE_STD_LOCOMOTION,
                        warmup=500, window=500):
    """Closed/open speed ratio; success at >= 0.7."""
    state = loco.settled_state(topology, body)
    ds = cl.collect_fl_dataset(topology, body, swg, steps=collect_steps,
                               noise_std=noise_std, seed=seed, washout=washout,
                               state0=state, env=loco.ENV)
    fl, lam = cl.fit_feedback_layer(ds)
    system = cl.ClosedLoopSystem(topology, body, fl, swg=swg,
                                 warmup_steps=warmup, env=loco.ENV,
                                 initial_state=loco.settled_state(topology, body))
    _, v_open = loco.evaluate_speed(topology, body, swg, duration=window * ph.DT_DEFAULT)
    closed = system.rollout(window, record=("positions", "velocities"))
    v_closed = float(closed.trace.velocities[1:, :, 0].mean())
    ratio = v_closed / v_open if v_open != 0 else np.inf
    return system, {"v_open": v_open, "v_closed": v_closed, "ratio": ratio,
                    "success": bool(ratio >= 0.7), "lambda": lam}


def lissajous_perturb_trial(system, spec, *, sigma, seed, settle=200,
                            window=200, e_orig=None, kick_step=100,
                            open_loop=False, swg=None, body=None,
                            topology=None):
    """One kicked rollout -> success flag (E/E_orig < 2)."""
    offset = system.topology.points[system.topology.cmp_index]
    kick = cl.position_kick(system.topology, sigma, seed)
    if open_loop:
        # same kick applied while the generator keeps driving
        res_pre = lj.evaluate(topology, body, swg, lj.LissajousConfig(spec=spec),
                              steps=system.warmup_steps + kick_step)
        state = res_pre.final_state
        state.positions = state.positions + kick * topology.movable_mask()
        state.accel = None
        from . import autodiff as ad
        tape = ad.NullTape()
        pv = {k: tape.leaf(v) for k, v in swg.params().items()}
        l_var = tape.leaf(body["l"])
        post = ph.rollout(topology, body, settle + window, tape=tape,
                          control=lambda tt, lengths: swg.modulate(pv, tt, l_var),
                          state0=state, record=("positions",))
        err = lj.phase_aligned_error(post.trace, topology, spec, swg.omega,
                                     settle, offset)
    else:
        try:
            _, post = system.rollout(kick_step + settle + window,
                                     perturb=(kick_step, kick))
        except ph.PhysicsError:
            return False
        err = lj.phase_aligned_error(post.trace, system.topology, spec,
                                     2.0 * np.pi, settle, offset)
    return bool(err / e_orig < 2.0)


def locomotion_perturb_trial(system, *, sigma, seed, kick_step=200,
                             pre_window=200, post_window=500, open_loop=False,
                             swg=None, body=None, topology=None):
    """Success when the post-kick speed reaches 0.7x the pre-kick speed."""
    kick = cl.position_kick(system.topology, sigma, seed)
    try:
        if open_loop:
            state = loco.settled_state(topology, body)
            res_pre, v_pre = loco.evaluate_speed(
                topology, body, swg, duration=(system.warmup_steps + kick_step) * ph.DT_DEFAULT,
                state=state)
            mid = res_pre.final_state
            mid.positions = mid.positions + kick * topology.movable_mask()
            mid.accel = None
            res_post, _ = loco.evaluate_speed(topology, body, swg,
                                              duration=post_window * ph.DT_DEFAULT,
                                              state=mid)
            v_post = float(res_post.trace.velocities[-post_window // 2:, :, 0].mean())
        else:
            pre, post = system.rollout(kick_step + post_window,
                                       perturb=(kick_step, kick))
            v_pre = float(pre.trace.velocities[-pre_window:, :, 0].mean())
            v_post = float(post.trace.velocities[-post_window // 2:, :, 0].mean())
    except ph.PhysicsError:
        return False
    if v_pre <= 0:
        return False
    return bool(v_post / v_pre >= 0.7)


# ---------------------------------------------------------------- analyses

def analyze_ipc_from_checkpoint(path, outdir, *, eval_length=2200, washout=100,
                                max_degree=3, max_delay=5, surrogates=100,
                                seed=0):
    topology, body, brains, meta = cfg.load_system(path)
    brain = brains["brain"]
    spec = ts.SeriesSpec(meta.get("series", "expanded-narma"),
                         order=meta.get("order", 2),
                         delay=meta.get("delay", 1),
                         tau=meta.get("tau", 20))
    ev = ts.evaluate(topology, body, brain, spec, length=eval_length,
                     washout=washout, seed=seed)
    profile = an.ipc(ev["outputs"][washout:], ev["inputs"][washout:],
                     max_degree=max_degree, max_delay=max_delay,
                     surrogates=surrogates, seed=seed)
    rep.ensure_dir(outdir)
    rep.write_rows_csv(os.path.join(outdir, "ipc.csv"),
                       ["profile", "capacity", "raw", "threshold"],
                       [(str(r["profile"]), r["capacity"], r["raw"], r["threshold"])
                        for r in profile.rows()])
    rep.write_json(os.path.join(outdir, "ipc.json"),
                   {"total": profile.total, "rank": profile.rank,
                    "by_degree": profile.by_degree(), "rows": profile.rows()})
    rep.figure_ipc(os.path.join(outdir, "ipc.png"), profile)
    return profile
