"""Command-line interface.

    springbrain train    --task lissajous-single --seed 1 --out runs/lj1
    springbrain rollout  --checkpoint runs/lj1/checkpoint.json --steps 800
    springbrain closeloop --task lissajous --seeds 5 --out runs/cl
    springbrain analyze ipc --checkpoint runs/ts/checkpoint.json --out runs/ipc

Configs are JSON documents (--config); flags override the file.  Every run
directory receives config.json (with its hash), machine-readable CSV/JSON,
and rendered PNG figures.  The digit dataset root comes from
$SPRINGBRAIN_DATA or the data_root config key.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import analysis as an
from . import closedloop as cl
from . import config as cfg
from . import physics as ph
from . import pipelines as pl
from . import reporting as rep
from .tasks import lissajous as lj, locomotion as loco


def _load_config(args, extra=None):
    doc = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
    for key in ("task", "seed", "out", "epochs", "threads"):
        val = getattr(args, key, None)
        if val is not None:
            doc[key] = val
    if extra:
        doc.update(extra)
    return cfg.resolve_config(doc)


def cmd_train(args):
    config = _load_config(args)
    summary = pl.train_pipeline(config)
    print(json.dumps(summary, indent=2, default=str))
    return 0


def cmd_rollout(args):
    topology, body, brains, meta = cfg.load_system(args.checkpoint)
    outdir = rep.ensure_dir(args.out)
    tape = None
    control = None
    env = loco.ENV if str(meta.get("task", "")).startswith("locomotion") else ph.ENV_OFF
    state0 = None
    if "swg" in brains:
        from . import autodiff as ad
        tape = ad.NullTape()
        swg = brains["swg"]
        pv = {k: tape.leaf(v) for k, v in swg.params().items()}
        l_var = tape.leaf(body["l"])
        control = lambda t, lengths: swg.modulate(pv, t, l_var)
        if env.enabled:
            state0 = loco.settled_state(topology, body)
    res = ph.rollout(topology, body, args.steps, control=control, env=env,
                     state0=state0,
                     record=("positions", "velocities", "lengths", "control"))
    rep.write_trace_csv(os.path.join(outdir, "trace.csv"), res.trace)
    summary = {"checkpoint": args.checkpoint, "steps": args.steps,
               "meta": meta, "final_time": float(res.trace.times[-1])}
    if topology.cmp_index is not None:
        cmp_xy = res.trace.positions[:, topology.cmp_index, :]
        rep.figure_trajectory(os.path.join(outdir, "trajectory.png"), cmp_xy)
    rep.write_json(os.path.join(outdir, "summary.json"), summary)
    print(json.dumps(summary, indent=2, default=str))
    return 0


def _closeloop_one(task, seed, train_overrides):
    from . import topology as tp
    if task == "lissajous":
        topology = tp.double_circle(13)
        body, swg = lj.make_system(topology, seed)
        lj_config = lj.LissajousConfig(updates=train_overrides.get("updates", 400))
        lj.train_single(topology, body, swg, lj_config, seed)
        system, metrics = pl.transfer_lissajous(topology, body, swg, seed=seed)
        return system, metrics, (topology, body, swg)
    topology, body, swg = loco.make_system(seed)
    config = loco.LocomotionConfig(
        total_steps=train_overrides.get("total_steps", 24000))
    loco.train_forward(topology, body, swg, config, seed)
    system, metrics = pl.transfer_locomotion(topology, body, swg, seed=seed)
    return system, metrics, (topology, body, swg)


def cmd_closeloop(args):
    outdir = rep.ensure_dir(args.out)
    overrides = {}
    if args.config:
        with open(args.config) as fh:
            overrides = json.load(fh)
    per_seed = []
    first_success = None
    for seed in range(args.seed, args.seed + args.seeds):
        try:
            system, metrics, parts = _closeloop_one(args.task, seed, overrides)
        except Exception as err:  # diverged training counts as a failed seed
            per_seed.append({"seed": seed, "error": str(err), "success": False})
            continue
        per_seed.append({"seed": seed, **metrics})
        if metrics["success"] and first_success is None:
            first_success = (system, parts, seed)
    summary = {"task": args.task, "seeds": per_seed,
               "n_success": sum(1 for r in per_seed if r.get("success"))}
    if first_success is not None:
        system, (topology, body, swg), seed = first_success
        cfg.save_system(os.path.join(outdir, "checkpoint.json"), topology, body,
                        {"swg": swg, "fl": system.fl},
                        meta={"task": f"closeloop-{args.task}", "seed": seed,
                              "warmup_steps": system.warmup_steps})

    if args.perturb and first_success is not None:
        system, (topology, body, swg), seed = first_success
        spec = lj.LissajousSpec()
        if args.task == "lissajous":
            e_orig = next(r for r in per_seed if r["seed"] == seed)["E_orig"]

            def trial(sigma, trial_seed, open_loop=False):
                return pl.lissajous_perturb_trial(
                    system, spec, sigma=sigma, seed=trial_seed, e_orig=e_orig,
                    open_loop=open_loop, swg=swg, body=body, topology=topology)
        else:
            def trial(sigma, trial_seed, open_loop=False):
                return pl.locomotion_perturb_trial(
                    system, sigma=sigma, seed=trial_seed, open_loop=open_loop,
                    swg=swg, body=body, topology=topology)

        closed = cl.perturb_and_test(trial, seeds=args.trials, rule="closed-loop")
        open_rep = cl.perturb_and_test(lambda s, ts: trial(s, ts, open_loop=True),
                                       seeds=args.trials, rule="open-loop")
        rep.write_rows_csv(os.path.join(outdir, "perturb.csv"),
                           ["sigma", "rate_closed", "rate_open", "n_success_closed",
                            "n_success_open", "n_total"],
                           [(float(s), float(rc), float(ro), int(kc), int(ko),
                             closed.n_total)
                            for s, rc, ro, kc, ko in zip(
                                closed.sigmas, closed.rates, open_rep.rates,
                                closed.n_success, open_rep.n_success)])
        rep.figure_perturb(os.path.join(outdir, "perturb.png"),
                           [closed, open_rep], labels=["closed", "open"])
        summary["perturb"] = {"closed": closed.rows(), "open": open_rep.rows()}
    rep.write_json(os.path.join(outdir, "summary.json"), summary)
    print(json.dumps(summary, indent=2, default=str))
    return 0


def cmd_analyze(args):
    outdir = rep.ensure_dir(args.out)
    if args.what == "ipc":
        profile = pl.analyze_ipc_from_checkpoint(
            args.checkpoint, outdir, surrogates=args.surrogates, seed=args.seed or 0)
        print(json.dumps({"total": profile.total, "rank": profile.rank,
                          "by_degree": profile.by_degree()}, indent=2))
        return 0
    if args.what == "pca":
        topology, body, brains, meta = cfg.load_system(args.checkpoint)
        data = np.load(args.data) if args.data else None
        if data is None:
            print("analyze pca requires --data (rows to project)", file=sys.stderr)
            return 2
        proj, explained = an.pca_project(data, k=2)
        rep.write_rows_csv(os.path.join(outdir, "pca.csv"),
                           ["pc1", "pc2"], [tuple(map(float, row)) for row in proj])
        rep.write_json(os.path.join(outdir, "pca.json"),
                       {"explained": explained.tolist()})
        return 0
    if args.what == "bifurcation":
        topology, body, brains, meta = cfg.load_system(args.checkpoint)
        swg = brains["swg"]
        forces = np.round(np.arange(args.f_min, args.f_max + 1e-9, args.f_step), 10)

        def run_for_force(f):
            res = lj.evaluate(topology, body, swg, lj.LissajousConfig(),
                              steps=args.steps, wind=lj.WindSpec(magnitude=f),
                              wind_onset=0.0)
            cmp_xy = res.trace.positions[args.transient:, topology.cmp_index, :]
            return cmp_xy[:, 0], cmp_xy[:, 1]

        result = an.bifurcation_sweep(run_for_force, forces)
        rep.write_rows_csv(os.path.join(outdir, "bifurcation.csv"),
                           ["force", "coord", "extremum"],
                           [(float(f), coord, float(v))
                            for f, xs, ys in zip(result.forces, result.extrema_x,
                                                 result.extrema_y)
                            for coord, vals in (("x", xs), ("y", ys))
                            for v in vals])
        rep.figure_bifurcation(os.path.join(outdir, "bifurcation.png"), result)
        rep.figure_bifurcation(os.path.join(outdir, "bifurcation_y.png"), result,
                               coord="y")
        print(f"bifurcation sweep over {len(forces)} forces written to {outdir}")
        return 0
    if args.what == "timing":
        topology, body, brains, meta = cfg.load_system(args.checkpoint)
        swg = brains["swg"]
        spec = lj.LissajousSpec(*(meta.get("spec") or (1.0, 2.0, 0.0)))
        alternate = meta.get("alternate")
        wind = lj.WindSpec(magnitude=meta.get("wind_magnitude", 1.0),
                           alternate=lj.LissajousSpec(*alternate) if alternate else None)
        offset = topology.points[topology.cmp_index]
        period_steps = int(round(2 * np.pi / swg.omega / ph.DT_DEFAULT))

        def run_for_slot(n):
            onset = args.settle * ph.DT_DEFAULT + (2 * np.pi / swg.omega) * (n / wind.slots)
            steps = args.settle + period_steps + args.post
            res = lj.evaluate(topology, body, swg, lj.LissajousConfig(),
                              steps=steps, wind=wind, wind_onset=onset)
            times = res.trace.times[-args.window:]
            cmp_xy = res.trace.positions[-args.window:, topology.cmp_index, :]
            target = wind.target_with_wind(spec, swg.omega * times, offset)
            return float(np.mean((cmp_xy - target) ** 2))

        slots = range(0, wind.slots, args.slot_step)
        results = an.switching_timing_sweep(run_for_slot, slots, args.threshold)
        rep.write_rows_csv(os.path.join(outdir, "timing.csv"),
                           ["slot", "error", "converged"],
                           [(n, r["error"], int(r["converged"]))
                            for n, r in results.items()])
        rep.write_json(os.path.join(outdir, "timing.json"), results)
        n_conv = sum(r["converged"] for r in results.values())
        print(f"{n_conv}/{len(results)} slots converged; results in {outdir}")
        return 0
    if args.what == "labelmap":
        topology, body, brains, meta = cfg.load_system(args.checkpoint)
        from . import autodiff as ad
        from . import mnist_io
        from .tasks import digits
        dataset = mnist_io.load_split("train", args.data)
        image = dataset.images[args.image_index]
        source = int(dataset.labels[args.image_index])
        pos0 = digits.initial_positions(topology, brains["brain"], image[None],
                                        ad.NullTape()).value[0]
        steps = meta.get("steps", digits.DRAW_STEPS)
        targets = digits.all_targets(steps)
        mass_id = args.mass_id
        if mass_id is None:
            mass_id = int(next(i for i in topology.movable_ids
                               if i != topology.cmp_index))
        extent = args.extent or an.default_map_extent(topology)
        lm = an.label_map(topology, body, pos0, targets, source,
                          mass_id, extent=extent, cells=args.cells,
                          steps=steps)
        rep.write_pgm(os.path.join(outdir, "labelmap.pgm"), lm.labels)
        rep.figure_label_map(os.path.join(outdir, "labelmap.png"), lm)
        rep.write_json(os.path.join(outdir, "labelmap.json"),
                       {"size": lm.size, "mass_id": lm.mass_id,
                        "source_label": lm.source_label,
                        "labels": lm.labels.tolist()})
        print(f"label map size {lm.size:.3f} written to {outdir}")
        return 0
    if args.what == "perturb":
        topology, body, brains, meta = cfg.load_system(args.checkpoint)
        swg, fl = brains["swg"], brains["fl"]
        task = str(meta.get("task", "")).replace("closeloop-", "")
        if task == "locomotion":
            system = cl.ClosedLoopSystem(
                topology, body, fl, swg=swg,
                warmup_steps=meta.get("warmup_steps", 500), env=loco.ENV,
                initial_state=loco.settled_state(topology, body))

            def trial(sigma, trial_seed):
                return pl.locomotion_perturb_trial(system, sigma=sigma,
                                                   seed=trial_seed)
        else:
            system = cl.ClosedLoopSystem(topology, body, fl, swg=swg,
                                         warmup_steps=meta.get("warmup_steps", 300))
            spec = lj.LissajousSpec(*(meta.get("spec") or (1.0, 2.0, 0.0)))
            _, metrics = pl.transfer_lissajous(topology, body, swg,
                                               seed=args.seed or 0, spec=spec)

            def trial(sigma, trial_seed):
                return pl.lissajous_perturb_trial(system, spec, sigma=sigma,
                                                  seed=trial_seed,
                                                  e_orig=metrics["E_orig"])
        report = cl.perturb_and_test(trial, seeds=args.trials,
                                     rule=f"closed-loop {task}")
        rep.write_rows_csv(os.path.join(outdir, "perturb.csv"),
                           ["sigma", "rate", "n_success", "n_total"],
                           report.rows())
        rep.figure_perturb(os.path.join(outdir, "perturb.png"), report)
        rep.write_json(os.path.join(outdir, "perturb.json"),
                       {"rows": report.rows(), "rule": report.rule})
        print(f"perturbation report written to {outdir}")
        return 0
    print(f"unknown analysis '{args.what}'", file=sys.stderr)
    return 2


def build_parser():
    parser = argparse.ArgumentParser(prog="springbrain")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a task")
    p_train.add_argument("--config")
    p_train.add_argument("--task")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--out")
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--threads", type=int)
    p_train.set_defaults(func=cmd_train)

    p_roll = sub.add_parser("rollout", help="replay a checkpoint")
    p_roll.add_argument("--checkpoint", required=True)
    p_roll.add_argument("--steps", type=int, default=800)
    p_roll.add_argument("--out", default="out")
    p_roll.set_defaults(func=cmd_rollout)

    p_cl = sub.add_parser("closeloop", help="transfer control into a feedback loop")
    p_cl.add_argument("--task", choices=["lissajous", "locomotion"], required=True)
    p_cl.add_argument("--seeds", type=int, default=5)
    p_cl.add_argument("--seed", type=int, default=0)
    p_cl.add_argument("--config")
    p_cl.add_argument("--out", default="out")
    p_cl.add_argument("--perturb", action="store_true")
    p_cl.add_argument("--trials", type=int, default=100)
    p_cl.add_argument("--threads", type=int, default=1)
    p_cl.set_defaults(func=cmd_closeloop)

    p_an = sub.add_parser("analyze", help="post-hoc analyses")
    p_an.add_argument("what", choices=["ipc", "labelmap", "pca", "bifurcation",
                                       "timing", "perturb"])
    p_an.add_argument("--checkpoint")
    p_an.add_argument("--out", default="out")
    p_an.add_argument("--seed", type=int)
    p_an.add_argument("--data")
    p_an.add_argument("--surrogates", type=int, default=100)
    p_an.add_argument("--steps", type=int, default=2000)
    p_an.add_argument("--transient", type=int, default=600)
    p_an.add_argument("--f-min", type=float, default=-1.0)
    p_an.add_argument("--f-max", type=float, default=2.0)
    p_an.add_argument("--f-step", type=float, default=0.05)
    p_an.add_argument("--settle", type=int, default=400)
    p_an.add_argument("--post", type=int, default=600)
    p_an.add_argument("--window", type=int, default=200)
    p_an.add_argument("--threshold", type=float, default=1e-3)
    p_an.add_argument("--slot-step", type=int, default=1)
    p_an.add_argument("--mass-id", type=int, default=None)
    p_an.add_argument("--image-index", type=int, default=0)
    p_an.add_argument("--extent", type=float, default=None)
    p_an.add_argument("--cells", type=int, default=21)
    p_an.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
