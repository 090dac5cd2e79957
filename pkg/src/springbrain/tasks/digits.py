"""Digit classification-and-drawing, and the readout classification variant.

Drawing: the brain maps a 28x28 image to initial-position displacements for
the movable non-central points (the CMP starts pinned at its rest spot);
the body is released at t=0 with no external forces and the CMP trajectory
over the transient is the system output.  The loss is the trajectory MSE
against a per-digit target polyline; a trajectory is classified as the
label whose target it matches with minimum error.

Readout: positions of all movable points are sampled every 0.1 s over a
1 s transient and a linear layer maps the concatenated 20*N_mov-vector to
ten logits (softmax cross-entropy).  The no-body baseline reads the input
layer's output directly, i.e. a two-layer linear network.

Target polylines are a versioned asset resampled to the rollout length by
arc length; they all start at the CMP rest position.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .. import autodiff as ad
from .. import brains as br
from .. import physics as ph
from .. import training as tr

DT = ph.DT_DEFAULT
DRAW_STEPS = 100              # 1 s transient
SAMPLE_EVERY = 10             # readout stores state every 0.1 s
DISPLACEMENT_SCALE = 0.1      # of the outer radius
TARGET_SCALE = 0.2            # digit box -> body units


def _load_asset():
    text = resources.files("springbrain.data").joinpath("digit_targets.json").read_text()
    doc = json.loads(text)
    return {int(k): np.array(v, dtype=float) for k, v in doc["strokes"].items()}


_STROKES = _load_asset()


def resample_polyline(points, n):
    """n points along the polyline at uniform arc-length spacing."""
    seg = np.diff(points, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = s[-1]
    targets = np.linspace(0.0, total, n)
    out = np.empty((n, 2))
    for axis in range(2):
        out[:, axis] = np.interp(targets, s, points[:, axis])
    return out


def digit_target(label, n_points, scale=TARGET_SCALE, offset=(0.0, 0.0)):
    if label not in _STROKES:
        raise ValueError(f"no target stroke for label {label!r}")
    path = resample_polyline(_STROKES[label], n_points) * scale
    return path + np.asarray(offset, dtype=float)


def all_targets(n_points, scale=TARGET_SCALE, offset=(0.0, 0.0)):
    return np.stack([digit_target(lbl, n_points, scale, offset) for lbl in range(10)])


def _drive_ids(topology):
    return [i for i in topology.movable_ids if i != topology.cmp_index]


def initial_positions(topology, brain, images, tape, brain_vars=None,
                      scale=DISPLACEMENT_SCALE):
    """Brain output -> displaced initial positions (B, N, 2); CMP pinned."""
    pv = brain_vars or {k: tape.leaf(v) for k, v in brain.params().items()}
    ids = _drive_ids(topology)
    place = topology.selector(ids).T          # (N, n_drive)
    images = np.atleast_2d(np.asarray(images, dtype=float))
    out = brain.forward(pv, tape.leaf(images))            # (B, 2*n_drive)
    disp = ad.reshape(out, (images.shape[0], len(ids), 2))
    disp = ad.mul(disp, scale * float(np.max(np.linalg.norm(topology.points, axis=1))))
    rest = np.broadcast_to(topology.points, (images.shape[0],) + topology.points.shape)
    return ad.add(ad.lincomb(place, disp), rest)


def draw_rollout(topology, body, brain, images, *, tape=None, steps=DRAW_STEPS,
                 brain_vars=None, state_override=None):
    """Release the displaced body; returns (cmp_traj Var (T, B, 2), result)."""
    tape = tape or ad.NullTape()
    if state_override is not None:
        pos0 = state_override if isinstance(state_override, ad.Var) else tape.leaf(state_override)
        n_batch = pos0.value.shape[0]
    else:
        pos0 = initial_positions(topology, brain, images, tape, brain_vars)
        n_batch = pos0.value.shape[0]
    vel0 = tape.leaf(np.zeros(pos0.value.shape))
    res = ph.rollout(topology, body, steps, tape=tape, record=("positions",),
                     state0=ph.SimState(pos0, vel0))
    sel = topology.selector([topology.cmp_index])
    cmp_steps = [ad.reshape(ad.lincomb(sel, p), (n_batch, 2))
                 for p in res.positions[1:]]
    return ad.stack(cmp_steps, axis=0), res


def trajectory_errors(cmp_traj, targets):
    """Per-label mean squared error: (10, B) for a (T, B, 2) trajectory."""
    traj = cmp_traj.value if isinstance(cmp_traj, ad.Var) else np.asarray(cmp_traj)
    diff = traj[None] - targets[:, :, None, :]   # (10, T, B, 2)
    return np.mean(diff ** 2, axis=(1, 3))


def classify_by_trajectory(cmp_traj, targets):
    return np.argmin(trajectory_errors(cmp_traj, targets), axis=0)


@dataclass
class DrawConfig:
    steps: int = DRAW_STEPS
    target_scale: float = TARGET_SCALE
    batch_size: int = 50
    epochs: int = 40


def train_draw(topology, body, brain, dataset, config, seed, rates=None, run=None):
    """Batch gradient training of the drawing task on a fixed dataset."""
    rates = rates or tr.default_rates("mnist")
    run = run or tr.TrainRun(seed=seed, config={"task": "mnist-draw"})
    params = {**body, **brain.params()}
    brain_slots = list(brain.params())
    targets = all_targets(config.steps, config.target_scale)
    n = len(dataset)
    order_rng = np.random.default_rng(np.random.SeedSequence((seed, 0x0bde4)))

    for epoch in range(config.epochs):
        order = order_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            images = dataset.images[idx]
            batch_targets = np.transpose(targets[dataset.labels[idx]], (1, 0, 2))

            def build(tape, pv):
                body_v = {c: pv[c] for c in ("k", "d", "l")}
                traj, _ = draw_rollout(
                    topology, body_v, brain, images, tape=tape, steps=config.steps,
                    brain_vars={k: pv[k] for k in brain_slots})
                return tr.mse(traj, batch_targets)

            tr.train_step(params, build, rates, run)
    return run


def evaluate_draw(topology, body, brain, dataset, config=None):
    config = config or DrawConfig()
    targets = all_targets(config.steps, config.target_scale)
    traj, _ = draw_rollout(topology, body, brain, dataset.images, steps=config.steps)
    predicted = classify_by_trajectory(traj, targets)
    accuracy = float(np.mean(predicted == dataset.labels))
    per_label_err = trajectory_errors(traj, targets)
    matched = per_label_err[dataset.labels, np.arange(len(dataset))]
    return {"accuracy": accuracy, "predicted": predicted,
            "mean_matched_mse": float(matched.mean())}


# ---------------------------------------------------------------- readout

def make_readout_system(topology, seed, with_body=True):
    """LIL brain plus linear readout; no-body systems read the LIL directly
    (same input-layer width, so the comparison isolates the body)."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5ead)))
    n_drive = len(_drive_ids(topology))
    lil = br.LinearInputLayer.init(784, 2 * n_drive, int(rng.integers(2**31)))
    in_dim = 20 * topology.n_movable if with_body else 2 * n_drive
    readout = br.LinearInputLayer.init(in_dim, 10, int(rng.integers(2**31)),
                                       slot_prefix="readout")
    return lil, readout


def readout_logits(topology, body, lil, readout, images, *, tape=None,
                   brain_vars=None, steps=DRAW_STEPS, sample_every=SAMPLE_EVERY):
    """Sampled-transient features through the readout layer: (B, 10) Var."""
    tape = tape or ad.NullTape()
    pv = brain_vars or {k: tape.leaf(v)
                        for k, v in {**lil.params(), **readout.params()}.items()}
    images = np.atleast_2d(np.asarray(images, dtype=float))
    n_batch = images.shape[0]
    pos0 = initial_positions(topology, lil, images, tape, pv)
    vel0 = tape.leaf(np.zeros(pos0.value.shape))
    res = ph.rollout(topology, body, steps, tape=tape, record=(),
                     state0=ph.SimState(pos0, vel0))
    sel = topology.selector(topology.movable_ids)
    feats = []
    for s in range(sample_every, steps + 1, sample_every):
        mov = ad.lincomb(sel, res.positions[s])           # (B, N_mov, 2)
        feats.append(ad.reshape(mov, (n_batch, 2 * topology.n_movable)))
    return readout.forward(pv, ad.concat(feats, axis=-1))


def nobody_logits(lil, readout, images, *, tape=None, brain_vars=None):
    """Input layer read out directly: a two-layer linear network."""
    tape = tape or ad.NullTape()
    pv = brain_vars or {k: tape.leaf(v)
                        for k, v in {**lil.params(), **readout.params()}.items()}
    images = np.atleast_2d(np.asarray(images, dtype=float))
    return readout.forward(pv, lil.forward(pv, tape.leaf(images)))


@dataclass
class ReadoutConfig:
    epochs: int = 20
    batch_size: int = 50
    with_body: bool = True


def train_readout(topology, body, lil, readout, dataset, config, seed,
                  rates=None, run=None):
    rates = rates or tr.default_rates("mnist")
    run = run or tr.TrainRun(seed=seed, config={"task": "mnist-readout",
                                                "with_body": config.with_body})
    brain_params = {**lil.params(), **readout.params()}
    params = {**body, **brain_params} if config.with_body else dict(brain_params)
    slots = list(brain_params)
    n = len(dataset)
    order_rng = np.random.default_rng(np.random.SeedSequence((seed, 0x0bde5)))

    for epoch in range(config.epochs):
        order = order_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            images, labels = dataset.images[idx], dataset.labels[idx]

            def build(tape, pv):
                bv = {k: pv[k] for k in slots}
                if config.with_body:
                    body_v = {c: pv[c] for c in ("k", "d", "l")}
                    logits = readout_logits(topology, body_v, lil, readout,
                                            images, tape=tape, brain_vars=bv)
                else:
                    logits = nobody_logits(lil, readout, images, tape=tape,
                                           brain_vars=bv)
                return tr.cross_entropy(logits, labels)

            tr.train_step(params, build, rates, run)
    return run


def readout_accuracy(topology, body, lil, readout, dataset, with_body=True,
                     chunk=500):
    correct = 0
    for start in range(0, len(dataset), chunk):
        images = dataset.images[start:start + chunk]
        labels = dataset.labels[start:start + chunk]
        if with_body:
            logits = readout_logits(topology, body, lil, readout, images)
        else:
            logits = nobody_logits(lil, readout, images)
        correct += int(np.sum(np.argmax(logits.value, axis=-1) == labels))
    return correct / len(dataset)
