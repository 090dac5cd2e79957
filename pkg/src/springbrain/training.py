"""Gradient training through the physics: losses, rates, and the update loop.

Parameters are updated by plain gradient descent, one learning rate per
parameter class, and the physical parameters (spring constant, damping,
rest length) are clamped at zero after every step.  Batched items run on a
single tape with a mean-reduced loss; by linearity of the adjoint this is
identical to averaging per-item gradients, which the test suite checks
explicitly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .physics import InstabilityError, SingularityError

BODY_CLASSES = ("k", "d", "l")

# parameter classes keyed by (body class | brain slot prefix)
_CLASS_OF_PREFIX = {
    "k": "k", "d": "d", "l": "l",
    "lil": "lil", "mlp": "mlp",
    "swg.A": "amplitude", "swg.phi": "phase",
    "fl": "fl", "readout": "readout",
}

# per-task defaults for every trainable class
RATE_TABLE = {
    "mnist": {"k": 1e4, "d": 1e3, "l": 1e0, "lil": 1e0, "mlp": 1e0, "readout": 1e0},
    "timeseries": {"k": 1e4, "d": 1e3, "l": 1e1, "lil": 1e-1, "mlp": 1e-1},
    "lissajous-single": {"k": 1e4, "d": 1e3, "l": 1e1, "amplitude": 1e1, "phase": 1e2},
    "lissajous-switching": {"k": 1e3, "d": 1e2, "l": 1e0, "amplitude": 1e0, "phase": 1e1},
    "lissajous-closedloop": {"k": 1e4, "d": 1e3, "l": 1e0, "amplitude": 1e0, "phase": 1e1,
                             "fl": 1e0},
    "locomotion-forward": {"k": 1e2, "d": 1e0, "l": 1e-1, "amplitude": 1e-3, "phase": 1e-2},
    "locomotion-switching": {"k": 1e0, "d": 1e-2, "l": 1e-3, "amplitude": 1e-5, "phase": 1e-4},
}


class TrainingError(RuntimeError):
    pass


def param_class(slot):
    """Map a parameter slot name to its learning-rate class."""
    for prefix, cls in _CLASS_OF_PREFIX.items():
        if slot == prefix or slot.startswith(prefix + "."):
            return cls
    raise TrainingError(f"no learning-rate class for slot '{slot}'")


@dataclass
class LearningRates:
    rates: dict

    def __getitem__(self, cls):
        if cls not in self.rates:
            raise TrainingError(f"no rate for parameter class '{cls}'")
        return self.rates[cls]

    def scaled(self, factor):
        return LearningRates({k: v * factor for k, v in self.rates.items()})

    def override(self, **kwargs):
        out = dict(self.rates)
        out.update(kwargs)
        return LearningRates(out)


def default_rates(task):
    if task not in RATE_TABLE:
        raise TrainingError(f"unknown task '{task}' (no learning-rate defaults)")
    return LearningRates(dict(RATE_TABLE[task]))


# ---------------------------------------------------------------- losses

def mse(output, target):
    """Mean squared componentwise error; ``target`` is a constant."""
    return ad.mean(ad.square(ad.sub(output, np.asarray(target, dtype=float))))


def trajectory_mse(position_vars, target):
    """MSE between a stack of per-step positions and a target polyline."""
    return mse(ad.stack(position_vars, axis=0), target)


def cross_entropy(logits, labels):
    return ad.softmax_cross_entropy(logits, labels)


def composite(traj_loss, feedback_loss, alpha):
    """Trajectory loss plus ``alpha`` times the controller-agreement loss."""
    if alpha < 0:
        raise TrainingError("composite weighting must be >= 0")
    return ad.add(traj_loss, ad.mul(feedback_loss, float(alpha)))


# ---------------------------------------------------------------- updates

def apply_update(params, grads, rates):
    """In-place descent step with the non-negativity projection.

    Raises on non-finite gradients, naming the offending class.  Returns
    per-class gradient norms for logging.
    """
    norms = {}
    for slot, theta in params.items():
        g = np.asarray(grads[slot])
        cls = param_class(slot)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in class '{cls}' (slot '{slot}')")
        theta -= rates[cls] * g
        norms[cls] = norms.get(cls, 0.0) + float(np.sum(g * g))
        if cls in BODY_CLASSES:
            np.maximum(theta, 0.0, out=theta)
    return {cls: float(np.sqrt(v)) for cls, v in norms.items()}


@dataclass
class TrainRun:
    """Loss history and provenance of one training run."""

    seed: int
    config: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    skipped_items: int = 0
    snapshots: dict = field(default_factory=dict)

    @property
    def updates(self):
        return len(self.loss_history)

    def log(self, loss, norms):
        self.loss_history.append(float(loss))
        self.grad_norms.append(norms)

    def snapshot(self, tag, params):
        self.snapshots[tag] = {k: np.array(v) for k, v in params.items()}

    def write_csv(self, path):
        classes = sorted({c for row in self.grad_norms for c in row})
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["update", "loss"] + [f"grad_norm_{c}" for c in classes])
            for i, (loss, norms) in enumerate(zip(self.loss_history, self.grad_norms)):
                writer.writerow([i, repr(loss)] + [repr(norms.get(c, 0.0)) for c in classes])

    def summary(self):
        return {
            "seed": self.seed,
            "updates": self.updates,
            "final_loss": self.loss_history[-1] if self.loss_history else None,
            "initial_loss": self.loss_history[0] if self.loss_history else None,
            "skipped_items": self.skipped_items,
            "config": self.config,
        }


def train_step_items(params, item_builders, rates, run=None):
    """One update from a batch of independent loss builders.

    All items share one fresh tape; the batch loss is the mean of the item
    losses, which equals the mean of per-item gradients by adjoint
    linearity.  An item whose rollout diverges is skipped (its recorded
    nodes stay unreachable, contributing exactly zero) and counted; more
    than half of a batch diverging aborts the run, since that signals rates
    far off scale.
    """
    tape = ad.Tape()
    pv = tape.parameters(params)
    losses, failed = [], 0
    for build in item_builders:
        try:
            losses.append(build(tape, pv))
        except (InstabilityError, SingularityError):
            failed += 1
    if run is not None:
        run.skipped_items += failed
    if failed > 0.5 * len(item_builders):
        raise TrainingError(
            f"{failed}/{len(item_builders)} batch items diverged; rates are off scale")
    loss = losses[0] if len(losses) == 1 else ad.mean(ad.stack(losses, axis=0))
    grads = tape.backward(loss)
    norms = apply_update(params, grads, rates)
    if run is not None:
        run.log(loss.value, norms)
    return float(loss.value)


def train_step(params, build_loss, rates, run=None):
    """One update from a single loss builder (possibly array-batched)."""
    return train_step_items(params, [build_loss], rates, run)


def save_params(path, params, meta=None):
    doc = {
        "meta": meta or {},
        "shapes": {k: list(np.asarray(v).shape) for k, v in params.items()},
        "values": {k: np.asarray(v).reshape(-1).tolist() for k, v in params.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_params(path):
    with open(path) as fh:
        doc = json.load(fh)
    return {k: np.array(v, dtype=float).reshape(doc["shapes"][k])
            for k, v in doc["values"].items()}, doc.get("meta", {})
