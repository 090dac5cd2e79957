"""Lissajous curve drawing with a sine-wave-driven body.

The CMP of a double-circle body is trained to trace

    x(theta) = X * cos(alpha * theta),   y(theta) = Y * sin(beta * theta + delta)

with theta = omega * t, so one full figure takes one generator period
2*pi/omega.  X and Y default to 1/20 of the body diameter.  Training
episodes start from the rest geometry; the loss covers a window after a
fixed washout so the steady cycle, not the release transient, is fitted.

Behavioural switching adds a constant x-direction "wind" force on every
mass point.  While the wind blows the target is either the same curve
displaced along x or an alternate curve; the onset time is drawn from a
100-slot grid over one generator period, randomly per episode (or pinned,
for the fixed-timing variant).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .. import brains as br
from .. import physics as ph
from .. import topology as topo
from .. import training as tr

DIAMETER = 2.0 * topo.OUTER_RADIUS
AMPLITUDE = DIAMETER / 20.0


@dataclass(frozen=True)
class LissajousSpec:
    alpha: float = 1.0
    beta: float = 2.0
    delta: float = 0.0
    x_amp: float = AMPLITUDE
    y_amp: float = AMPLITUDE

    def __post_init__(self):
        if self.x_amp <= 0 or self.y_amp <= 0:
            raise ValueError("curve amplitudes must be positive")


def lissajous_target(spec, theta, offset=(0.0, 0.0)):
    """Curve point(s) at phase ``theta`` (omega*t), offset to the CMP rest."""
    theta = np.asarray(theta, dtype=float)
    x = spec.x_amp * np.cos(spec.alpha * theta)
    y = spec.y_amp * np.sin(spec.beta * theta + spec.delta)
    return np.stack([x, y], axis=-1) + np.asarray(offset, dtype=float)


@dataclass(frozen=True)
class WindSpec:
    """Constant x-force switching input and its target change."""

    magnitude: float = 1.0
    alternate: LissajousSpec | None = None   # curve while the wind blows
    shift: float = AMPLITUDE                 # x-displacement when no alternate
    slots: int = 100                         # onset grid over one period

    def onset_time(self, t0, omega, slot):
        return t0 + (2.0 * np.pi / omega) * (slot / self.slots)

    def target_with_wind(self, base, theta, offset=(0.0, 0.0)):
        if self.alternate is not None:
            return lissajous_target(self.alternate, theta, offset)
        return lissajous_target(base, theta, np.asarray(offset) + [self.shift, 0.0])


@dataclass
class LissajousConfig:
    spec: LissajousSpec = field(default_factory=LissajousSpec)
    segment: int = 100       # steps per update: one generator period
    updates: int = 400
    amplitude_init: float = 0.5
    washout: int = 300       # evaluation: steps dropped before scoring


def make_system(topology, seed, amplitude_init=0.5):
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x115a)))
    body = {
        "k": rng.uniform(1.0, 100.0, topology.n_springs),
        "d": rng.uniform(0.0, 10.0, topology.n_springs),
        "l": topology.rest_lengths(),
    }
    swg = br.SineWaveGenerator.init(topology.n_springs, int(rng.integers(2**31)),
                                    amplitude_init)
    return body, swg


def cmp_trajectory_vars(topology, res, steps):
    sel = topology.selector([topology.cmp_index])
    return [ad.reshape(ad.lincomb(sel, res.positions[s]), (2,)) for s in steps]


def _segment_update(topology, params, swg, state, segment, target_fn, rates,
                    run, wind_state=None):
    """One continuing-rollout update; returns the segment's final state."""
    tape = ad.Tape()
    pv = tape.parameters(params)
    body_v = {c: pv[c] for c in ("k", "d", "l")}

    def control(t, lengths):
        return swg.modulate(pv, t, pv["l"])

    external = None
    if wind_state is not None:
        field_arr = ph.wind_field(topology, wind_state["magnitude"])

        def external(step, t):
            return field_arr if wind_state["is_on"](t) else None

    res = ph.rollout(topology, body_v, segment, tape=tape, control=control,
                     external=external, state0=state, record=("positions",))
    traj = ad.stack(cmp_trajectory_vars(topology, res, range(1, segment + 1)),
                    axis=0)
    target = target_fn(res.trace.times[1:])
    loss = tr.mse(traj, target)
    grads = tape.backward(loss)
    norms = tr.apply_update(params, grads, rates)
    run.log(loss.value, norms)
    out = res.final_state
    out.accel = None  # parameters changed; recompute the force balance
    return out


def train_single(topology, body, swg, config, seed, rates=None, run=None):
    """Embed the curve as a limit cycle: the rollout continues across
    updates (one generator period per update) against the absolute-phase
    target, so the steady cycle rather than the release transient is fitted."""
    rates = rates or tr.default_rates("lissajous-single")
    run = run or tr.TrainRun(seed=seed, config={"task": "lissajous-single"})
    params = {**body, **swg.params()}
    offset = topology.points[topology.cmp_index]
    state = ph.rest_state(topology)

    def target_fn(times):
        return lissajous_target(config.spec, swg.omega * times, offset)

    for _ in range(config.updates):
        try:
            state = _segment_update(topology, params, swg, state, config.segment,
                                    target_fn, rates, run)
        except ph.PhysicsError:
            run.skipped_items += 1
            if run.skipped_items > 0.25 * config.updates:
                raise tr.TrainingError("too many diverged segments; rates are "
                                       "off scale for this body")
            state = ph.rest_state(topology)
    return run


def train_switching(topology, body, swg, config, seed, wind, rates=None,
                    run=None, fixed_slot=None, updates=None):
    """Additional training that embeds the with-wind behaviour.

    The wind toggles on and off at times drawn from the 100-slot grid over
    one generator period (a pinned ``fixed_slot`` reproduces the
    fixed-timing variant); the target switches with it.
    """
    rates = rates or tr.default_rates("lissajous-switching")
    run = run or tr.TrainRun(seed=seed, config={"task": "lissajous-switching"})
    params = {**body, **swg.params()}
    offset = topology.points[topology.cmp_index]
    state = ph.rest_state(topology)
    period = 2.0 * np.pi / swg.omega
    slot_rng = np.random.default_rng(np.random.SeedSequence((seed, 0x51a7)))
    n_updates = updates if updates is not None else config.updates

    toggles = []  # ascending wind on/off switch times

    def next_toggle(after):
        hold = int(slot_rng.integers(2, 4))
        slot = fixed_slot if fixed_slot is not None else int(slot_rng.integers(wind.slots))
        return after + period * hold + period * slot / wind.slots

    t_cursor = next_toggle(0.0)
    toggles.append(t_cursor)

    def wind_on(t):
        n_past = np.searchsorted(np.asarray(toggles), t, side="right")
        return bool(n_past % 2 == 1)

    def target_fn(times):
        on = np.array([wind_on(tt) for tt in times])
        base = lissajous_target(config.spec, swg.omega * times, offset)
        alt = wind.target_with_wind(config.spec, swg.omega * times, offset)
        return np.where(on[:, None], alt, base)

    wind_state = {"magnitude": wind.magnitude, "is_on": wind_on}
    for _ in range(n_updates):
        while toggles[-1] < state.time + (config.segment + 1) * ph.DT_DEFAULT:
            toggles.append(next_toggle(toggles[-1]))
        try:
            state = _segment_update(topology, params, swg, state, config.segment,
                                    target_fn, rates, run, wind_state)
        except ph.PhysicsError:
            run.skipped_items += 1
            if run.skipped_items > 0.25 * n_updates:
                raise tr.TrainingError("too many diverged segments; rates are "
                                       "off scale for this body")
            state = ph.rest_state(topology)
    return run


def evaluate(topology, body, swg, config, *, steps=None, wind=None,
             wind_onset=None, record=("positions",)):
    """Open-loop rollout from rest with the trained generator."""
    steps = steps or (config.washout + 4 * config.segment)
    tape = ad.NullTape()
    pv = {k: tape.leaf(v) for k, v in swg.params().items()}
    l_var = tape.leaf(body["l"])

    def control(t, lengths):
        return swg.modulate(pv, t, l_var)

    external = None
    if wind is not None and wind_onset is not None:
        field_arr = ph.wind_field(topology, wind.magnitude)

        def external(step, t):
            return field_arr if t >= wind_onset else None

    res = ph.rollout(topology, body, steps, tape=tape, control=control,
                     external=external, record=record)
    return res


def steady_error(topology, res, spec, swg_omega, skip):
    """MSE of the CMP path against the curve after ``skip`` steps."""
    cmp_xy = res.trace.positions[skip:, topology.cmp_index, :]
    times = res.trace.times[skip:]
    offset = topology.points[topology.cmp_index]
    target = lissajous_target(spec, swg_omega * times, offset)
    return float(np.mean((cmp_xy - target) ** 2))


def phase_aligned_error(trace, topology, spec, omega, skip, offset,
                        dt=ph.DT_DEFAULT):
    """Trajectory MSE minimised over the curve's phase.

    A feedback-driven body carries no clock, so after a disturbance it
    re-enters the cycle at an arbitrary phase; returning is a statement
    about the drawn shape, not about wall-clock alignment.
    """
    cmp_xy = trace.positions[skip:, topology.cmp_index, :]
    times = trace.times[skip:]
    period_steps = max(1, int(round(2.0 * np.pi / omega / dt)))
    shifts = 2.0 * np.pi * np.arange(period_steps) / period_steps
    targets = lissajous_target(spec, omega * times[None, :] + shifts[:, None],
                               offset)                      # (P, T, 2)
    errs = np.mean((cmp_xy[None] - targets) ** 2, axis=(1, 2))
    return float(errs.min())


def dominant_frequencies(trace, topology, skip, dt=ph.DT_DEFAULT):
    """Peak FFT frequency (Hz) of the CMP x and y coordinates."""
    cmp_xy = trace.positions[skip:, topology.cmp_index, :]
    out = []
    for axis in range(2):
        sig = cmp_xy[:, axis] - cmp_xy[:, axis].mean()
        spectrum = np.abs(np.fft.rfft(sig))
        freqs = np.fft.rfftfreq(len(sig), d=dt)
        out.append(float(freqs[np.argmax(spectrum)]))
    return tuple(out)
