"""Caterpillar locomotion under gravity, air drag, and a smooth ground.

Forward training follows a speed ramp v_target(t) = 0.004 * t: parameters
update every 200 simulation steps from the gradient of the squared error
between the segment-mean x-velocity (averaged over all mass points) and
the ramp value at the segment end.  The rollout continues across updates;
only the gradient is truncated at segment boundaries.

Switching training holds v_target = v_max / 2 while a headwind
(F_wind = -1 on every point) blows periodically; the agent must change
gait to keep pace with and without wind.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from .. import brains as br
from .. import physics as ph
from .. import topology as topo
from .. import training as tr

SEGMENT_STEPS = 200          # parameters update every 200 time steps
RAMP_RATE = 0.004            # v_target(t) = 0.004 t
ENV = ph.EnvConfig()


@dataclass
class LocomotionConfig:
    total_steps: int = 16000
    segment: int = SEGMENT_STEPS
    amplitude_init: float = 0.4
    settle_steps: int = 200


def make_system(seed, amplitude_init=0.4):
    body_topology = topo.caterpillar()
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x10c0)))
    body = {
        "k": rng.uniform(1.0, 100.0, body_topology.n_springs),
        "d": rng.uniform(0.0, 10.0, body_topology.n_springs),
        "l": body_topology.rest_lengths(),
    }
    swg = br.SineWaveGenerator.init(body_topology.n_springs,
                                    int(rng.integers(2**31)), amplitude_init)
    return body_topology, body, swg


def settled_state(topology, body, steps=200):
    """Let the unmodulated body come to rest on the ground.

    The clock restarts at zero: settling is preparation, and generator
    phases and wind schedules are defined in experiment time.
    """
    res = ph.rollout(topology, body, steps, env=ENV, record=())
    state = res.final_state
    state.accel = None  # wind/control change the force balance after settling
    state.time = 0.0
    return state


def mean_x_speed_var(res, steps):
    """Segment-mean of the per-step all-point-average x velocity."""
    per_step = [ad.mean(ad.index_last(res.velocities[s], 0)) for s in steps]
    return ad.mean(ad.stack(per_step, axis=0))


def _segment_loss(topology, body_v, swg, pv, state, t_target, segment, tape,
                  external=None):
    l_var = pv["l"]

    def control(t, lengths):
        return swg.modulate(pv, t, l_var)

    res = ph.rollout(topology, body_v, segment, tape=tape, env=ENV,
                     control=control, external=external,
                     state0=state, record=("positions", "velocities"))
    speed = mean_x_speed_var(res, range(1, segment + 1))
    return ad.square(ad.sub(speed, float(t_target))), res


def _run_segments(topology, body, swg, *, segments, segment,
                  target_fn, rates, run, state, wind_fn=None):
    params = {**body, **swg.params()}
    for seg in range(segments):
        t_start = state.time
        tape = ad.Tape()
        pv = tape.parameters(params)
        body_v = {c: pv[c] for c in ("k", "d", "l")}
        v_target = target_fn(t_start + segment * ph.DT_DEFAULT)
        try:
            loss, res = _segment_loss(topology, body_v, swg, pv, state,
                                      v_target, segment, tape, wind_fn)
        except (ph.InstabilityError, ph.SingularityError):
            run.skipped_items += 1
            state = settled_state(topology, body)
            continue
        grads = tape.backward(loss)
        norms = tr.apply_update(params, grads, rates)
        run.log(loss.value, norms)
        state = res.final_state
        state.accel = None  # parameters changed; recompute the force balance
    return state


def train_forward(topology, body, swg, config, seed, rates=None, run=None):
    rates = rates or tr.default_rates("locomotion-forward")
    run = run or tr.TrainRun(seed=seed, config={"task": "locomotion-forward"})
    state = settled_state(topology, body, config.settle_steps)
    state.time = 0.0
    segments = config.total_steps // config.segment
    _run_segments(topology, body, swg, segments=segments,
                  segment=config.segment, target_fn=lambda t: RAMP_RATE * t,
                  rates=rates, run=run, state=state)
    return run


def train_switching(topology, body, swg, config, seed, v_target, *,
                    wind_magnitude=-1.0, wind_period=5.0, rates=None, run=None,
                    total_steps=8000):
    """Hold a constant target speed while the wind toggles periodically."""
    rates = rates or tr.default_rates("locomotion-switching")
    run = run or tr.TrainRun(seed=seed, config={"task": "locomotion-switching"})
    state = settled_state(topology, body, config.settle_steps)
    state.time = 0.0
    field_arr = ph.wind_field(topology, wind_magnitude)

    def wind_fn(step, t):
        return field_arr if (t // wind_period) % 2 == 1 else None

    segments = total_steps // config.segment
    _run_segments(topology, body, swg, segments=segments,
                  segment=config.segment, target_fn=lambda t: v_target,
                  rates=rates, run=run, state=state, wind_fn=wind_fn)
    return run


def evaluate_speed(topology, body, swg, *, duration=10.0, state=None,
                   wind_magnitude=0.0, wind_onset=None, record_velocities=True):
    """Plain rollout; returns (trace, mean x-speed over the duration)."""
    steps = int(round(duration / ph.DT_DEFAULT))
    tape = ad.NullTape()
    pv = {k: tape.leaf(v) for k, v in swg.params().items()}
    l_var = tape.leaf(body["l"])

    def control(t, lengths):
        return swg.modulate(pv, t, l_var)

    external = None
    if wind_magnitude != 0.0:
        field_arr = ph.wind_field(topology, wind_magnitude)
        onset = wind_onset if wind_onset is not None else 0.0

        def external(step, t):
            return field_arr if t >= onset else None

    state0 = state or settled_state(topology, body)
    res = ph.rollout(topology, body, steps, env=ENV, control=control,
                     external=external, state0=state0,
                     record=("positions", "velocities"))
    speed = float(res.trace.velocities[1:, :, 0].mean())
    return res, speed


def achieved_max_speed(topology, body, swg, *, duration=10.0):
    res, speed = evaluate_speed(topology, body, swg, duration=duration)
    per_step = res.trace.velocities[1:, :, 0].mean(axis=1)
    window = max(1, int(1.0 / ph.DT_DEFAULT))
    means = np.convolve(per_step, np.ones(window) / window, mode="valid")
    return float(means.max())
