"""Forces, Velocity Verlet integration, and differentiable rollouts.

The force on point i from the spring to point j is

    F_ij = -k * (r_i - r_j)/||r_i - r_j|| * (||r_i - r_j|| - l) - d * (v_i - v_j)

and the point force is the sum over incident springs plus, when the
environment is enabled, gravity -m*g, air drag -a*v, and a smooth ground
reaction [0, c*exp(-c*r_y)].

Integration uses Velocity Verlet with the damping (and drag) velocity taken
from the *previous* step when evaluating the acceleration at the new
positions: a(t+dt) = F(r(t+dt), v(t)).  This keeps the update explicit and
the recorded graph acyclic; it is the one canonical convention used
everywhere, including the gradient path.

Rollouts run on a recording tape (for training) or a NullTape (for plain
evaluation); both follow the identical floating-point path.  Arrays may
carry leading batch dimensions: positions are (..., N, 2), spring
quantities (..., S).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .autodiff import NullTape, Tape, Var

DT_DEFAULT = 0.01
GROUND_EXP_CAP = 50.0  # exponent clamp; zero gradient beyond

POINT_MASS = 1.0  # all masses fixed at one


class PhysicsError(RuntimeError):
    pass


class SingularityError(PhysicsError):
    """Two spring endpoints coincided; the direction vector is undefined."""

    def __init__(self, step):
        self.step = step
        super().__init__(f"coincident spring endpoints at step {step}")


class InstabilityError(PhysicsError):
    """The integration produced non-finite state."""

    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite state at step {step}")


@dataclass(frozen=True)
class EnvConfig:
    """Locomotion environment: gravity, linear air drag, exponential ground.

    ``friction`` adds a smoothed kinetic friction
    -friction * min(F_ground_y, friction_cap) * tanh(v_x / friction_vel).
    Without a tangential ground force the all-points mean x-velocity is a
    conserved quantity (spring forces cancel pairwise and every other force
    is vertical or linear in v), so no gait could ever produce net
    translation.  The cap (default: one point's weight) keeps contact-force
    spikes from turning arbitrary kneading into thrust; net motion then
    requires an actual gait that unloads the recovering contacts.
    """

    gravity: tuple = (0.0, -9.81)
    air: float = 0.1
    ground: float = 10.0
    friction: float = 1.0
    friction_vel: float = 0.2
    friction_cap: float = 2.0 * 9.81
    enabled: bool = True

    def __post_init__(self):
        if self.enabled:
            if self.air < 0:
                raise ValueError("air coefficient must be >= 0")
            if self.ground <= 0:
                raise ValueError("ground constant must be > 0")
            if self.friction < 0:
                raise ValueError("friction coefficient must be >= 0")


ENV_OFF = EnvConfig(enabled=False)


@dataclass
class SimState:
    """Positions/velocities of every point at one instant (plain arrays)."""

    positions: np.ndarray   # (..., N, 2)
    velocities: np.ndarray  # (..., N, 2)
    time: float = 0.0
    accel: np.ndarray | None = None  # carried a(t); None at a cold start


def rest_state(topology, batch_shape=()):
    pos = np.broadcast_to(topology.points, batch_shape + topology.points.shape).copy()
    return SimState(pos, np.zeros_like(pos), 0.0, None)


@dataclass
class Trace:
    """Per-step record of one rollout (row 0 is the initial state)."""

    times: np.ndarray
    positions: np.ndarray | None = None
    velocities: np.ndarray | None = None
    lengths: np.ndarray | None = None
    control: np.ndarray | None = None

    def __len__(self):
        return len(self.times)


@dataclass
class RolloutResult:
    trace: Trace
    final_state: SimState
    tape: Tape
    # per-step Vars (length T+1 lists); loss terms are assembled from these
    positions: list | None = None
    velocities: list | None = None
    lengths: list | None = None
    control: list | None = None


def spring_force(r_i, r_j, v_i, v_j, k, d, l):
    """Force on endpoint i, and on endpoint j (its negation)."""
    diff = np.asarray(r_i, dtype=float) - np.asarray(r_j, dtype=float)
    dist = np.linalg.norm(diff)
    if dist == 0.0:
        raise SingularityError(step=0)
    f_i = -k * (diff / dist) * (dist - l) - d * (np.asarray(v_i, float) - np.asarray(v_j, float))
    return f_i, -f_i


def _edge_lengths(tape, topology, pos):
    inc_t = topology.incidence().T
    diff = ad.lincomb(inc_t, pos)                      # (..., S, 2)
    inv = ad.inv_norm2(diff)                           # (..., S)
    sumsq = ad.sum_(ad.mul(diff, diff), axis=-1)
    dist = ad.mul(sumsq, inv)
    return diff, inv, dist


def _expand_last(x):
    return ad.reshape(x, x.value.shape + (1,))


def _net_force(tape, topology, body, pos, vel_damp, mod_lengths, env, ext,
               edges=None):
    """Per-point force (..., N, 2); fixed points receive exactly zero."""
    inc = topology.incidence()
    diff, inv, dist = edges if edges is not None else _edge_lengths(tape, topology, pos)
    dvel = ad.lincomb(inc.T, vel_damp)
    stretch = ad.sub(dist, mod_lengths)
    coef = ad.mul(body["k"], stretch)
    unit = ad.mul(diff, _expand_last(inv))
    f_edge = ad.neg(ad.add(ad.mul(unit, _expand_last(coef)),
                           ad.mul(dvel, _expand_last(body["d"]))))
    force = ad.lincomb(inc, f_edge)
    if env.enabled:
        grav = np.asarray(env.gravity, dtype=float) * POINT_MASS
        force = ad.add(force, grav)
        force = ad.sub(force, ad.mul(vel_damp, env.air))
        r_y = ad.index_last(pos, 1)
        expo = ad.clip_max(ad.mul(r_y, -env.ground), GROUND_EXP_CAP)
        f_ground = ad.mul(ad.exp(expo), env.ground)
        if env.friction:
            v_x = ad.index_last(vel_damp, 0)
            slip = ad.tanh(ad.mul(v_x, 1.0 / env.friction_vel))
            grip = ad.clip_max(f_ground, env.friction_cap)
            f_fric = ad.mul(ad.mul(grip, slip), -env.friction)
            force = ad.add(force, ad.pack_last(f_fric, f_ground))
        else:
            force = ad.add(force, ad.pack_last(np.zeros(f_ground.value.shape), f_ground))
    if ext is not None:
        force = ad.add(force, ext)
    return ad.mul(force, topology.movable_mask())


def _lift_body(tape, body):
    out = {}
    for key in ("k", "d", "l"):
        v = body[key]
        out[key] = v if isinstance(v, Var) else tape.leaf(v)
    return out


def verlet_step(state, topology, body, env=ENV_OFF, ext_t=None, ext_next=None,
                dt=DT_DEFAULT, control=None):
    """One plain (non-recording) Velocity Verlet step; returns a SimState.

    Carries a(t) in the state when available; otherwise computes it with the
    cold-start convention v(t - dt) = v(t).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    tape = NullTape()
    body_v = _lift_body(tape, body)
    pos = tape.leaf(state.positions)
    vel = tape.leaf(state.velocities)

    def ctl(step_t, lengths):
        if control is None:
            return body_v["l"]
        out = control(step_t, lengths)
        return body_v["l"] if out is None else out

    if state.accel is None:
        _, _, dist0 = _edge_lengths(tape, topology, pos)
        acc = _net_force(tape, topology, body_v, pos, vel,
                         ctl(state.time, dist0), env,
                         None if ext_t is None else tape.leaf(ext_t))
    else:
        acc = tape.leaf(state.accel)
    new_pos, new_vel, new_acc, aux = _verlet_core(
        tape, topology, body_v, pos, vel, acc, env,
        None if ext_next is None else tape.leaf(ext_next),
        state.time + dt, dt, ctl)
    if not np.all(np.isfinite(new_pos.value)) or not np.all(np.isfinite(new_vel.value)):
        raise InstabilityError(step=0)
    return SimState(new_pos.value, new_vel.value, state.time + dt, new_acc.value)


def _verlet_core(tape, topology, body, pos, vel, acc, env, ext_next, t_next, dt, ctl):
    """r(t+dt) = r + v dt + a dt^2/2;  v(t+dt) = v + (a + a(t+dt)) dt/2."""
    mask = topology.movable_mask()
    dpos = ad.add(ad.mul(vel, dt), ad.mul(acc, 0.5 * dt * dt))
    new_pos = ad.add(pos, ad.mul(dpos, mask))
    edges = _edge_lengths(tape, topology, new_pos)
    mod = ctl(t_next, edges[2])
    new_acc = _net_force(tape, topology, body, new_pos, vel, mod, env, ext_next,
                         edges=edges)
    dvel = ad.mul(ad.add(acc, new_acc), 0.5 * dt)
    new_vel = ad.add(vel, ad.mul(dvel, mask))
    return new_pos, new_vel, new_acc, {"lengths": edges[2], "control": mod}


def rollout(topology, body, steps, *, dt=DT_DEFAULT, tape=None, env=ENV_OFF,
            control=None, external=None, state0=None,
            record=("positions", "lengths"), check_every=1):
    """Integrate ``steps`` Velocity Verlet steps, recording a Trace.

    body        dict with "k", "d", "l" — Vars on ``tape`` or plain arrays.
    control     callable (t, lengths Var) -> modulated rest lengths Var, or
                None for unmodulated springs.
    external    callable (step, t) -> per-point force (..., N, 2) array or
                Var, or None.
    state0      initial SimState (defaults to the rest geometry).

    Returns a RolloutResult; when ``tape`` records, the per-step lists hold
    the Vars needed to assemble losses.  Deterministic for fixed inputs.
    """
    if tape is None:
        tape = NullTape()
    body_v = _lift_body(tape, body)
    state0 = state0 or rest_state(topology)
    pos = state0.positions if isinstance(state0.positions, Var) \
        else tape.leaf(state0.positions)
    vel = state0.velocities if isinstance(state0.velocities, Var) \
        else tape.leaf(state0.velocities)
    t0 = state0.time

    def ctl(t, lengths):
        if control is None:
            return body_v["l"]
        out = control(t, lengths)
        return body_v["l"] if out is None else out

    def ext_at(step, t):
        if external is None:
            return None
        f = external(step, t)
        if f is None:
            return None
        return f if isinstance(f, Var) else tape.leaf(np.asarray(f, dtype=float))

    times = [t0]
    chan_vals = {c: [] for c in record}
    chan_vars = {c: [] for c in ("positions", "velocities", "lengths", "control")}

    def push(pos_v, vel_v, len_v, ctl_v):
        vals = {"positions": pos_v, "velocities": vel_v, "lengths": len_v,
                "control": ctl_v}
        for c in record:
            chan_vals[c].append(np.array(vals[c].value))
        for c, v in vals.items():
            chan_vars[c].append(v)

    try:
        edges0 = _edge_lengths(tape, topology, pos)
    except ad.DomainError:
        raise SingularityError(step=0)
    mod0 = ctl(t0, edges0[2])
    acc = (tape.leaf(state0.accel) if state0.accel is not None else
           _net_force(tape, topology, body_v, pos, vel, mod0, env,
                      ext_at(0, t0), edges=edges0))
    push(pos, vel, edges0[2], mod0)

    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, steps + 1):
            t_next = t0 + step * dt
            try:
                pos, vel, acc, aux = _verlet_core(
                    tape, topology, body_v, pos, vel, acc, env,
                    ext_at(step, t_next), t_next, dt, ctl)
            except ad.DomainError:
                raise SingularityError(step)
            if step % check_every == 0 and not np.all(np.isfinite(pos.value)):
                raise InstabilityError(step)
            times.append(t_next)
            push(pos, vel, aux["lengths"], aux["control"])

    trace = Trace(times=np.asarray(times))
    for c in record:
        setattr(trace, c, np.stack(chan_vals[c], axis=0))
    final = SimState(np.array(pos.value), np.array(vel.value),
                     times[-1], np.array(acc.value))
    return RolloutResult(trace=trace, final_state=final, tape=tape,
                         positions=chan_vars["positions"],
                         velocities=chan_vars["velocities"],
                         lengths=chan_vars["lengths"],
                         control=chan_vars["control"])


def net_force(state, topology, body, env=ENV_OFF, ext=None):
    """Per-point net force for a plain state (test/diagnostic surface)."""
    tape = NullTape()
    body_v = _lift_body(tape, body)
    pos = tape.leaf(state.positions)
    vel = tape.leaf(state.velocities)
    return _net_force(tape, topology, body_v, pos, vel, body_v["l"], env,
                      None if ext is None else tape.leaf(ext)).value


def mechanical_energy(trace, topology, body):
    """Kinetic plus elastic energy per recorded step (undamped diagnostics)."""
    if trace.velocities is None or trace.lengths is None:
        raise ValueError("trace must record velocities and lengths")
    kin = 0.5 * POINT_MASS * np.sum(trace.velocities ** 2, axis=(-2, -1))
    elastic = 0.5 * np.sum(body["k"] * (trace.lengths - body["l"]) ** 2, axis=-1)
    return kin + elastic


def wind_field(topology, magnitude):
    """Constant x-direction force of the given magnitude on every point."""
    field = np.zeros((topology.n_points, 2))
    field[:, 0] = magnitude
    return field
