"""Post-hoc analytics: processing capacity, label maps, PCA, sweeps.

The capacity profile decomposes recorded system states onto products of
normalised Legendre polynomials of delayed inputs (inputs rescaled from
(0,1) to (-1,1)).  For a basis function z and the centred state matrix X,
the captured capacity is ||P_X z||^2 / ||z||^2 with P_X the orthogonal
projector onto X's column space, so each entry lies in [0,1] and the total
over any orthonormal family is bounded by rank(X).  Entries are zeroed
below a significance threshold taken from input-shuffled surrogates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from . import autodiff as ad
from . import physics as ph


class AnalysisError(ValueError):
    pass


class InsufficientDataError(AnalysisError):
    pass


class DegenerateDataError(AnalysisError):
    pass


# ---------------------------------------------------------------- helpers

def rankdata(x):
    """Average ranks (ties shared), 1-based."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y):
    rx, ry = rankdata(x), rankdata(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt((rx ** 2).sum() * (ry ** 2).sum())
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)


def legendre_normalized(degree, x):
    """sqrt(2n+1)-normalised Legendre values P_0..P_degree at x: (len(x), degree+1)."""
    x = np.asarray(x, dtype=float)
    out = np.ones((len(x), degree + 1))
    if degree >= 1:
        out[:, 1] = x
    for n in range(1, degree):
        out[:, n + 1] = ((2 * n + 1) * x * out[:, n] - n * out[:, n - 1]) / (n + 1)
    return out * np.sqrt(2 * np.arange(degree + 1) + 1)


def degree_profiles(max_degree, max_delay):
    """Multi-indices {delay: degree} with total degree in [1, max_degree]."""
    delays = range(max_delay + 1)
    profiles = []
    for total in range(1, max_degree + 1):
        for combo in combinations_with_replacement(delays, total):
            prof = {}
            for d in combo:
                prof[d] = prof.get(d, 0) + 1
            profiles.append(tuple(sorted(prof.items())))
    return profiles


# ---------------------------------------------------------------- capacity

@dataclass
class IpcProfile:
    entries: list                 # (profile, capacity after thresholding)
    raw: list                     # capacities before thresholding
    thresholds: list
    total: float
    rank: int
    max_degree: int
    max_delay: int

    def by_degree(self):
        sums = {}
        for (prof, cap) in self.entries:
            deg = sum(d for _, d in prof)
            sums[deg] = sums.get(deg, 0.0) + cap
        return sums

    def capacity_of(self, profile):
        key = tuple(sorted(profile.items())) if isinstance(profile, dict) else tuple(profile)
        for prof, cap in self.entries:
            if prof == key:
                return cap
        raise KeyError(profile)

    def rows(self):
        return [
            {"profile": list(prof), "capacity": cap, "raw": raw, "threshold": thr}
            for (prof, cap), raw, thr in zip(self.entries, self.raw, self.thresholds)
        ]


def _basis_matrix(u_scaled, profiles, max_degree, max_delay):
    t_eff = len(u_scaled) - max_delay
    polys = legendre_normalized(max_degree, u_scaled)
    z = np.ones((t_eff, len(profiles)))
    for col, prof in enumerate(profiles):
        acc = np.ones(t_eff)
        for delay, deg in prof:
            sl = polys[max_delay - delay:max_delay - delay + t_eff, deg]
            acc = acc * sl
        z[:, col] = acc
    return z


def ipc(states, inputs, max_degree=3, max_delay=5, surrogates=100,
        threshold_percentile=99.0, seed=0, min_rows_per_basis=20):
    """Capacity profile of ``states`` (T, D) driven by i.i.d. ``inputs`` (T,).

    Inputs are raw (0,1) draws; delays are in task steps.  Surrogate
    thresholds come from input-shuffled capacities at the given percentile.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    inputs = np.asarray(inputs, dtype=float)
    if len(states) != len(inputs):
        raise AnalysisError("states and inputs must have equal length")
    profiles = degree_profiles(max_degree, max_delay)
    t_eff = len(inputs) - max_delay
    if t_eff < min_rows_per_basis * len(profiles):
        raise InsufficientDataError(
            f"{t_eff} usable rows for {len(profiles)} basis functions; need "
            f">= {min_rows_per_basis * len(profiles)}")

    u_scaled = 2.0 * inputs - 1.0
    x = states[max_delay:]
    x = x - x.mean(axis=0)
    svd_u, svals, _ = np.linalg.svd(x, full_matrices=False)
    tol = max(x.shape) * np.finfo(float).eps * (svals[0] if len(svals) else 0.0)
    rank = int(np.sum(svals > tol))
    basis_u = svd_u[:, :rank]

    def capacities(u_arr):
        z = _basis_matrix(u_arr, profiles, max_degree, max_delay)
        z = z - z.mean(axis=0)
        norms = np.einsum("ij,ij->j", z, z)
        proj = basis_u.T @ z
        caps = np.einsum("ij,ij->j", proj, proj) / np.where(norms > 0, norms, 1.0)
        return np.clip(caps, 0.0, 1.0)

    raw = capacities(u_scaled)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x1bc)))
    surro = np.empty((surrogates, len(profiles)))
    for s in range(surrogates):
        surro[s] = capacities(rng.permutation(u_scaled))
    thresholds = np.percentile(surro, threshold_percentile, axis=0)
    kept = np.where(raw > thresholds, raw, 0.0)
    entries = list(zip(profiles, kept.tolist()))
    return IpcProfile(entries=entries, raw=raw.tolist(),
                      thresholds=thresholds.tolist(), total=float(kept.sum()),
                      rank=rank, max_degree=max_degree, max_delay=max_delay)


# ---------------------------------------------------------------- PCA

def pca_project(data, k=2):
    """Mean-centred projection onto the top-k principal axes."""
    data = np.asarray(data, dtype=float)
    centered = data - data.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = max(centered.shape) * np.finfo(float).eps * (s[0] if len(s) else 0.0)
    if int(np.sum(s > tol)) < k:
        raise DegenerateDataError(f"data rank < {k}")
    var = s ** 2
    explained = var[:k] / var.sum()
    return centered @ vt[:k].T, explained


def separation_score(points, labels):
    """Mean inter-label centroid distance over mean intra-label spread."""
    points = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    centroids, spreads = [], []
    for lbl in np.unique(labels):
        cluster = points[labels == lbl]
        c = cluster.mean(axis=0)
        centroids.append(c)
        spreads.append(np.linalg.norm(cluster - c, axis=1).mean())
    centroids = np.stack(centroids)
    n = len(centroids)
    inter = [np.linalg.norm(centroids[i] - centroids[j])
             for i in range(n) for j in range(i + 1, n)]
    return float(np.mean(inter) / max(np.mean(spreads), 1e-12))


# ---------------------------------------------------------------- label maps

@dataclass
class LabelMap:
    grid_x: np.ndarray            # cell-centre offsets
    grid_y: np.ndarray
    labels: np.ndarray            # (ny, nx) winning label, -1 for invalid cells
    source_label: int
    mass_id: int

    @property
    def size(self):
        valid = self.labels >= 0
        if not valid.any():
            return 0.0
        return float(np.mean(self.labels[valid] == self.source_label))


def default_map_extent(topology):
    """A quarter of the spacing between neighbouring movable ring points."""
    ids = [i for i in topology.movable_ids if i != topology.cmp_index]
    pts = topology.points[ids]
    dists = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    np.fill_diagonal(dists, np.inf)
    return 0.25 * float(dists.min())


def label_map(topology, body, base_positions, targets, source_label, mass_id,
              *, extent, cells=21, steps=100):
    """Displace one movable point on a grid and classify each transient.

    ``base_positions`` are the trained initial positions (N, 2);
    ``targets`` the (10, T, 2) digit polylines.  Cells whose rollout goes
    non-finite are marked invalid (-1) and excluded from the map size.
    """
    from .tasks import digits
    if not topology.movable[mass_id] or mass_id == topology.cmp_index:
        raise AnalysisError("mass_id must name a movable, non-central point")
    offsets = np.linspace(-extent, extent, cells)
    batch = []
    for dy in offsets:
        for dx in offsets:
            pos = np.array(base_positions)
            pos[mass_id] += [dx, dy]
            batch.append(pos)
    batch = np.stack(batch)
    labels = np.full(cells * cells, -1, dtype=int)
    try:
        traj, _ = digits.draw_rollout(topology, body, None, None, steps=steps,
                                      state_override=batch)
        errs = digits.trajectory_errors(traj, targets)
        labels[:] = np.argmin(errs, axis=0)
    except ph.InstabilityError:
        for i in range(len(batch)):
            try:
                traj, _ = digits.draw_rollout(topology, body, None, None,
                                              steps=steps,
                                              state_override=batch[i][None])
                errs = digits.trajectory_errors(traj, targets)
                labels[i] = int(np.argmin(errs[:, 0]))
            except ph.InstabilityError:
                labels[i] = -1
    return LabelMap(offsets, offsets, labels.reshape(cells, cells),
                    source_label, mass_id)


# ---------------------------------------------------------------- sweeps

def local_maxima(series, suppress=1):
    """Strict local maxima by derivative sign change, with +-``suppress``
    non-maximum suppression."""
    series = np.asarray(series, dtype=float)
    idx = []
    for i in range(1, len(series) - 1):
        lo = max(0, i - suppress)
        hi = min(len(series), i + suppress + 1)
        if series[i] >= series[lo:hi].max() and series[i] > series[i + 1] \
                and series[i] > series[i - 1]:
            idx.append(i)
    return np.array(idx, dtype=int)


@dataclass
class BifurcationResult:
    forces: np.ndarray
    extrema_x: list = field(default_factory=list)   # arrays per force value
    extrema_y: list = field(default_factory=list)
    diverged: list = field(default_factory=list)


def bifurcation_sweep(run_for_force, forces):
    """Collect CMP local maxima per wind force.

    ``run_for_force(F) -> (x_series, y_series)`` rolls the system past its
    transient and returns post-transient CMP coordinates; non-finite
    rollouts are recorded as diverged rather than raised.
    """
    out = BifurcationResult(np.asarray(forces, dtype=float))
    for f in out.forces:
        try:
            xs, ys = run_for_force(float(f))
            out.extrema_x.append(xs[local_maxima(xs)])
            out.extrema_y.append(ys[local_maxima(ys)])
            out.diverged.append(False)
        except ph.InstabilityError:
            out.extrema_x.append(np.array([]))
            out.extrema_y.append(np.array([]))
            out.diverged.append(True)
    return out


def switching_timing_sweep(run_for_slot, slots, error_threshold):
    """Classify post-switch convergence per onset slot.

    ``run_for_slot(n) -> float`` returns the settled post-switch error
    against the with-wind target.  Converged means error < threshold.
    """
    results = {}
    for n in slots:
        err = run_for_slot(int(n))
        results[int(n)] = {"error": float(err),
                           "converged": bool(err < error_threshold)}
    return results


def mean_speed(trace, axis=0, window=None):
    """Mean over a step window of the all-points-average velocity component."""
    if trace.velocities is None:
        raise AnalysisError("trace does not record velocities")
    v = trace.velocities[..., axis].mean(axis=-1)
    if window is not None:
        lo, hi = window
        v = v[lo:hi]
    if v.size == 0:
        raise AnalysisError("empty speed window")
    return float(v.mean())
