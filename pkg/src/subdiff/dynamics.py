"""Euler-Maruyama integrators for labeled interacting Brownian particles.

Positions are carried in label order and *unwrapped*; potentials see them
through the minimum-image convention.  The log (Dyson) interaction on a
periodic box is summed over all periodic images, which gives the cotangent
kernel ``(pi/L) cot(pi g / L)`` in place of ``1/g``.

Noise convention: every particle is driven by a standard Brownian motion
``dB`` with ``E[dB^2] = dt``; the free tagged particle has ``E[X_t^2] = t``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .configspace import (
    Configuration,
    EnvironmentState,
    LabeledState,
    label_ordered,
    minimum_image,
    wrap,
)
from .errors import NumericalError
from .io import build_id, dump_json, read_csv, write_csv
from .models import PotentialSpec, _rng, pair_drift, sample_beta_ensemble

log = logging.getLogger(__name__)

SCHEMES = ("euler_maruyama", "adaptive_euler")
MIN_DT = 1e-12


@dataclass(frozen=True)
class IntegratorSpec:
    dt: float = 1e-2
    t_end: float = 1.0
    scheme: str = "euler_maruyama"
    drift_cutoff: float = math.inf
    min_gap_guard: float = 0.0
    record_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.drift_cutoff > 0:
            raise ValueError("drift_cutoff must be positive")
        if not self.min_gap_guard >= 0:
            raise ValueError("min_gap_guard must be non-negative")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def check_box(self, box_length):
        if box_length is not None and math.isfinite(self.drift_cutoff) and self.drift_cutoff > 0.5 * box_length:
            raise ValueError("drift_cutoff must not exceed box_length / 2")


@dataclass(eq=False)
class TrajectoryRecord:
    """Recorded paths of one replica.

    ``all_paths`` has one row per recorded particle (labels in ``path_labels``);
    ``com_path`` is the mean unwrapped position of all particles.
    """

    times: np.ndarray
    tagged_path: np.ndarray
    all_paths: np.ndarray | None = None
    collision_count: int = 0
    seed: int | None = None
    path_labels: np.ndarray | None = None
    com_path: np.ndarray | None = None
    box_length: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.tagged_path = np.asarray(self.tagged_path, dtype=float)
        if self.times.shape != self.tagged_path.shape:
            raise ValueError("times and tagged_path differ in shape")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def to_csv(self, path, spec=None):
        """Write ``time,tagged_position[,x_0,...]`` plus a ``.json`` sidecar."""
        cols = [self.times, self.tagged_path]
        header = ["time", "tagged_position"]
        if self.all_paths is not None:
            cols += list(self.all_paths)
            header += [f"x_{k}" for k in range(self.all_paths.shape[0])]
        write_csv(path, header, cols)
        side = {
            "spec": spec or self.meta.get("spec"),
            "seed": self.seed,
            "build": build_id(),
            "collision_count": self.collision_count,
            "path_labels": None if self.path_labels is None else np.asarray(self.path_labels).tolist(),
            "box_length": self.box_length,
        }
        dump_json(side, str(path) + ".json")

    @classmethod
    def from_csv(cls, path):
        import json
        from pathlib import Path

        header, data = read_csv(path)
        side = {}
        p = Path(str(path) + ".json")
        if p.exists():
            side = json.loads(p.read_text())
        paths = data[:, 2:].T.copy() if data.shape[1] > 2 else None
        return cls(data[:, 0], data[:, 1], paths, side.get("collision_count", 0), side.get("seed"),
                   None if side.get("path_labels") is None else np.array(side["path_labels"]),
                   None, side.get("box_length"), {"spec": side.get("spec")})


# --- drift ------------------------------------------------------------------

def _closest_pair(x, box):
    pos = wrap(x, box) if box else x
    order = np.argsort(pos)
    g = np.diff(pos[order])
    if box:
        g = np.append(g, pos[order[0]] + box - pos[order[-1]])
    k = int(np.argmin(g))
    return int(order[k]), int(order[(k + 1) % len(order)])


def pairwise_drift(x, pot: PotentialSpec, box=None, cutoff=math.inf):
    """Drift vector ``sum_{j != i, |gap| < cutoff} pair_drift(x_i - x_j)``.

    ``x`` may be unwrapped; gaps use the minimum image when ``box`` is given.
    Neighbours are found through the sorted order, so the smooth-potential cost
    is O(n * density * range).
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    out = np.zeros(n)
    if n < 2 or pot.kind == "free":
        return out
    if pot.kind == "log":
        coef = 0.5 * pot.beta
        out = K.log_drift_periodic(x, box, coef) if box else K.log_drift_line(x, coef, cutoff)
        if not np.all(np.isfinite(out)):
            pair = _closest_pair(x, box)
            raise NumericalError(f"collision in drift evaluation (pair {pair})", pair=pair)
        return out
    if pot.kind == "hard_rod":
        pos = np.sort(wrap(x, box) if box else x)
        g = np.diff(pos)
        if box:
            g = np.append(g, pos[0] + box - pos[-1])
        if g.size and (g.min() < pot.range or g.min() == 0):
            pair = _closest_pair(x, box)
            raise NumericalError(f"collision in drift evaluation (pair {pair})", pair=pair)
        return out
    reach = min(cutoff, pot.range)
    if box and reach > 0.5 * box:
        raise ValueError("interaction reach exceeds box_length / 2")
    pos = wrap(x, box) if box else x
    order = np.argsort(pos, kind="stable")
    xs = pos[order]
    idx = np.arange(n)
    for k in range(1, n):
        j = idx + k
        if box:
            g = xs[j % n] - xs + box * (j >= n)
            sel = g < reach
        else:
            valid = j < n
            g = np.full(n, np.inf)
            g[valid] = xs[j[valid]] - xs[valid]
            sel = g < reach
        if not sel.any():
            break
        a = order[idx[sel]]
        b = order[j[sel] % n]
        gs = g[sel]
        np.add.at(out, a, pair_drift(pot, -gs))
        np.add.at(out, b, pair_drift(pot, gs))
    if not np.all(np.isfinite(out)):
        pair = _closest_pair(x, box)
        raise NumericalError(f"non-finite drift (pair {pair})", pair=pair)
    return out


# --- stepping ---------------------------------------------------------------

class _Stepper:
    """Euler step with optional reject-and-halve refinement.

    A proposed step is rejected and retried as two half steps when it breaks
    the particle order (ordered systems; counted as a collision) or when some
    gap ends below the guard distance after shrinking by more than half
    (accuracy control near close encounters).  Unordered systems refine while
    the smallest gap is below the guard.  Accuracy refinement stops at steps
    of ``guard**2``; order breaking is rejected at any step size.  The
    Brownian increment over ``h`` is split at ``h/2`` by sampling the bridge
    midpoint, so refined paths stay consistent with the coarse noise.
    """

    def __init__(self, pot, box, cutoff, guard, ordered, rng, adaptive):
        self.pot, self.box, self.cutoff = pot, box, cutoff
        self.guard, self.ordered, self.rng, self.adaptive = guard, ordered, rng, adaptive
        self.rejections = 0
        self.refinements = 0

    def drift(self, x):
        return pairwise_drift(x, self.pot, self.box, self.cutoff)

    def _gaps(self, x):
        if self.ordered:
            g = np.diff(x)
            if self.box and x.size > 1:
                g = np.append(g, x[0] + self.box - x[-1])
            return g
        pos = np.sort(wrap(x, self.box) if self.box else x)
        g = np.diff(pos)
        if self.box and x.size > 1:
            g = np.append(g, pos[0] + self.box - pos[-1])
        return g

    def check(self, x, x_new, h):
        """0: accept, 1: order broken, 2: refine for accuracy."""
        if x.size < 2:
            return 0
        g_new = self._gaps(x_new)
        if self.ordered:
            if g_new.min() <= 0:
                return 1
            if h <= self.guard**2:
                return 0
            if self.guard > 0 and np.any((g_new < self.guard) & (g_new < 0.5 * self._gaps(x))):
                return 2
            return 0
        if self.guard > 0 and g_new.min() < self.guard and h > self.guard**2:
            return 2
        return 0

    def advance(self, x, h, dw):
        if not self.adaptive:
            return x + self.drift(x) * h + dw
        stack = [(h, dw)]
        while stack:
            h, dw = stack.pop()
            x_new = x + self.drift(x) * h + dw
            code = self.check(x, x_new, h)
            if code == 0:
                x = x_new
                continue
            if code == 1:
                self.rejections += 1
            else:
                self.refinements += 1
            if 0.5 * h < MIN_DT:
                raise NumericalError("stiff region: reduce ambient dt or N")
            mid = 0.5 * dw + 0.5 * math.sqrt(h) * self.rng.standard_normal(dw.shape)
            stack.append((0.5 * h, dw - mid))
            stack.append((0.5 * h, mid))
        return x


def _label_order(state: LabeledState, ordered: bool):
    """Labels and unwrapped positions in label order."""
    labels, pos = state.in_label_order()
    cfg = state.config
    if not cfg.periodic:
        return labels, pos.copy()
    L = cfg.box_length
    if ordered:
        steps = wrap(np.diff(pos), L)
        x = np.concatenate([[0.0], np.cumsum(steps)])
        k0 = int(np.flatnonzero(labels == 0)[0])
        return labels, x - x[k0] + state.tagged_position
    return labels, state.tagged_position + minimum_image(pos - state.tagged_position, L)


def _to_state(labels, x, box):
    cfg = Configuration(x, box, box is not None)
    src = wrap(x, box) if box is not None else x
    order = np.argsort(src, kind="stable")
    lab = labels[order]
    return LabeledState(cfg, lab, int(np.flatnonzero(lab == 0)[0]))


def step_pairwise(state: LabeledState, pot: PotentialSpec, ispec: IntegratorSpec, noise, rng=None) -> LabeledState:
    """One Euler-Maruyama step ``x + drift dt + sqrt(dt) noise``.

    ``noise`` holds one standard normal per particle in label order.  The
    adaptive scheme needs ``rng`` for Brownian-bridge refinement.
    """
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (state.config.n,):
        raise ValueError("noise must have one entry per particle")
    box = state.config.box_length if state.config.periodic else None
    ispec.check_box(box)
    adaptive = ispec.scheme == "adaptive_euler"
    if adaptive and rng is None:
        raise ValueError("adaptive scheme needs an rng for noise refinement")
    labels, x = _label_order(state, ordered=pot.kind == "log")
    st = _Stepper(pot, box, ispec.drift_cutoff, ispec.min_gap_guard, pot.kind == "log", rng, adaptive)
    x = st.advance(x, ispec.dt, math.sqrt(ispec.dt) * noise)
    return _to_state(labels, x, box)


def _recorded_labels(labels, tagged_pos, recorded):
    if recorded is None:
        return np.array([], dtype=np.int64)
    if isinstance(recorded, str):
        if recorded != "all":
            raise ValueError("recorded must be None, 'all', an int or a label list")
        return np.arange(labels.size)
    if np.isscalar(recorded):
        m = int(recorded)
        n = labels.size
        start = tagged_pos % max(n // m, 1)
        return np.sort(np.unique((start + (n // m) * np.arange(m)) % n))
    wanted = np.asarray(recorded, dtype=np.int64)
    return np.array([int(np.flatnonzero(labels == w)[0]) for w in wanted], dtype=np.int64)


def _run(x, labels, stepper, ispec, rng, seed, recorded, box):
    n = x.size
    n_steps = ispec.n_steps
    stride = ispec.record_stride
    n_rec = n_steps // stride + 1
    tag = int(np.flatnonzero(labels == 0)[0])
    rec_idx = _recorded_labels(labels, tag, recorded)
    times = ispec.dt * stride * np.arange(n_rec)
    tagged = np.empty(n_rec)
    com = np.empty(n_rec)
    paths = np.empty((rec_idx.size, n_rec)) if rec_idx.size else None
    sq = math.sqrt(ispec.dt)

    def store(r):
        tagged[r] = x[tag]
        com[r] = x.mean()
        if paths is not None:
            paths[:, r] = x[rec_idx]

    store(0)
    for s in range(1, n_steps + 1):
        x = stepper.advance(x, ispec.dt, sq * rng.standard_normal(n))
        if s % stride == 0:
            store(s // stride)
    return TrajectoryRecord(times, tagged, paths, stepper.rejections, seed,
                            labels[rec_idx] if paths is not None else None, com, box,
                            {"refinements": stepper.refinements})


def simulate_pairwise(initial: LabeledState, pot: PotentialSpec, ispec: IntegratorSpec, seed,
                      recorded=None) -> TrajectoryRecord:
    """Integrate the labeled pair-interaction system from ``initial``."""
    if pot.kind == "hard_rod":
        raise ValueError("hard rods are simulated with simulate_hard_rod_exact")
    rng = _rng(seed)
    box = initial.config.box_length if initial.config.periodic else None
    ispec.check_box(box)
    ordered = pot.kind == "log"
    labels, x = _label_order(initial, ordered)
    st = _Stepper(pot, box, ispec.drift_cutoff, ispec.min_gap_guard, ordered, rng,
                  ispec.scheme == "adaptive_euler" or ordered)
    return _run(x, labels, st, ispec, rng, seed if not isinstance(seed, np.random.Generator) else None,
                recorded, box)


def simulate_dyson(n: int, beta: float, ispec: IntegratorSpec, seed, *, intensity: float = 1.0,
                   periodic: bool = True, initial: Configuration | None = None,
                   recorded=None) -> TrajectoryRecord:
    """Dyson's model with reject-and-halve sub-stepping.

    A step that would break the particle order is rejected, counted in
    ``collision_count`` and retried as two half steps; steps that squeeze a
    gap below the guard distance are refined the same way (counted in
    ``meta['refinements']``).  A zero ``min_gap_guard`` means 1e-4 times the
    mean gap.  Without ``initial`` the start is drawn from the beta ensemble
    (circular when periodic), which is the equilibrium law.
    """
    if beta < 1:
        raise ValueError("Dyson dynamics needs beta >= 1 (non-collision regime)")
    rng = _rng(seed)
    if initial is None:
        initial = sample_beta_ensemble(n, beta, rng, intensity, periodic)
    if initial.n != n:
        raise ValueError("initial configuration has the wrong size")
    box = initial.box_length if initial.periodic else None
    origin = 0.5 * box if box else 0.5 * (initial.positions[0] + initial.positions[-1])
    state = label_ordered(initial, origin)
    labels, x = _label_order(state, ordered=True)
    mean_gap = (box / n) if box else (x[-1] - x[0]) / max(n - 1, 1)
    guard = ispec.min_gap_guard if ispec.min_gap_guard > 0 else 1e-4 * mean_gap
    pot = PotentialSpec("log", beta=beta)
    cutoff = math.inf if box else ispec.drift_cutoff
    st = _Stepper(pot, box, cutoff, guard, True, rng, adaptive=True)
    rec = _run(x, labels, st, ispec, rng, seed if not isinstance(seed, np.random.Generator) else None,
               recorded, box)
    log.debug("dyson run: %d order-breaking steps rejected, %d refinements",
              rec.collision_count, rec.meta["refinements"])
    return rec


def simulate_hard_rod_exact(n: int, intensity: float, t_end: float, dt: float, seed, *,
                            rod_length: float = 0.0, initial=None, recorded=None) -> TrajectoryRecord:
    """Exact reflecting hard-rod system on the line via ranked independent Brownian motions.

    The point system (rod length 0) is the order statistics of ``n`` free
    Brownian motions; the tagged particle is the one of fixed rank.  Rods of
    length ``a`` map to points by removing ``rank * a``.  Positions at the
    output times are exact (no discretization error).
    """
    rng = _rng(seed)
    length = n / intensity
    free_length = length - n * rod_length
    if free_length <= 0:
        raise ValueError("rods do not fit")
    if initial is None:
        y = np.sort(rng.uniform(0.0, free_length, n))
    else:
        y = np.sort(np.asarray(initial, dtype=float)) - rod_length * np.arange(n)
        if np.any(np.diff(y) < 0):
            raise ValueError("initial rods overlap")
    ranks = np.arange(n)
    if n == 1:
        tag = 0
    else:
        rods = y + rod_length * ranks
        tag = label_ordered(Configuration(rods), 0.5 * (rods[0] + rods[-1])).tagged_index
    labels = ranks - tag
    rec_idx = _recorded_labels(labels, tag, recorded)
    ispec = IntegratorSpec(dt=dt, t_end=t_end)
    n_rec = ispec.n_steps + 1
    times = dt * np.arange(n_rec)
    tagged = np.empty(n_rec)
    com = np.empty(n_rec)
    paths = np.empty((rec_idx.size, n_rec)) if rec_idx.size else None
    offset = rod_length * ranks
    sq = math.sqrt(dt)
    ys = y
    for r in range(n_rec):
        if r > 0:
            y = y + sq * rng.standard_normal(n)
            ys = np.sort(y)
        tagged[r] = ys[tag] + offset[tag]
        com[r] = ys.mean() + offset.mean()
        if paths is not None:
            paths[:, r] = ys[rec_idx] + offset[rec_idx]
    return TrajectoryRecord(times, tagged, paths, 0, seed if not isinstance(seed, np.random.Generator) else None,
                            labels[rec_idx] if paths is not None else None, com, None)


# --- environment process ----------------------------------------------------

def _env_arrays(state: EnvironmentState, pot, ispec, noises):
    """Integrate (X, Y) driven by the labeled noises; returns the recorded arrays."""
    noises = np.asarray(noises, dtype=float)
    n = state.n
    if noises.ndim != 2 or noises.shape[1] != n + 1:
        raise ValueError("noises must have shape (steps, n_env + 1)")
    box = state.box_length
    ispec.check_box(box)
    reach = min(ispec.drift_cutoff, pot.range) if pot.kind == "smooth_compact" else ispec.drift_cutoff
    dt = ispec.dt
    sq = math.sqrt(dt)
    x = state.tagged_position
    y = state.relative_positions.astype(float).copy()
    n_steps = noises.shape[0]
    stride = ispec.record_stride
    xs, ys = [x], [y.copy()]

    def tag_terms(y):
        yy = minimum_image(y, box) if box else y
        near = np.abs(yy) < reach
        to_tag = np.zeros(n)
        from_tag = np.zeros(n)
        if pot.kind != "free" and near.any():
            from_tag[near] = pair_drift(pot, yy[near])   # on i from the tagged particle
            to_tag[near] = pair_drift(pot, -yy[near])    # on the tagged particle from i
        return from_tag, to_tag.sum()

    for s in range(n_steps):
        from_tag, drift_x = tag_terms(y)
        drift_y = from_tag + pairwise_drift(y, pot, box, ispec.drift_cutoff) - drift_x
        xi = noises[s]
        x = x + drift_x * dt + sq * xi[0]
        y = y + drift_y * dt + sq * (xi[1:] - xi[0])
        if (s + 1) % stride == 0:
            xs.append(x)
            ys.append(y.copy())
    return np.array(xs), np.array(ys)


def simulate_environment(state: EnvironmentState, pot: PotentialSpec, ispec: IntegratorSpec, noises) -> list:
    """Integrate the tagged particle and its environment.

    ``noises[s, 0]`` drives the tagged particle and ``noises[s, 1 + k]`` the
    environment point ``state.relative_positions[k]`` (standard normals per
    step).  The environment is driven by the differences ``B^i - B^0``.
    Returns the recorded states, starting with ``state``.
    """
    xs, ys = _env_arrays(state, pot, ispec, noises)
    box = state.box_length
    out = []
    for x, y in zip(xs, ys):
        rel = minimum_image(y, box) if box else y
        out.append(EnvironmentState(x, rel, state.labels, box))
    return out


def environment_paths(state: EnvironmentState, pot, ispec, noises):
    """Recorded ``(X, Y)`` arrays, ``Y`` columns in the order of ``state.relative_positions``."""
    return _env_arrays(state, pot, ispec, noises)


def integrate_labeled(x0, pot: PotentialSpec, ispec: IntegratorSpec, noises, box=None):
    """Plain Euler-Maruyama path of the labeled system for a given noise matrix (shape (steps, n))."""
    x = np.asarray(x0, dtype=float).copy()
    noises = np.asarray(noises, dtype=float)
    ispec.check_box(box)
    if box is None and pot.kind == "smooth_compact" and ispec.drift_cutoff >= pot.range:
        return K.euler_smooth_line(x, noises, ispec.dt, pot.beta, pot.amplitude, pot.range, ispec.record_stride)
    sq = math.sqrt(ispec.dt)
    out = [x.copy()]
    for s in range(noises.shape[0]):
        x = x + pairwise_drift(x, pot, box, ispec.drift_cutoff) * ispec.dt + sq * noises[s]
        if (s + 1) % ispec.record_stride == 0:
            out.append(x.copy())
    return np.array(out)


def detect_collisions(record: TrajectoryRecord, tol: float) -> int:
    """Number of recorded times at which two recorded particles are closer than ``tol``."""
    if record.all_paths is None:
        raise ValueError("collision detection needs all_paths")
    paths = record.all_paths
    if paths.shape[0] < 2:
        return 0
    box = record.box_length
    pos = wrap(paths, box) if box else paths
    pos = np.sort(pos, axis=0)
    gaps = np.diff(pos, axis=0)
    if box:
        gaps = np.vstack([gaps, pos[:1] + box - pos[-1:]])
    return int(np.count_nonzero(gaps.min(axis=0) < tol))
