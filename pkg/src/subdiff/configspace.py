"""Finite configurations, ordered labels, shifts and the tagged/environment split.

A :class:`Configuration` stands in for a locally finite point configuration on
the line.  Periodic configurations live in the fundamental domain ``[0, L)``;
displacements over time are unwrapped elsewhere (see :mod:`subdiff.dynamics`).

Text format (one point per line, optional ``#`` header)::

    # box_length=10.0 periodic=true
    0.25
    3.5

JSON format::

    {"positions": [0.25, 3.5], "box_length": 10.0, "periodic": true}

A bare JSON array of numbers is also accepted on input.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

# Two points closer than DISTINCT_RTOL * scale count as coincident.
DISTINCT_RTOL = 1e-12


def wrap(x, box_length):
    """Map coordinates into ``[0, box_length)``."""
    r = np.mod(x, box_length)
    return np.where(r >= box_length, 0.0, r)


def minimum_image(d, box_length):
    """Map displacements into ``[-L/2, L/2)``."""
    half = 0.5 * box_length
    return wrap(np.asarray(d, dtype=float) + half, box_length) - half


def _readonly(a):
    a = np.array(a, dtype=float).ravel()
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Configuration:
    """Sorted point positions, optionally on a periodic box."""

    positions: np.ndarray
    box_length: float | None = None
    periodic: bool = False

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).ravel()
        if not np.all(np.isfinite(pos)):
            raise ValueError("non-finite position in configuration")
        if self.box_length is not None:
            if not self.box_length > 0:
                raise ValueError("box_length must be positive")
            object.__setattr__(self, "box_length", float(self.box_length))
        if self.periodic:
            if self.box_length is None:
                raise ValueError("periodic configuration needs a box_length")
            pos = wrap(pos, self.box_length)
        pos = np.sort(pos, kind="stable")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "periodic", bool(self.periodic))

    def __len__(self):
        return self.positions.size

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return (
            self.box_length == other.box_length
            and self.periodic == other.periodic
            and np.array_equal(self.positions, other.positions)
        )

    @property
    def n(self) -> int:
        return self.positions.size

    @property
    def scale(self) -> float:
        if self.box_length is not None:
            return self.box_length
        if self.n < 2:
            return 1.0
        return max(float(self.positions[-1] - self.positions[0]), 1.0)

    @property
    def density(self) -> float:
        return self.n / self.scale

    def gaps(self) -> np.ndarray:
        """Adjacent gaps; for periodic boxes the wrap-around gap is appended."""
        g = np.diff(self.positions)
        if self.periodic and self.n > 0:
            g = np.append(g, self.positions[0] + self.box_length - self.positions[-1])
        return g

    def is_simple(self, rtol: float = DISTINCT_RTOL) -> bool:
        """True when all points are distinct at tolerance ``rtol * scale``."""
        if self.n < 2:
            return True
        return bool(np.min(self.gaps()) > rtol * self.scale)

    # serialization -------------------------------------------------------
    def to_text(self) -> str:
        head = f"# box_length={self.box_length} periodic={str(self.periodic).lower()}\n"
        return head + "".join(f"{x!r}\n" for x in self.positions.tolist())

    @classmethod
    def from_text(cls, text: str, box_length=None, periodic=None) -> "Configuration":
        meta = {}
        values = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            values.append(float(line))
        if box_length is None and meta.get("box_length", "None") != "None":
            box_length = float(meta["box_length"])
        if periodic is None:
            periodic = meta.get("periodic", "false") == "true"
        return cls(np.array(values), box_length, periodic)

    def to_json(self) -> str:
        return json.dumps(
            {"positions": self.positions.tolist(), "box_length": self.box_length, "periodic": self.periodic}
        )

    @classmethod
    def from_json(cls, text: str) -> "Configuration":
        data = json.loads(text)
        if isinstance(data, list):
            return cls(np.array(data, dtype=float))
        return cls(np.array(data["positions"], dtype=float), data.get("box_length"), data.get("periodic", False))


@dataclass(frozen=True, eq=False)
class LabeledState:
    """A configuration together with integer labels relative to the tagged point.

    ``label_offsets[k]`` is the label of ``config.positions[k]``; the tagged
    point carries label 0 and sits at ``config.positions[tagged_index]``.
    """

    config: Configuration
    label_offsets: np.ndarray
    tagged_index: int

    def __post_init__(self):
        lab = np.array(self.label_offsets, dtype=np.int64).ravel()
        if lab.size != self.config.n:
            raise ValueError("one label per position required")
        if np.count_nonzero(lab == 0) != 1:
            raise ValueError("exactly one label must equal 0")
        if np.unique(lab).size != lab.size:
            raise ValueError("labels must be distinct")
        if lab[self.tagged_index] != 0:
            raise ValueError("tagged_index must point at label 0")
        lab.setflags(write=False)
        object.__setattr__(self, "label_offsets", lab)
        object.__setattr__(self, "tagged_index", int(self.tagged_index))

    @property
    def tagged_position(self) -> float:
        return float(self.config.positions[self.tagged_index])

    def in_label_order(self):
        """Return ``(labels, positions)`` sorted by label."""
        order = np.argsort(self.label_offsets, kind="stable")
        return self.label_offsets[order], self.config.positions[order]

    def position_of(self, label: int) -> float:
        idx = np.flatnonzero(self.label_offsets == label)
        if idx.size == 0:
            raise KeyError(label)
        return float(self.config.positions[idx[0]])


@dataclass(frozen=True, eq=False)
class EnvironmentState:
    """Tagged position plus the sorted configuration seen from the tagged point."""

    tagged_position: float
    relative_positions: np.ndarray
    labels: np.ndarray = field(default=None)
    box_length: float | None = None

    def __post_init__(self):
        rel = np.array(self.relative_positions, dtype=float).ravel()
        if self.labels is None:
            lab = _sign_labels(rel)
        else:
            lab = np.array(self.labels, dtype=np.int64).ravel()
        if lab.size != rel.size:
            raise ValueError("labels and relative positions differ in length")
        order = np.argsort(rel, kind="stable")
        rel, lab = rel[order], lab[order]
        if np.any(lab == 0):
            raise ValueError("the tagged point is not part of the environment")
        rel.setflags(write=False)
        lab.setflags(write=False)
        object.__setattr__(self, "relative_positions", rel)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "tagged_position", float(self.tagged_position))

    @property
    def n(self) -> int:
        return self.relative_positions.size

    @property
    def periodic(self) -> bool:
        return self.box_length is not None

    def mean_gap(self) -> float:
        if self.box_length is not None:
            return self.box_length / (self.n + 1)
        if self.n == 0:
            return 1.0
        lo = min(self.relative_positions[0], 0.0)
        hi = max(self.relative_positions[-1], 0.0)
        return (hi - lo) / self.n

    def positive_side(self) -> np.ndarray:
        return self.relative_positions[self.relative_positions > 0]


def _sign_labels(rel):
    """Labels 1, 2, ... to the right of the origin and -1, -2, ... to the left."""
    rel = np.asarray(rel, dtype=float)
    order = np.argsort(rel, kind="stable")
    n_neg = int(np.count_nonzero(rel < 0))
    lab = np.empty(rel.size, dtype=np.int64)
    ranks = np.arange(rel.size)
    lab[order] = np.where(ranks < n_neg, ranks - n_neg, ranks - n_neg + 1)
    return lab


def label_ordered(config: Configuration, origin: float = 0.0) -> LabeledState:
    """Label points by position, giving label 0 to the point nearest ``origin``.

    Ties go to the larger coordinate.  In a periodic box, positions are ordered
    by their minimum-image displacement from ``origin``.
    """
    if config.n == 0:
        raise ValueError("empty configuration")
    if not config.is_simple():
        raise ValueError("positions are not distinct")
    if config.periodic:
        d = minimum_image(config.positions - origin, config.box_length)
    else:
        d = config.positions - origin
    absd = np.abs(d)
    near = np.flatnonzero(absd == absd.min())
    pick = int(near[np.argmax(d[near])])
    order = np.argsort(d, kind="stable")
    rank = np.empty(config.n, dtype=np.int64)
    rank[order] = np.arange(config.n)
    return LabeledState(config, rank - rank[pick], pick)


def shift(config: Configuration, x: float) -> Configuration:
    """Translate every point by ``x`` (mod the box when periodic)."""
    return Configuration(config.positions + x, config.box_length, config.periodic)


def to_environment(state: LabeledState) -> EnvironmentState:
    cfg = state.config
    x0 = state.tagged_position
    rel = cfg.positions - x0
    if cfg.periodic:
        rel = minimum_image(rel, cfg.box_length)
    keep = np.arange(cfg.n) != state.tagged_index
    box = cfg.box_length if cfg.periodic else None
    return EnvironmentState(x0, rel[keep], state.label_offsets[keep], box)


def from_environment(env: EnvironmentState) -> LabeledState:
    """Inverse of :func:`to_environment`."""
    x0 = env.tagged_position
    pos = np.concatenate([[x0], x0 + env.relative_positions])
    lab = np.concatenate([[0], env.labels])
    periodic = env.box_length is not None
    cfg = Configuration(pos, env.box_length, periodic)
    # recover the label of each sorted position
    src = wrap(pos, env.box_length) if periodic else pos
    order = np.argsort(src, kind="stable")
    lab_sorted = lab[order]
    return LabeledState(cfg, lab_sorted, int(np.flatnonzero(lab_sorted == 0)[0]))


def relative_environment(relative_positions, box_length=None) -> EnvironmentState:
    """Environment with the tagged point at 0 and sign-ordered labels."""
    return EnvironmentState(0.0, relative_positions, None, box_length)
