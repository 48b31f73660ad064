"""Variational self-diffusion bounds from the environment seen by the tagged particle.

For a test function ``chi = sum_j c_j g_j`` of the environment ``y``, the
self-diffusion constant is bounded by

    alpha / 2 <= E[ 1/2 (1 - shift(chi))^2 ] + E[ D[chi, chi] ]

where ``shift(f) = sum_i df/dy_i`` is the derivative under rigid translation of
the environment, ``D[f, g] = 1/2 sum_i df/dy_i dg/dy_i`` is the square field,
and expectations are over the reduced Palm law.  Minimizing over ``c`` is the
Galerkin system ``(G_shift + G_int) c = rhs`` with

    G_shift[j, k] = E[ 1/2 shift(g_j) shift(g_k) ]
    G_int[j, k]   = E[ D[g_j, g_k] ]
    rhs[j]        = E[ 1/2 shift(g_j) ]

Telescoping averages ``phi_N(y) = (y_1 + ... + y_N) / N`` of the first ``N``
points to the right of the tagged particle have ``shift = 1`` and
``D = 1/(2N)``, which drives the bound to zero as ``N`` grows.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .configspace import DISTINCT_RTOL, EnvironmentState
from .errors import NumericalError
from .io import dump_json, write_csv

log = logging.getLogger(__name__)

FUNCTION_KINDS = ("phi_N", "pair_sum", "custom_smooth")
FD_REL_STEP = 1e-6


class RejectedSample(ValueError):
    """A test function is not defined on this environment."""


@dataclass(frozen=True, eq=False)
class CylinderFunction:
    """A smooth local function of the environment.

    ``phi_N``: mean of the ``n`` nearest points on the positive side.
    ``pair_sum``: ``sum_i h(y_i)`` with derivative ``dh``.
    ``custom_smooth``: arbitrary ``evaluate(y)`` and optional ``gradient(y)``,
    both taking the sorted relative positions.
    """

    kind: str
    n: int | None = None
    h: Callable | None = None
    dh: Callable | None = None
    evaluate: Callable | None = None
    gradient_fn: Callable | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in FUNCTION_KINDS:
            raise ValueError(f"unknown function kind {self.kind!r}")
        if self.kind == "phi_N" and (self.n is None or self.n < 1):
            raise ValueError("phi_N needs n >= 1")
        if self.kind == "pair_sum" and (self.h is None or self.dh is None):
            raise ValueError("pair_sum needs h and dh")
        if self.kind == "custom_smooth" and self.evaluate is None:
            raise ValueError("custom_smooth needs evaluate")

    def _phi_index(self, env):
        y = env.relative_positions
        pos = np.flatnonzero(y > 0)
        if pos.size < self.n:
            raise RejectedSample(f"fewer than {self.n} points on the positive side")
        return pos[: self.n]

    def value(self, env: EnvironmentState) -> float:
        y = env.relative_positions
        if self.kind == "phi_N":
            return float(np.mean(y[self._phi_index(env)]))
        if self.kind == "pair_sum":
            return float(np.sum(self.h(y)))
        return float(self.evaluate(y))

    @property
    def has_gradient(self) -> bool:
        return self.kind != "custom_smooth" or self.gradient_fn is not None

    def gradient(self, env: EnvironmentState) -> np.ndarray:
        """Per-coordinate derivatives ``df/dy_i`` over the stored points."""
        y = env.relative_positions
        if self.kind == "phi_N":
            g = np.zeros(y.size)
            g[self._phi_index(env)] = 1.0 / self.n
            return g
        if self.kind == "pair_sum":
            return np.asarray(self.dh(y), dtype=float)
        if self.gradient_fn is not None:
            return np.asarray(self.gradient_fn(y), dtype=float)
        return numeric_gradient(self, env)


def phi(n: int) -> CylinderFunction:
    return CylinderFunction("phi_N", n=n, name=f"phi_{n}")


def pair_sum(h, dh, name="pair_sum") -> CylinderFunction:
    return CylinderFunction("pair_sum", h=h, dh=dh, name=name)


def custom_smooth(evaluate, gradient=None, name="custom") -> CylinderFunction:
    return CylinderFunction("custom_smooth", evaluate=evaluate, gradient_fn=gradient, name=name)


def gaussian_bump(center: float, width: float, parity: str = "even") -> CylinderFunction:
    """``sum_i h(y_i)`` for ``h(y) = b(y - c) +/- b(y + c)``, ``b`` a Gaussian of width ``w``.

    ``even`` bumps are symmetric under reflection of the environment, ``odd``
    ones antisymmetric.
    """
    if parity not in ("even", "odd"):
        raise ValueError("parity must be 'even' or 'odd'")
    sgn = 1.0 if parity == "even" else -1.0
    c, w = float(center), float(width)

    def h(y):
        return np.exp(-0.5 * ((y - c) / w) ** 2) + sgn * np.exp(-0.5 * ((y + c) / w) ** 2)

    def dh(y):
        return (-(y - c) / w**2 * np.exp(-0.5 * ((y - c) / w) ** 2)
                - sgn * (y + c) / w**2 * np.exp(-0.5 * ((y + c) / w) ** 2))

    return pair_sum(h, dh, name=f"bump_{parity}_{c:g}_{w:g}")


def bump_basis(centers, width: float, parity: str = "both") -> list:
    """Gaussian pair-sum basis at the given centres (``even``, ``odd`` or ``both``)."""
    kinds = ("even", "odd") if parity == "both" else (parity,)
    return [gaussian_bump(c, width, p) for c in centers for p in kinds]


def numeric_gradient(f: CylinderFunction, env: EnvironmentState, step=None) -> np.ndarray:
    y = np.array(env.relative_positions, dtype=float)
    eps = FD_REL_STEP * env.mean_gap() if step is None else step
    out = np.empty(y.size)
    for i in range(y.size):
        yp, ym = y.copy(), y.copy()
        yp[i] += eps
        ym[i] -= eps
        out[i] = (_eval_at(f, env, yp) - _eval_at(f, env, ym)) / (2 * eps)
    return out


def _eval_at(f, env, y):
    return f.value(EnvironmentState(env.tagged_position, y, env.labels, env.box_length))


def shift_derivative(f: CylinderFunction, env: EnvironmentState, numeric: bool = False, step=None) -> float:
    """Derivative of ``f`` under rigid translation of the environment.

    Analytic when available (``phi_N`` gives exactly 1); otherwise a symmetric
    difference with step ``1e-6`` times the mean gap.
    """
    if not numeric:
        if f.kind == "phi_N":
            f._phi_index(env)
            return 1.0
        if f.has_gradient:
            return float(np.sum(f.gradient(env)))
    y = env.relative_positions
    eps = FD_REL_STEP * env.mean_gap() if step is None else step
    return (_eval_at(f, env, y + eps) - _eval_at(f, env, y - eps)) / (2 * eps)


def square_field(f: CylinderFunction, g: CylinderFunction, env: EnvironmentState) -> float:
    """``1/2 sum_i df/dy_i dg/dy_i`` over the stored points."""
    if f.kind == "phi_N" and g.kind == "phi_N":
        f._phi_index(env)
        g._phi_index(env)
        return 0.5 / max(f.n, g.n)
    return 0.5 * float(np.dot(f.gradient(env), g.gradient(env)))


def energy(f: CylinderFunction, env: EnvironmentState) -> float:
    """Pointwise energy density ``1/2 shift(f)^2 + D[f, f]``."""
    s = shift_derivative(f, env)
    return 0.5 * s * s + square_field(f, f, env)


def linear_combination(coeffs, basis, name="combination") -> CylinderFunction:
    coeffs = np.asarray(coeffs, dtype=float)
    basis = list(basis)

    def ev(y):
        env = EnvironmentState(0.0, y)
        return sum(c * b.value(env) for c, b in zip(coeffs, basis))

    def gr(y):
        env = EnvironmentState(0.0, y)
        return sum(c * b.gradient(env) for c, b in zip(coeffs, basis))

    return custom_smooth(ev, gr, name)


# --- assembly ---------------------------------------------------------------

def _stable_mean(a, axis=0):
    """Mean that returns a constant column exactly."""
    a = np.asarray(a, dtype=float)
    if a.shape[axis] == 0:
        return np.zeros(a.shape[:axis] + a.shape[axis + 1:])
    first = np.take(a, [0], axis=axis)
    m = np.mean(a, axis=axis)
    const = np.all(a == first, axis=axis)
    return np.where(const, np.squeeze(first, axis=axis), m)


def _has_collision(env):
    y = env.relative_positions
    if y.size == 0:
        return False
    pts = np.sort(np.append(y, 0.0))
    scale = env.box_length if env.box_length else max(pts[-1] - pts[0], 1.0)
    return bool(np.min(np.diff(pts)) <= DISTINCT_RTOL * scale)


@dataclass(eq=False)
class QuadraticForm:
    gram_shift: np.ndarray
    gram_interaction: np.ndarray
    rhs: np.ndarray
    n_samples: int
    basis: list
    n_skipped: int = 0
    shift_samples: np.ndarray | None = field(default=None, repr=False)
    field_samples: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.rhs.size

    @property
    def rhs_stderr(self) -> np.ndarray:
        """Monte Carlo standard error of each ``rhs`` entry."""
        n = self.shift_samples.shape[0]
        if n < 2:
            return np.zeros(self.size)
        return 0.5 * self.shift_samples.std(axis=0, ddof=1) / math.sqrt(n)

    def to_dict(self):
        return {
            "basis": [b.name for b in self.basis],
            "gram_shift": self.gram_shift,
            "gram_interaction": self.gram_interaction,
            "rhs": self.rhs,
            "rhs_stderr": self.rhs_stderr,
            "n_samples": self.n_samples,
            "n_skipped": self.n_skipped,
        }

    def to_json(self, path=None):
        return dump_json(self.to_dict(), path)


def _check_gram(name, g):
    if g.size == 0:
        return g
    asym = np.max(np.abs(g - g.T))
    if asym > 1e-12 * max(1.0, np.max(np.abs(g))):
        raise NumericalError(f"{name} is not symmetric (max asymmetry {asym:.3g})")
    g = 0.5 * (g + g.T)
    lo = np.linalg.eigvalsh(g)[0]
    if lo < -1e-8 * max(np.trace(g), 0.0):
        raise NumericalError(f"{name} is not positive semidefinite (smallest eigenvalue {lo:.3g})")
    return g


def assemble_forms(basis, samples, *, min_samples: int = 1000, max_skip_fraction: float = 0.01,
                   reject_collisions: bool = True) -> QuadraticForm:
    """Monte Carlo Gram matrices and right-hand side over Palm samples.

    Samples where some basis function is undefined or non-finite, or where two
    points coincide, are skipped and counted; more than ``max_skip_fraction``
    skips is an error.  Per-sample shift derivatives (``n x m``) and square
    fields (``n x m x m``) are kept for re-evaluating candidate correctors.
    """
    basis = list(basis)
    samples = list(samples)
    if len(samples) < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {len(samples)}")
    m = len(basis)
    S, F = [], []
    skipped = 0
    for env in samples:
        try:
            if reject_collisions and _has_collision(env):
                raise RejectedSample("coincident points")
            s = np.array([shift_derivative(b, env) for b in basis])
            if all(b.kind == "phi_N" for b in basis):
                f = np.array([[square_field(a, b, env) for b in basis] for a in basis]).reshape(m, m)
            else:
                grads = np.array([b.gradient(env) for b in basis]).reshape(m, -1)
                f = 0.5 * grads @ grads.T
            if not (np.all(np.isfinite(s)) and np.all(np.isfinite(f))):
                raise RejectedSample("non-finite field")
        except RejectedSample:
            skipped += 1
            continue
        S.append(s)
        F.append(f)
    total = len(samples)
    if total and skipped > max_skip_fraction * total:
        raise NumericalError(f"{skipped} of {total} samples skipped (limit {max_skip_fraction:.0%})")
    S = np.array(S, dtype=float).reshape(len(S), m)
    F = np.array(F, dtype=float).reshape(len(F), m, m)
    if S.shape[0] == 0 and m > 0:
        raise NumericalError("no usable samples")
    g1 = 0.5 * _stable_mean(S[:, :, None] * S[:, None, :])
    g2 = _stable_mean(F)
    rhs = 0.5 * _stable_mean(S)
    g1 = _check_gram("gram_shift", np.asarray(g1).reshape(m, m))
    g2 = _check_gram("gram_interaction", np.asarray(g2).reshape(m, m))
    return QuadraticForm(g1, g2, np.asarray(rhs).reshape(m), S.shape[0], basis, skipped, S, F)


@dataclass(eq=False)
class CorrectorSolution:
    coefficients: np.ndarray
    alpha_estimate: float
    energy_parts: tuple
    condition_diagnostics: dict

    def to_dict(self):
        return {
            "coefficients": self.coefficients,
            "alpha_estimate": self.alpha_estimate,
            "shift_part": self.energy_parts[0],
            "interaction_part": self.energy_parts[1],
            "diagnostics": self.condition_diagnostics,
        }

    def to_json(self, path=None):
        return dump_json(self.to_dict(), path)


def evaluate_corrector(form: QuadraticForm, c):
    """``(shift_part, interaction_part)`` of ``chi = sum c_j g_j`` over the stored samples."""
    c = np.asarray(c, dtype=float)
    if form.size == 0:
        return 0.5, 0.0
    shift = _stable_mean(0.5 * (1.0 - form.shift_samples @ c) ** 2)
    inter = _stable_mean(np.einsum("j,njk,k->n", c, form.field_samples, c))
    return float(shift), float(inter)


def solve_corrector(form: QuadraticForm, ridge: float = 0.0, cond_limit: float = 1e12) -> CorrectorSolution:
    """Solve ``(G_shift + G_int + ridge I) c = rhs`` and report ``alpha = 2 (shift + interaction)``.

    A singular or ill-conditioned system escalates the ridge to ``1e-10 * trace``;
    the diagnostics record this.
    """
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    m = form.size
    diag = {"ridge": ridge, "escalated": False, "condition": 1.0, "size": m}
    if m == 0:
        c = np.empty(0)
    else:
        a = form.gram_shift + form.gram_interaction
        cond = float(np.linalg.cond(a + ridge * np.eye(m)))
        diag["condition"] = cond
        if not np.isfinite(cond) or cond > cond_limit:
            ridge = max(ridge, 1e-10 * float(np.trace(a)))
            if ridge == 0:
                raise NumericalError("zero Gram matrix: basis carries no energy")
            diag.update(ridge=ridge, escalated=True, condition=float(np.linalg.cond(a + ridge * np.eye(m))))
            log.warning("corrector system ill-conditioned (cond %.3g); ridge raised to %.3g", cond, ridge)
        c = np.linalg.solve(a + ridge * np.eye(m), form.rhs)
    shift, inter = evaluate_corrector(form, c)
    return CorrectorSolution(c, 2.0 * (shift + inter), (shift, inter), diag)


# --- telescoping ------------------------------------------------------------

@dataclass(eq=False)
class TelescopingResult:
    rows: list  # (N, energy, alpha_bound, n_samples, rejects)
    energy_bound_violations: int
    cauchy_violations: int
    cauchy_checks: int

    def column(self, name):
        k = ("N", "energy", "alpha_bound", "n_samples", "rejects").index(name)
        return np.array([r[k] for r in self.rows])

    def to_csv(self, path):
        cols = list(zip(*self.rows)) if self.rows else [[]] * 5
        write_csv(path, ["N", "energy", "alpha_bound", "n_samples", "rejects"], cols)


def telescoping_experiment(samples, n_list, *, ulp_slack: int = 4) -> TelescopingResult:
    """Galerkin bound from ``{phi_N}`` for each ``N``, with the energy and Cauchy checks.

    For every admissible sample, the energy density of ``phi_N`` is checked
    against ``(1 + 1/N) / 2`` and, for consecutive ``M < N`` in ``n_list``,
    the energy of ``phi_M - phi_N`` against ``1/M + 1/N``.  Both use the
    generic gradient path (not the closed forms); ``ulp_slack`` units in the
    last place absorb rounding where the bound is attained with equality.
    """
    samples = list(samples)
    n_list = [int(n) for n in n_list]
    slack = 1.0 + ulp_slack * np.finfo(float).eps
    rows = []
    violations = 0
    for n in n_list:
        f = phi(n)
        form = assemble_forms([f], samples, min_samples=0, max_skip_fraction=1.0)
        sol = solve_corrector(form)
        e = []
        for env in samples:
            try:
                if _has_collision(env):
                    continue
                g = f.gradient(env)
            except RejectedSample:
                continue
            val = 0.5 * float(np.sum(g)) ** 2 + 0.5 * float(np.dot(g, g))
            e.append(val)
            if val > 0.5 * (1.0 + 1.0 / n) * slack:
                violations += 1
        rows.append((n, float(np.mean(e)) if e else math.nan, sol.alpha_estimate, form.n_samples, form.n_skipped))
    cauchy_bad = checks = 0
    for m_, n in zip(n_list[:-1], n_list[1:]):
        fm, fn = phi(m_), phi(n)
        for env in samples:
            try:
                if _has_collision(env):
                    continue
                d = fm.gradient(env) - fn.gradient(env)
            except RejectedSample:
                continue
            checks += 1
            val = 0.5 * float(np.sum(d)) ** 2 + 0.5 * float(np.dot(d, d))
            if val > (1.0 / m_ + 1.0 / n) * slack:
                cauchy_bad += 1
    return TelescopingResult(rows, violations, cauchy_bad, checks)
