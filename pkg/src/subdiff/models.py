"""Pair potentials, drifts and equilibrium samplers.

Equilibrium laws are finite-volume stand-ins: a fixed number of particles in a
periodic box (canonical ensemble).  The reduced Palm law is obtained by
recentring on a uniformly chosen particle and removing it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .configspace import Configuration, EnvironmentState, minimum_image, relative_environment
from .errors import NumericalError

log = logging.getLogger(__name__)

POTENTIAL_KINDS = ("free", "smooth_compact", "log", "hard_rod")
SAMPLER_KINDS = ("poisson", "gibbs_mcmc", "beta_ensemble", "hard_rod_poisson")
_KIND_CODE = {"free": K.FREE, "smooth_compact": K.SMOOTH, "log": K.LOG, "hard_rod": K.HARD}


@dataclass(frozen=True)
class PotentialSpec:
    """Pair interaction.

    ``smooth_compact`` is ``amplitude * (1 - (x/range)**2)**3`` on ``|x| < range``;
    ``log`` is ``-log|x|``; ``hard_rod`` forbids gaps below ``range``.
    """

    kind: str = "free"
    beta: float = 0.0
    range: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if not self.amplitude >= 0:
            raise ValueError("amplitude must be non-negative")
        if self.kind == "hard_rod":
            if not self.range >= 0:
                raise ValueError("rod length must be non-negative")
        elif not self.range > 0:
            raise ValueError("range must be positive")

    @property
    def singular(self) -> bool:
        return self.kind in ("log", "hard_rod")

    @property
    def code(self) -> int:
        return _KIND_CODE[self.kind]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "free":
            return np.zeros_like(x)
        if self.kind == "log":
            return -np.log(np.abs(x))
        if self.kind == "hard_rod":
            return np.where((np.abs(x) < self.range) | (x == 0), np.inf, 0.0)
        u = 1.0 - (x / self.range) ** 2
        return np.where(np.abs(x) < self.range, self.amplitude * u**3, 0.0)

    def derivative(self, x):
        """Psi'(x)."""
        x = np.asarray(x, dtype=float)
        if self.kind in ("free", "hard_rod"):
            return np.zeros_like(x)
        if self.kind == "log":
            return -1.0 / x
        r = self.range
        u = 1.0 - (x / r) ** 2
        return np.where(np.abs(x) < r, -6.0 * self.amplitude * x / r**2 * u**2, 0.0)


def pair_drift(spec: PotentialSpec, gap):
    """Drift on particle i from one neighbour at signed gap ``x_i - x_j``.

    ``-(beta/2) Psi'(gap)``; for the log kind this is ``+(beta/2)/gap``.
    Works on scalars and arrays.
    """
    g = np.asarray(gap, dtype=float)
    if spec.singular:
        bad = (g == 0) if spec.kind == "log" else ((g == 0) | (np.abs(g) < spec.range))
        if np.any(bad):
            raise NumericalError("collision in drift evaluation")
    if spec.kind == "free" or spec.kind == "hard_rod":
        out = np.zeros_like(g)
    elif spec.kind == "log":
        out = 0.5 * spec.beta / g
    else:
        out = -0.5 * spec.beta * spec.derivative(g)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "poisson"
    intensity: float = 1.0
    n_particles: int = 100
    box_length: float = 100.0
    mcmc_burn_in: int = 200
    thinning: int = 10
    rod_length: float = 0.0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if not self.intensity > 0:
            raise ValueError("intensity must be positive")
        if not self.box_length > 0:
            raise ValueError("box_length must be positive")
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if abs(self.n_particles - self.intensity * self.box_length) > 1.0:
            raise ValueError("n_particles must match intensity * box_length within one particle")
        if self.mcmc_burn_in < 0 or self.thinning < 1:
            raise ValueError("mcmc_burn_in must be >= 0 and thinning >= 1")
        if self.rod_length < 0 or self.rod_length * self.n_particles >= self.box_length:
            raise ValueError("rod_length must be non-negative and leave free volume")

    @classmethod
    def at_density(cls, kind, n_particles, intensity=1.0, **kw):
        return cls(kind=kind, intensity=intensity, n_particles=n_particles,
                   box_length=n_particles / intensity, **kw)


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_poisson(spec: SamplerSpec, seed) -> Configuration:
    """``n_particles`` i.i.d. uniform points on the periodic box (canonical Poisson)."""
    rng = _rng(seed)
    return Configuration(rng.uniform(0.0, spec.box_length, spec.n_particles), spec.box_length, True)


def sample_hard_rods(spec: SamplerSpec, seed) -> Configuration:
    """Equilibrium hard-rod gas on the torus: uniform spacings of the free length, shifted by the rod length."""
    rng = _rng(seed)
    n, a, L = spec.n_particles, spec.rod_length, spec.box_length
    free = np.sort(rng.uniform(0.0, L - n * a, n))
    pos = free - free[0] + a * np.arange(n) + rng.uniform(0.0, L)
    return Configuration(pos, L, True)


class GibbsSampler:
    """Metropolis single-particle moves targeting ``exp(-beta sum Psi)`` on the periodic box.

    The proposal width is tuned during burn-in towards an acceptance rate of
    about 0.4 and frozen afterwards.
    """

    target_acceptance = 0.4
    max_retries = 100

    def __init__(self, spec: SamplerSpec, pot: PotentialSpec, seed):
        if pot.kind == "log":
            raise ValueError("log interactions are sampled by sample_beta_ensemble")
        self.spec, self.pot = spec, pot
        self.rng = _rng(seed)
        L = spec.box_length
        self.width = min(0.5 * L, 1.0 / spec.intensity)
        self.acceptance_rate = float("nan")
        for _ in range(self.max_retries):
            x = self.rng.uniform(0.0, L, spec.n_particles)
            if math.isfinite(K.total_energy(x, L, pot.code, pot.amplitude, pot.range)):
                self.x = x
                break
        else:
            raise NumericalError("no finite-energy initial configuration after 100 uniform starts")

    def sweep(self) -> float:
        n = self.x.size
        steps = self.rng.uniform(-self.width, self.width, n)
        uni = self.rng.random(n)
        acc = K.metropolis_sweep(self.x, self.spec.box_length, self.pot.code, self.pot.beta,
                                 self.pot.amplitude, self.pot.range, steps, uni)
        return acc / n

    def burn_in(self) -> Configuration:
        rates = []
        for k in range(self.spec.mcmc_burn_in):
            rates.append(self.sweep())
            if (k + 1) % 10 == 0:
                rate = np.mean(rates[-10:])
                if rate > self.target_acceptance + 0.1:
                    self.width = min(self.width * 1.25, 0.5 * self.spec.box_length)
                elif rate < self.target_acceptance - 0.1:
                    self.width /= 1.25
        self.acceptance_rate = float(np.mean(rates[-10:])) if rates else float("nan")
        log.info("gibbs burn-in done: width=%.4g acceptance=%.3f", self.width, self.acceptance_rate)
        return self.config()

    def sample(self) -> Configuration:
        """Advance ``thinning`` sweeps and return the current configuration."""
        rates = [self.sweep() for _ in range(self.spec.thinning)]
        self.acceptance_rate = float(np.mean(rates))
        return self.config()

    def config(self) -> Configuration:
        return Configuration(self.x.copy(), self.spec.box_length, True)


def sample_gibbs(spec: SamplerSpec, pot: PotentialSpec, seed) -> Configuration:
    return GibbsSampler(spec, pot, seed).burn_in()


# --- beta ensembles -------------------------------------------------------

def hermite_tridiagonal_eigs(n, beta, rng):
    """Eigenvalues with density prod|l_i - l_j|^beta exp(-sum l^2 / 2) (tridiagonal model)."""
    diag = rng.normal(0.0, math.sqrt(2.0), n)
    dof = beta * np.arange(n - 1, 0, -1)
    off = np.sqrt(rng.chisquare(dof)) if n > 1 else np.empty(0)
    from scipy.linalg import eigh_tridiagonal

    return eigh_tridiagonal(diag / math.sqrt(2.0), off / math.sqrt(2.0), eigvals_only=True)


def dense_gaussian_eigs(n, beta, rng):
    """Same law as :func:`hermite_tridiagonal_eigs` from a dense GOE/GUE/GSE matrix."""
    if beta == 1:
        a = rng.normal(0.0, math.sqrt(0.5), (n, n))
        h = np.triu(a, 1)
        h = h + h.T + np.diag(rng.normal(0.0, 1.0, n))
        return np.linalg.eigvalsh(h)
    if beta == 2:
        a = rng.normal(0.0, 0.5**0.5, (n, n)) + 1j * rng.normal(0.0, 0.5**0.5, (n, n))
        h = np.triu(a, 1)
        h = h + h.conj().T + np.diag(rng.normal(0.0, 1.0, n))
        return np.linalg.eigvalsh(h)
    if beta == 4:
        s = 0.5**0.5
        a = np.triu(rng.normal(0, s, (n, n)) + 1j * rng.normal(0, s, (n, n)), 1)
        a = a + a.conj().T + np.diag(rng.normal(0.0, 1.0, n))
        b = np.triu(rng.normal(0, s, (n, n)) + 1j * rng.normal(0, s, (n, n)), 1)
        b = b - b.T
        h = np.block([[a, b], [-b.conj(), a.conj()]])
        return np.linalg.eigvalsh(h)[::2]
    raise ValueError("dense ensembles exist for beta in {1, 2, 4}")


def circular_cmv_angles(n, beta, rng):
    """Eigenangles in [0, 2pi) with density prod|e^{i t_j} - e^{i t_k}|^beta (five-diagonal CMV model)."""
    alpha = np.empty(n, dtype=complex)
    for k in range(n - 1):
        nu = beta * (n - k - 1) + 1
        r2 = rng.beta(1.0, 0.5 * (nu - 1))
        alpha[k] = math.sqrt(r2) * np.exp(1j * rng.uniform(0.0, 2 * math.pi))
    alpha[n - 1] = np.exp(1j * rng.uniform(0.0, 2 * math.pi))
    rho = np.sqrt(np.clip(1.0 - np.abs(alpha) ** 2, 0.0, None))

    def xi(k):
        return np.array([[np.conj(alpha[k]), rho[k]], [rho[k], -alpha[k]]])

    def block_matrix(start):
        m = np.zeros((n, n), dtype=complex)
        i = 0
        if start == 1:
            m[0, 0] = 1.0
            i = 1
        while i < n:
            if i == n - 1:
                m[i, i] = np.conj(alpha[n - 1])
                i += 1
            else:
                m[i:i + 2, i:i + 2] = xi(i)
                i += 2
        return m

    cmv = block_matrix(0) @ block_matrix(1)
    return np.sort(np.mod(np.angle(np.linalg.eigvals(cmv)), 2 * math.pi))


def cue_angles(n, rng):
    """Eigenangles of a Haar unitary (circular beta=2 cross-check)."""
    z = (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    q = q * (np.diagonal(r) / np.abs(np.diagonal(r)))
    return np.sort(np.mod(np.angle(np.linalg.eigvals(q)), 2 * math.pi))


def hermite_center_density(n, beta):
    """Semicircle density at 0 for the Hermite normalization above."""
    return 2.0 * n / (math.pi * math.sqrt(2.0 * beta * n))


def sample_beta_ensemble(n: int, beta: float, seed, intensity: float = 1.0,
                         periodic: bool = False) -> Configuration:
    """Log-gas equilibrium points.

    Non-periodic: Hermite beta ensemble, rescaled so the density at the centre
    equals ``intensity``.  Periodic: circular beta ensemble on a box of length
    ``n / intensity`` (the exact invariant law of the image-summed log gas).
    """
    if n < 2:
        raise ValueError("beta ensembles need n >= 2")
    if not beta > 0:
        raise ValueError("beta must be positive")
    rng = _rng(seed)
    if periodic:
        L = n / intensity
        theta = circular_cmv_angles(n, beta, rng)
        return Configuration(theta * L / (2 * math.pi), L, True)
    eig = np.sort(hermite_tridiagonal_eigs(n, beta, rng))
    return Configuration(eig * hermite_center_density(n, beta) / intensity)


# --- Palm measure ---------------------------------------------------------

def palm_condition(config: Configuration, seed) -> Configuration:
    """Recentre on a uniformly chosen particle and remove it.

    Returns the relative configuration; for periodic input the points are the
    minimum-image displacements in ``[-L/2, L/2)`` and ``box_length`` is kept
    as the window length.
    """
    if config.n == 0:
        raise ValueError("empty configuration")
    rng = _rng(seed)
    k = int(rng.integers(config.n))
    rel = np.delete(config.positions, k) - config.positions[k]
    if config.periodic:
        rel = minimum_image(rel, config.box_length)
        return Configuration(rel, config.box_length, False)
    return Configuration(rel)


def palm_environment(config: Configuration, seed) -> EnvironmentState:
    """:func:`palm_condition` packaged as an environment seen from the origin."""
    rel = palm_condition(config, seed)
    return relative_environment(rel.positions, config.box_length if config.periodic else None)


def draw(spec: SamplerSpec, pot: PotentialSpec | None, seed) -> Configuration:
    """One equilibrium configuration for ``spec`` (dispatch on ``spec.kind``)."""
    if spec.kind == "poisson":
        return sample_poisson(spec, seed)
    if spec.kind == "hard_rod_poisson":
        return sample_hard_rods(spec, seed)
    if spec.kind == "gibbs_mcmc":
        return sample_gibbs(spec, pot or PotentialSpec(), seed)
    beta = pot.beta if pot is not None and pot.kind == "log" else 2.0
    return sample_beta_ensemble(spec.n_particles, beta, seed, spec.intensity, periodic=True)


def palm_samples(spec: SamplerSpec, pot: PotentialSpec | None, n_samples: int, seed) -> list:
    """``n_samples`` environments drawn from the reduced Palm law.

    Gibbs samples come from a single chain, one sample every ``thinning`` sweeps.
    """
    rng = _rng(seed)
    out = []
    if spec.kind == "gibbs_mcmc":
        sampler = GibbsSampler(spec, pot, rng)
        sampler.burn_in()
        for _ in range(n_samples):
            out.append(palm_environment(sampler.sample(), rng))
        return out
    for _ in range(n_samples):
        out.append(palm_environment(draw(spec, pot, rng), rng))
    return out
