"""Compiled inner loops.  Pure functions of their array arguments."""
import math

import numba as nb
import numpy as np

FREE, SMOOTH, LOG, HARD = 0, 1, 2, 3


@nb.njit(cache=True)
def _min_image(d, box):
    if box > 0.0:
        return d - box * math.floor(d / box + 0.5)
    return d


@nb.njit(cache=True)
def pair_energy(kind, d, amp, rng):
    if kind == SMOOTH:
        if abs(d) >= rng:
            return 0.0
        u = 1.0 - (d / rng) ** 2
        return amp * u * u * u
    if kind == HARD:
        if abs(d) < rng or d == 0.0:
            return math.inf
        return 0.0
    if kind == LOG:
        return -math.log(abs(d))
    return 0.0


@nb.njit(cache=True)
def total_energy(x, box, kind, amp, rng):
    n = x.shape[0]
    e = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            e += pair_energy(kind, _min_image(x[i] - x[j], box), amp, rng)
    return e


@nb.njit(cache=True)
def metropolis_sweep(x, box, kind, beta, amp, rng, steps, uniforms):
    """One sequential single-particle sweep on a periodic box; returns accepted moves."""
    n = x.shape[0]
    accepted = 0
    for i in range(n):
        old = x[i]
        new = old + steps[i]
        new = new - box * math.floor(new / box)
        if new >= box:
            new = 0.0
        de = 0.0
        blocked = False
        for j in range(n):
            if j == i:
                continue
            e_new = pair_energy(kind, _min_image(new - x[j], box), amp, rng)
            if e_new == math.inf:
                blocked = True
                break
            de += e_new - pair_energy(kind, _min_image(old - x[j], box), amp, rng)
        if blocked:
            continue
        if de <= 0.0 or uniforms[i] < math.exp(-beta * de):
            x[i] = new
            accepted += 1
    return accepted


@nb.njit(cache=True, error_model="numpy")
def log_drift_periodic(x, box, coef):
    """coef * sum_j (pi/L) cot(pi (x_i - x_j) / L): the image-summed 1/gap drift."""
    n = x.shape[0]
    out = np.zeros(n)
    a = math.pi / box
    s = np.empty(n)
    c = np.empty(n)
    for i in range(n):
        s[i] = math.sin(a * x[i])
        c[i] = math.cos(a * x[i])
    for i in range(n):
        si = s[i]
        ci = c[i]
        acc = 0.0
        for j in range(i + 1, n):
            den = si * c[j] - ci * s[j]
            v = (ci * c[j] + si * s[j]) / den
            acc += v
            out[j] -= v
        out[i] += acc
    for i in range(n):
        out[i] *= coef * a
    return out


@nb.njit(cache=True, error_model="numpy")
def log_drift_line(x, coef, cutoff):
    """coef * sum_{j != i, |x_i - x_j| < cutoff} 1 / (x_i - x_j)."""
    n = x.shape[0]
    out = np.zeros(n)
    for i in range(n):
        for j in range(i + 1, n):
            d = x[i] - x[j]
            if abs(d) < cutoff:
                v = 1.0 / d
                out[i] += v
                out[j] -= v
    for i in range(n):
        out[i] *= coef
    return out


@nb.njit(cache=True)
def euler_smooth_line(x0, noises, dt, beta, amp, rng, stride):
    """All-pairs Euler-Maruyama for the compact smooth potential on the line; records every ``stride`` steps."""
    n = x0.shape[0]
    steps = noises.shape[0]
    out = np.empty((steps // stride + 1, n))
    x = x0.copy()
    f = np.empty(n)
    out[0] = x
    sq = math.sqrt(dt)
    c = 3.0 * beta * amp / (rng * rng)    # -(beta/2) Psi'(d) = c d u^2
    k = 1
    for s in range(steps):
        for i in range(n):
            f[i] = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                d = x[i] - x[j]
                if abs(d) < rng:
                    u = 1.0 - (d / rng) ** 2
                    g = c * d * u * u
                    f[i] += g
                    f[j] -= g
        for i in range(n):
            x[i] = x[i] + f[i] * dt + sq * noises[s, i]
        if (s + 1) % stride == 0:
            out[k] = x
            k += 1
    return out
