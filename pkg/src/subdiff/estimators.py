"""Mean-squared displacement, scaling fits, diffusion estimates and marginal Gaussianity.

``msd.csv`` columns: ``time,msd,stderr``.  ``fit.json`` holds one object per
fit with keys ``model, coefficient, exponent_or_slope, r_squared, window``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .io import dump_json, read_csv, write_csv

log = logging.getLogger(__name__)

FIT_MODELS = ("power_law", "log_linear", "linear")


@dataclass(eq=False)
class MsdCurve:
    times: np.ndarray
    msd: np.ndarray
    stderr: np.ndarray
    n_replicas: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.msd = np.asarray(self.msd, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (self.times.shape == self.msd.shape == self.stderr.shape):
            raise ValueError("times, msd and stderr differ in shape")
        if np.any(self.msd < 0) or np.any(self.stderr < 0):
            raise ValueError("msd and stderr must be non-negative")

    def at(self, t):
        """Index of the grid time closest to ``t``."""
        return int(np.argmin(np.abs(self.times - t)))

    def to_csv(self, path):
        write_csv(path, ["time", "msd", "stderr"], [self.times, self.msd, self.stderr])

    @classmethod
    def from_csv(cls, path, n_replicas=0):
        _, d = read_csv(path)
        return cls(d[:, 0], d[:, 1], d[:, 2], n_replicas)


@dataclass(frozen=True)
class ScalingFit:
    """``power_law``: msd = c t^p; ``log_linear``: msd = c + s log t; ``linear``: msd = c + s t."""

    model: str
    coefficient: float
    exponent_or_slope: float
    r_squared: float
    window: tuple

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        if self.model == "power_law":
            return self.coefficient * t**self.exponent_or_slope
        if self.model == "log_linear":
            return self.coefficient + self.exponent_or_slope * np.log(t)
        return self.coefficient + self.exponent_or_slope * t

    def to_dict(self):
        d = asdict(self)
        d["window"] = list(self.window)
        return d


def _displacements(rec, paths, frame):
    if paths == "tagged":
        d = (rec.tagged_path - rec.tagged_path[0])[None, :]
    elif paths == "all":
        if rec.all_paths is None:
            raise ValueError("paths='all' needs recorded all_paths")
        d = rec.all_paths - rec.all_paths[:, :1]
    else:
        raise ValueError(f"unknown paths selector {paths!r}")
    if frame == "com":
        if rec.com_path is None:
            raise ValueError("frame='com' needs a recorded com_path")
        d = d - (rec.com_path - rec.com_path[0])
    elif frame != "lab":
        raise ValueError(f"unknown frame {frame!r}")
    return d


def squared_displacement(rec, paths: str = "tagged", frame: str = "lab") -> np.ndarray:
    """One replica's squared displacement per time (averaged over its recorded particles)."""
    return np.mean(_displacements(rec, paths, frame) ** 2, axis=0)


def msd_from_replicas(times, per_replica) -> MsdCurve:
    """Combine per-replica squared displacements (rows) into an :class:`MsdCurve`."""
    per = np.atleast_2d(np.asarray(per_replica, dtype=float))
    n = per.shape[0]
    m = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(m)
    return MsdCurve(np.array(times, dtype=float), m, se, n)


def msd(records, paths: str = "tagged", frame: str = "lab") -> MsdCurve:
    """Replica mean of the squared displacement ``(X_t - X_0)^2``.

    With ``paths='all'`` each replica contributes the average over its recorded
    particles (exchangeable particles, one value per replica).  ``frame='com'``
    measures displacements relative to the centre of mass, which removes the
    free diffusion of the whole periodic system.  Standard errors come from the
    spread across replicas.
    """
    records = list(records)
    if not records:
        raise ValueError("no records")
    times = records[0].times
    per = np.empty((len(records), times.size))
    for r, rec in enumerate(records):
        if rec.times.shape != times.shape or not np.array_equal(rec.times, times):
            raise ValueError("records do not share a time grid")
        per[r] = squared_displacement(rec, paths, frame)
    return msd_from_replicas(times, per)


def gaussianity_from_displacements(disp, t: float, variance_hypothesis: float):
    """KS test of displacements at time ``t`` against Normal(0, variance_hypothesis * t)."""
    disp = np.asarray(disp, dtype=float)
    if disp.size < 100:
        raise ValueError("gaussianity check needs at least 100 replicas")
    if not variance_hypothesis > 0 or not t > 0:
        raise ValueError("t and variance_hypothesis must be positive")
    res = stats.kstest(disp / math.sqrt(variance_hypothesis * t), "norm")
    return float(res.statistic), float(res.pvalue)


def _window_points(curve, window, positive):
    lo, hi = window
    if not hi > lo:
        raise ValueError("degenerate window")
    sel = (curve.times >= lo) & (curve.times <= hi)
    if positive:
        sel &= curve.times > 0
    return curve.times[sel], curve.msd[sel]


def log_grid(t, y, n_points):
    """Thin a uniform grid to about ``n_points`` geometrically spaced samples."""
    if n_points is None or t.size <= n_points:
        return t, y
    target = np.geomspace(t[0], t[-1], n_points)
    idx = np.unique(np.clip(np.searchsorted(t, target), 0, t.size - 1))
    return t[idx], y[idx]


def fit_scaling(curve: MsdCurve, model: str, window, n_log_points=None) -> ScalingFit:
    """Ordinary least squares in transformed coordinates over ``window``.

    ``n_log_points`` optionally thins the window to geometrically spaced
    points, so that every decade carries comparable weight.
    """
    if model not in FIT_MODELS:
        raise ValueError(f"unknown model {model!r}")
    t, y = _window_points(curve, window, positive=model != "linear")
    t, y = log_grid(t, y, n_log_points)
    if t.size < 5:
        raise ValueError("fewer than 5 points in fit window")
    if model == "power_law":
        if np.any(y <= 0):
            raise ValueError("power-law fit needs positive msd")
        u, v = np.log(t), np.log(y)
    elif model == "log_linear":
        u, v = np.log(t), y
    else:
        u, v = t, y
    if np.ptp(u) == 0:
        raise ValueError("degenerate window")
    res = stats.linregress(u, v)
    r2 = float(res.rvalue**2) if np.ptp(v) > 0 else 1.0
    coef = math.exp(res.intercept) if model == "power_law" else float(res.intercept)
    return ScalingFit(model, coef, float(res.slope), min(max(r2, 0.0), 1.0), (float(window[0]), float(window[1])))


def self_diffusion_fit(curve: MsdCurve, window) -> ScalingFit:
    return fit_scaling(curve, "linear", window)


def self_diffusion_msd(curve: MsdCurve, window) -> float:
    """Slope of msd against t over ``window``: the linear diffusion coefficient estimate."""
    fit = self_diffusion_fit(curve, window)
    log.info("self-diffusion slope %.4g over %s (R^2 = %.3f)", fit.exponent_or_slope, window, fit.r_squared)
    return fit.exponent_or_slope


def windowed_slopes(curve: MsdCurve, centers) -> np.ndarray:
    """Linear msd slopes over ``[c/2, 2c]`` for each window centre ``c``."""
    return np.array([self_diffusion_msd(curve, (0.5 * c, 2.0 * c)) for c in centers])


def gaussianity_check(records, t: float, variance_hypothesis: float):
    """KS test of tagged displacements at time ``t`` against Normal(0, variance_hypothesis * t).

    Returns ``(statistic, p_value)``.  A marginal check only: it says nothing
    about the dependence structure of the path.
    """
    records = list(records)
    if len(records) < 100:
        raise ValueError("gaussianity check needs at least 100 replicas")
    k = int(np.argmin(np.abs(records[0].times - t)))
    disp = np.array([r.tagged_path[k] - r.tagged_path[0] for r in records])
    return gaussianity_from_displacements(disp, records[0].times[k], variance_hypothesis)


def write_fits(fits, path):
    dump_json([f.to_dict() for f in fits], path)


# --- SVG --------------------------------------------------------------------

def _svg_path(xs, ys):
    return " ".join(f"{'M' if i == 0 else 'L'}{x:.2f},{y:.2f}" for i, (x, y) in enumerate(zip(xs, ys)))


def plot_loglog(curve: MsdCurve, path, fits=(), title="", reference=None):
    """Self-contained SVG of msd(t) on log-log axes with optional fit overlays.

    ``reference`` is an optional ``(label, callable)`` drawn dashed (e.g. t).
    """
    W, H, pad = 640, 440, 60
    sel = (curve.times > 0) & (curve.msd > 0)
    t, y = curve.times[sel], curve.msd[sel]
    t, y = log_grid(t, y, 400)
    if t.size < 2:
        raise ValueError("nothing to plot")
    lx, ly = np.log10(t), np.log10(y)
    x0, x1 = math.floor(lx.min()), math.ceil(lx.max())
    y0, y1 = math.floor(ly.min()), math.ceil(ly.max())
    if y1 == y0:
        y1 += 1

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (W - 2 * pad)

    def py(v):
        return H - pad - (v - y0) / (y1 - y0) * (H - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle">{title}</text>',
        f'<rect x="{pad}" y="{pad}" width="{W - 2 * pad}" height="{H - 2 * pad}" fill="none" stroke="black"/>',
    ]
    for e in range(x0, x1 + 1):
        parts.append(f'<text x="{px(e):.1f}" y="{H - pad + 18}" text-anchor="middle">1e{e}</text>')
    for e in range(y0, y1 + 1):
        parts.append(f'<text x="{pad - 6}" y="{py(e) + 4:.1f}" text-anchor="end">1e{e}</text>')
    parts.append(f'<text x="{W / 2}" y="{H - 12}" text-anchor="middle">t</text>')
    parts.append(f'<text x="14" y="{H / 2}" transform="rotate(-90 14 {H / 2})" text-anchor="middle">MSD</text>')
    parts.append(f'<path d="{_svg_path(px(lx), py(ly))}" fill="none" stroke="#1f4e99" stroke-width="2"/>')
    colors = ["#c0392b", "#27ae60", "#8e44ad"]
    for k, fit in enumerate(fits):
        tt = np.geomspace(max(fit.window[0], t[0]), min(fit.window[1], t[-1]), 50)
        yy = fit.predict(tt)
        ok = yy > 0
        if ok.sum() < 2:
            continue
        c = colors[k % len(colors)]
        parts.append(f'<path d="{_svg_path(px(np.log10(tt[ok])), py(np.log10(yy[ok])))}" fill="none" '
                     f'stroke="{c}" stroke-width="1.5"/>')
        label = f"{fit.model}: {fit.exponent_or_slope:.4g} (R2 {fit.r_squared:.3f})"
        parts.append(f'<text x="{pad + 10}" y="{pad + 18 + 16 * k}" fill="{c}">{label}</text>')
    if reference is not None:
        name, fn = reference
        yy = fn(t)
        ok = (yy > 0) & (np.log10(np.maximum(yy, 1e-300)) <= y1)
        if ok.sum() >= 2:
            parts.append(f'<path d="{_svg_path(px(lx[ok]), py(np.log10(yy[ok])))}" fill="none" stroke="gray" '
                         f'stroke-dasharray="5,4"/>')
            parts.append(f'<text x="{W - pad - 10}" y="{pad + 18}" text-anchor="end" fill="gray">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
