"""Extreme-value tail models.

``fit_weibull_tail`` / ``w_score`` mirror libMR's FitHigh: a two-parameter
Weibull is fit by maximum likelihood to the largest distances, shifted to
positive support when needed. The Generalized Pareto model of threshold
excesses is kept alongside it with the standard sign convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

TRANSLATION_EPS = 1e-6
MIN_TAIL = 5
MAX_ITER = 200
SHAPE_BRACKET = (0.01, 100.0)
MAX_SHAPE = 1e7


class DegenerateTailError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    pass


def default_tail_size(n: int) -> int:
    return min(20, math.ceil(n / 2))


@dataclass(frozen=True)
class WeibullTailModel:
    shape: float
    scale: float
    translation: float
    tail_size: int

    def __post_init__(self):
        if not (np.isfinite(self.shape) and self.shape > 0 and np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"invalid Weibull parameters k={self.shape}, lambda={self.scale}")

    def w_score(self, d):
        return w_score(self, d)

    def to_dict(self) -> dict:
        return {
            "kind": "weibull",
            "k": self.shape,
            "lambda": self.scale,
            "t": self.translation,
            "tail_size": self.tail_size,
        }

    @classmethod
    def from_dict(cls, obj) -> "WeibullTailModel":
        return cls(float(obj["k"]), float(obj["lambda"]), float(obj["t"]), int(obj["tail_size"]))


@dataclass(frozen=True)
class GpdModel:
    shape: float  # zeta
    scale: float  # mu
    threshold: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0 and np.isfinite(self.shape)):
            raise ValueError(f"invalid GPD parameters zeta={self.shape}, mu={self.scale}")

    def cdf(self, w):
        return gpd_cdf(self, w)

    def to_dict(self) -> dict:
        return {"kind": "gpd", "zeta": self.shape, "mu": self.scale, "u": self.threshold}

    @classmethod
    def from_dict(cls, obj) -> "GpdModel":
        return cls(float(obj["zeta"]), float(obj["mu"]), float(obj.get("u", 0.0)))


def model_from_dict(obj):
    kind = obj.get("kind")
    if kind == "weibull":
        return WeibullTailModel.from_dict(obj)
    if kind == "gpd":
        return GpdModel.from_dict(obj)
    raise ValueError(f"unknown tail model kind {kind!r}")


def weibull_loglik(x, shape: float, scale: float) -> float:
    x = np.asarray(x, dtype=float)
    z = x / scale
    return float(np.sum(math.log(shape) - math.log(scale) + (shape - 1.0) * np.log(z) - z**shape))


def _shape_equation(k: float, ly: np.ndarray, mean_ly: float) -> tuple[float, float]:
    # ly = log(x / max(x)) <= 0, so y**k never overflows
    w = np.exp(k * ly)
    s0 = w.sum()
    s1 = (w * ly).sum() / s0
    s2 = (w * ly * ly).sum() / s0
    g = s1 - 1.0 / k - mean_ly
    dg = s2 - s1 * s1 + 1.0 / (k * k)
    return g, dg


def _solve_shape(x: np.ndarray) -> float:
    ly = np.log(x / x.max())
    mean_ly = ly.mean()
    lo, hi = SHAPE_BRACKET
    g_lo, _ = _shape_equation(lo, ly, mean_ly)
    while g_lo > 0 and lo > 1e-8:
        lo /= 10.0
        g_lo, _ = _shape_equation(lo, ly, mean_ly)
    g_hi, _ = _shape_equation(hi, ly, mean_ly)
    while g_hi < 0 and hi < MAX_SHAPE:
        hi *= 2.0
        g_hi, _ = _shape_equation(hi, ly, mean_ly)
    if g_lo > 0 or g_hi < 0:
        raise ConvergenceError(f"shape equation has no root in [{lo:g}, {hi:g}]")

    sd = np.std(np.log(x))
    k = 1.2825 / sd if sd > 0 else 1.0
    if not lo < k < hi:
        k = 0.5 * (lo + hi)
    g = float("nan")
    for _ in range(MAX_ITER):
        g, dg = _shape_equation(k, ly, mean_ly)
        if g == 0.0:
            return k
        if g < 0:
            lo = k
        else:
            hi = k
        step = g / dg if dg > 0 else float("inf")
        k_new = k - step
        if not lo < k_new < hi:
            k_new = 0.5 * (lo + hi)
        if abs(k_new - k) <= 1e-13 * k or hi - lo <= 1e-13 * k:
            return k_new
        k = k_new
    raise ConvergenceError(f"Weibull shape did not converge after {MAX_ITER} iterations (residual {g:.3e})")


def fit_weibull_tail(
    samples, tail_size: Optional[int] = None, shape: Optional[float] = None, shift: str = "excess"
) -> WeibullTailModel:
    """Fit a Weibull to the ``tail_size`` largest samples (libMR FitHigh).

    Parameters
    ----------
    samples : array_like
        Scores, typically distances of training points to their class model.
    tail_size : int, optional
        Defaults to ``min(20, ceil(n / 2))``.
    shape : float, optional
        Hold the Weibull shape fixed and fit only the scale.
    shift : {"excess", "positive"}
        ``"excess"`` always moves the smallest tail value to ``1e-6`` so the
        Weibull models excesses over the tail threshold. ``"positive"``
        shifts only when the tail reaches zero or below.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if tail_size is None:
        tail_size = default_tail_size(len(x))
    if tail_size < MIN_TAIL:
        raise ValueError(f"tail_size must be >= {MIN_TAIL}")
    if len(x) < tail_size:
        raise ValueError(f"need at least tail_size={tail_size} samples, got {len(x)}")
    tail = x[-tail_size:]
    if tail[-1] == tail[0]:
        raise DegenerateTailError("degenerate tail: all tail values are identical")
    if shift == "excess" or (shift == "positive" and tail[0] <= 0):
        translation = -tail[0] + TRANSLATION_EPS
    elif shift == "positive":
        translation = 0.0
    else:
        raise ValueError(f"unknown shift {shift!r}")
    xt = tail + translation
    k = float(shape) if shape is not None else _solve_shape(xt)
    top = xt.max()
    scale = top * float(np.mean(np.exp(k * np.log(xt / top)))) ** (1.0 / k)
    return WeibullTailModel(k, float(scale), float(translation), int(tail_size))


def w_score(m: WeibullTailModel, d):
    """Weibull CDF at ``d + t``; 0 where ``d + t <= 0``."""
    z = np.asarray(d, dtype=float) + m.translation
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(z > 0, -np.expm1(-(np.maximum(z, 0.0) / m.scale) ** m.shape), 0.0)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def gpd_cdf(m: GpdModel, w):
    """Generalized Pareto CDF of an excess ``w`` over the threshold."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("GPD excess must be nonnegative")
    z = m.shape * w / m.scale
    if np.any(z < -1):
        raise ValueError("GPD support violated: zeta * w must exceed -mu")
    if m.shape == 0.0:
        out = 1.0 - np.exp(-w / m.scale)
    else:
        with np.errstate(divide="ignore"):
            out = 1.0 - np.exp(-np.log1p(z) / m.shape)
    out = np.clip(out, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def gpd_loglik(x, shape: float, scale: float) -> float:
    x = np.asarray(x, dtype=float)
    if shape == 0.0:
        return float(-len(x) * math.log(scale) - x.sum() / scale)
    z = 1.0 + shape * x / scale
    if np.any(z <= 0):
        return -math.inf
    return float(-len(x) * math.log(scale) - (1.0 + 1.0 / shape) * np.log(z).sum())


def _gpd_profile(theta: float, x: np.ndarray) -> tuple[float, float, float, float]:
    """Profile log-likelihood per observation in theta = zeta / mu.

    Returns (value, first derivative, second derivative, zeta_hat).
    """
    if theta == 0.0:
        m = x.mean()
        return -math.log(m) - 1.0, math.nan, math.nan, 0.0
    u = 1.0 + theta * x
    zeta = float(np.log(u).mean())
    d1 = float((x / u).mean())
    d2 = float(-(x * x / (u * u)).mean())
    value = -math.log(zeta / theta) - zeta - 1.0
    grad = -d1 / zeta + 1.0 / theta - d1
    hess = -(d2 * zeta - d1 * d1) / (zeta * zeta) - 1.0 / (theta * theta) - d2
    return value, grad, hess, zeta


def fit_gpd(excesses, threshold: float = 0.0) -> GpdModel:
    """Maximum-likelihood GPD fit to positive threshold excesses.

    The likelihood is profiled over ``theta = zeta / mu`` (Grimshaw's
    reduction). A fixed log-spaced grid picks the starting bracket, then a
    safeguarded Newton iteration refines it. Shapes below -1 are excluded,
    where the likelihood is unbounded.
    """
    x = np.asarray(excesses, dtype=float).ravel()
    x = x[x > 0]
    if x.size < 10:
        raise ValueError(f"need at least 10 positive excesses, got {x.size}")
    if x.max() == x.min():
        raise DegenerateTailError("degenerate excesses: all values are identical")
    xmax, xbar = x.max(), x.mean()

    neg = -(1.0 - np.geomspace(1e-6, 1.0 - 1e-4, 60)) / xmax
    pos = np.geomspace(1e-4, 1e3, 80) / xbar
    grid = np.concatenate([np.sort(neg), [0.0], pos])
    values = np.full(grid.size, -math.inf)
    for i, th in enumerate(grid):
        val, _, _, zeta = _gpd_profile(float(th), x)
        if zeta >= -1.0 and math.isfinite(val):
            values[i] = val
    best = int(np.argmax(values))
    if not math.isfinite(values[best]):
        raise ConvergenceError("GPD profile likelihood is not finite on the search grid")

    interior = 0 < best < grid.size - 1 and math.isfinite(values[best - 1]) and math.isfinite(values[best + 1])
    theta = float(grid[best])
    if interior:
        lo, hi = float(grid[best - 1]), float(grid[best + 1])
        if theta == 0.0:
            theta = 0.5 * (lo if values[best - 1] > values[best + 1] else hi)
        converged = False
        for _ in range(MAX_ITER):
            _, grad, hess, _ = _gpd_profile(theta, x)
            if grad > 0:
                lo = theta
            else:
                hi = theta
            new = theta - grad / hess if hess < 0 else math.nan
            if not (lo < new < hi) or new == 0.0:
                new = 0.5 * (lo + hi)
            if abs(new - theta) <= 1e-12 * abs(theta) or hi - lo <= 1e-14 / xbar:
                theta = new
                converged = True
                break
            theta = new
        if not converged:
            raise ConvergenceError(f"GPD fit did not converge after {MAX_ITER} iterations")
        # a flat profile can leave Newton on a worse point than the grid
        if _gpd_profile(theta, x)[0] < values[best]:
            theta = float(grid[best])

    if theta == 0.0:
        return GpdModel(0.0, float(xbar), float(threshold))
    zeta = float(np.log1p(theta * x).mean())
    return GpdModel(zeta, zeta / theta, float(threshold))
