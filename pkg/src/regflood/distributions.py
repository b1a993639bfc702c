"""Generalized Pareto and four-parameter kappa distributions.

The generalized Pareto (GP) family is parameterized as

    F(x) = 1 - (1 + shape * (x - location) / scale) ** (-1 / shape)

on the support {x >= location, 1 + shape * (x - location) / scale > 0},
with the exponential form F(x) = 1 - exp(-(x - location) / scale) as the
shape -> 0 limit. Positive shape gives a heavy upper tail; negative shape
a finite upper endpoint at location + scale / |shape|.

The kappa family extends GP with a second shape parameter h:

    x(F) = location + scale / k * (1 - ((1 - F**h) / h) ** k)

and reduces to GP (with GP shape = -k) at h = 1 and to the Gumbel law at
h = 0, k = 0. It is used as the simulation parent for heterogeneity tests.

All evaluators switch to the analytic shape -> 0 limit when |shape| falls
below ``SHAPE_EPS`` so quantiles and densities are continuous in shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = [
    "SHAPE_EPS",
    "GpParams",
    "KappaParams",
    "gp_cdf",
    "gp_logpdf",
    "gp_quantile",
    "gp_rescale",
    "gp_sample",
    "kappa_cdf",
    "kappa_quantile",
    "kappa_sample",
]

# Below this magnitude the shape is treated as exactly zero (exponential /
# Gumbel branch); keeps quantiles continuous and avoids 1/shape blowups.
SHAPE_EPS = 1e-8


def as_generator(seed: int | np.random.Generator | None) -> np.random.Generator:
    """Return a numpy Generator from a seed, passing Generators through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _finite_array(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} must be finite")
    return arr


def _maybe_scalar(result: np.ndarray, scalar: bool):
    return float(result[0]) if scalar else result


@dataclass(frozen=True)
class GpParams:
    """Generalized Pareto parameters (location, scale > 0, shape)."""

    location: float
    scale: float
    shape: float

    def __post_init__(self):
        for name in ("location", "scale", "shape"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InputError(f"GP {name} must be finite, got {value!r}")
        if self.scale <= 0:
            raise InputError(f"GP scale must be positive, got {self.scale!r}")

    @property
    def upper_endpoint(self) -> float:
        """Finite upper support endpoint for negative shape, else inf."""
        if self.shape < -SHAPE_EPS:
            return self.location - self.scale / self.shape
        return math.inf


@dataclass(frozen=True)
class KappaParams:
    """Four-parameter kappa: location, scale > 0, shape_k > -1, shape_h.

    For shape_h < 0 the moment-existence condition shape_h * shape_k > -1
    must hold as well.
    """

    location: float
    scale: float
    shape_k: float
    shape_h: float

    def __post_init__(self):
        for name in ("location", "scale", "shape_k", "shape_h"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InputError(f"kappa {name} must be finite, got {value!r}")
        if self.scale <= 0:
            raise InputError(f"kappa scale must be positive, got {self.scale!r}")
        if self.shape_k <= -1:
            raise InputError(f"kappa shape_k must exceed -1, got {self.shape_k!r}")
        if self.shape_h < 0 and self.shape_h * self.shape_k <= -1:
            raise InputError(
                "kappa with shape_h < 0 requires shape_h * shape_k > -1, got "
                f"shape_k={self.shape_k!r}, shape_h={self.shape_h!r}"
            )


def gp_cdf(params: GpParams, x):
    """GP distribution function, clamped to [0, 1] outside the support.

    Values below the location map to 0; values at or beyond the upper
    endpoint (negative shape) map to 1.
    """
    arr = _finite_array(x, "x")
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    y = (arr - params.location) / params.scale
    xi = params.shape
    if abs(xi) < SHAPE_EPS:
        out = -np.expm1(-y)
    else:
        t = 1.0 + xi * y
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(t > 0.0, 1.0 - np.power(np.maximum(t, 1e-300), -1.0 / xi), 1.0)
    out = np.where(y < 0.0, 0.0, out)
    return _maybe_scalar(np.clip(out, 0.0, 1.0), scalar)


def gp_logpdf(params: GpParams, x):
    """GP log density; -inf off the support (x < location or beyond endpoint).

    The hard -inf (rather than an exception) is what the posterior samplers
    rely on to reject proposals that leave the support.
    """
    arr = _finite_array(x, "x")
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    y = (arr - params.location) / params.scale
    xi = params.shape
    log_sigma = math.log(params.scale)
    if abs(xi) < SHAPE_EPS:
        out = -log_sigma - y
    else:
        t = 1.0 + xi * y
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(
                t > 0.0,
                -log_sigma - (1.0 + 1.0 / xi) * np.log(np.maximum(t, 1e-300)),
                -np.inf,
            )
    out = np.where(y < 0.0, -np.inf, out)
    return _maybe_scalar(out, scalar)


def gp_quantile(params: GpParams, p):
    """GP quantile for non-exceedance probability p in [0, 1).

    x(p) = location + scale / shape * ((1 - p) ** -shape - 1), with the
    limit location - scale * log(1 - p) for shape -> 0.
    """
    arr = np.asarray(p, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr >= 1.0):
        raise InputError("probabilities must lie in [0, 1)")
    xi = params.shape
    if abs(xi) < SHAPE_EPS:
        out = params.location - params.scale * np.log1p(-arr)
    else:
        out = params.location + params.scale / xi * np.expm1(-xi * np.log1p(-arr))
    return _maybe_scalar(out, scalar)


def gp_sample(params: GpParams, n: int, seed: int | np.random.Generator | None = None) -> np.ndarray:
    """Draw n variates by inverse-CDF applied to uniforms from the given seed."""
    if n < 0:
        raise InputError(f"sample size must be non-negative, got {n!r}")
    rng = as_generator(seed)
    return np.asarray(gp_quantile(params, rng.random(n)))


def gp_rescale(params: GpParams, factor: float) -> GpParams:
    """Parameters of factor * X: location and scale multiply, shape is invariant."""
    if not math.isfinite(factor) or factor <= 0:
        raise InputError(f"rescale factor must be positive, got {factor!r}")
    return GpParams(factor * params.location, factor * params.scale, params.shape)


def _kappa_y(params: KappaParams, f: np.ndarray) -> np.ndarray:
    # y(F) = (1 - F**h) / h, with the h -> 0 limit -log F.
    h = params.shape_h
    if abs(h) < SHAPE_EPS:
        return -np.log(f)
    return -np.expm1(h * np.log(f)) / h


def kappa_quantile(params: KappaParams, p):
    """Kappa quantile for non-exceedance probability p in (0, 1).

    Uses the analytic k -> 0 and h -> 0 limit branches so the surface is
    continuous where the family degenerates (h=1 is GP, h=0=k is Gumbel).
    """
    arr = np.asarray(p, dtype=float)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise InputError("probabilities must lie in (0, 1)")
    y = _kappa_y(params, arr)
    k = params.shape_k
    if abs(k) < SHAPE_EPS:
        out = params.location - params.scale * np.log(y)
    else:
        out = params.location + params.scale / k * (1.0 - np.power(y, k))
    return _maybe_scalar(out, scalar)


def kappa_cdf(params: KappaParams, x):
    """Kappa distribution function, clamped to [0, 1] outside the support."""
    arr = _finite_array(x, "x")
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    k = params.shape_k
    h = params.shape_h
    z = (arr - params.location) / params.scale
    if abs(k) < SHAPE_EPS:
        y = np.exp(-z)
    else:
        base = 1.0 - k * z
        # base <= 0 means x beyond the k-branch endpoint: above the upper
        # endpoint for k > 0 (F=1, y=0), below the lower one for k < 0 (y=inf).
        with np.errstate(invalid="ignore", divide="ignore"):
            y = np.where(base > 0.0, np.power(np.maximum(base, 1e-300), 1.0 / k), 0.0)
        if k < 0.0:
            y = np.where(base <= 0.0, np.inf, y)
    if abs(h) < SHAPE_EPS:
        out = np.exp(-y)
    else:
        hy = 1.0 - h * y
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(hy > 0.0, np.power(np.maximum(hy, 1e-300), 1.0 / h), 0.0)
        if h < 0.0:
            out = np.where(hy <= 0.0, 1.0, out)  # unreachable for valid y >= 0
    return _maybe_scalar(np.clip(out, 0.0, 1.0), scalar)


def kappa_sample(params: KappaParams, n: int, seed: int | np.random.Generator | None = None) -> np.ndarray:
    """Draw n variates by inverse-CDF applied to uniforms from the given seed."""
    if n < 0:
        raise InputError(f"sample size must be non-negative, got {n!r}")
    rng = as_generator(seed)
    u = rng.random(n)
    # keep u strictly inside (0, 1); random() can return exactly 0.0
    u = np.clip(u, 1e-15, 1.0 - 1e-16)
    return np.asarray(kappa_quantile(params, u))
