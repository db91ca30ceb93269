"""Lorentz (hyperboloid) model primitives.

Points live on the upper sheet {x in R^{n+1} : <x,x>_L = 1/K, x_0 > 0} of the
hyperboloid of constant negative curvature K, where <x,y>_L is the Minkowski
inner product -x_0*y_0 + sum_i x_i*y_i.  All arrays are float64; batches are
stacked along the leading axis, with index 0 the time coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

# Tolerance for *validating* inputs.  Freshly produced points are accurate to
# ~1e-12 at moderate radii; a looser gate avoids false aborts in long chains.
ONMANIFOLD_ATOL = 1e-6


def validate_curvature(curvature: float) -> float:
    curvature = float(curvature)
    if not np.isfinite(curvature) or curvature >= 0.0:
        raise ValueError(f"curvature must be a finite negative real, got {curvature}")
    return curvature


def origin(dim: int, curvature: float = -1.0) -> np.ndarray:
    """Canonical base point [sqrt(-1/K), 0, ..., 0] of the dim-dimensional sheet."""
    curvature = validate_curvature(curvature)
    x = np.zeros(dim + 1)
    x[0] = 1.0 / np.sqrt(-curvature)
    return x


def minkowski_inner(x, y) -> np.ndarray:
    """Minkowski inner product -x0*y0 + sum_{i>=1} xi*yi, broadcasting over batches."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    if x.shape[-1] < 2:
        raise ValueError("vectors need at least 2 coordinates (time + space)")
    return -x[..., 0] * y[..., 0] + np.sum(x[..., 1:] * y[..., 1:], axis=-1)


def manifold_violation(x, curvature: float) -> np.ndarray:
    """Absolute deviation |<x,x>_L - 1/K| per point."""
    curvature = validate_curvature(curvature)
    return np.abs(minkowski_inner(x, x) - 1.0 / curvature)


def check_on_manifold(x, curvature: float, atol: float = ONMANIFOLD_ATOL) -> None:
    x = np.asarray(x, dtype=float)
    bad = manifold_violation(x, curvature) > atol
    if np.any(bad):
        worst = float(np.max(manifold_violation(x, curvature)))
        raise NumericalError(
            f"point(s) off the Lorentz manifold (max |<x,x>_L - 1/K| = {worst:.3e})"
        )
    if np.any(x[..., 0] <= 0.0):
        raise NumericalError("point(s) on the lower sheet (time coordinate <= 0)")


def project_to_hyperboloid(x, curvature: float) -> np.ndarray:
    """Recompute the time coordinate from the spatial part: x0 = sqrt(||xs||^2 - 1/K).

    Used to pin down the manifold invariant after long chains of operations.
    """
    curvature = validate_curvature(curvature)
    x = np.asarray(x, dtype=float)
    spatial = x[..., 1:]
    t = np.sqrt(np.sum(spatial**2, axis=-1) - 1.0 / curvature)
    return np.concatenate([t[..., None], spatial], axis=-1)


def _sinhc(a: np.ndarray) -> np.ndarray:
    # sinh(a)/a with the a -> 0 limit; series keeps full precision below 1e-4
    a = np.asarray(a, dtype=float)
    small = np.abs(a) < 1e-4
    safe = np.where(small, 1.0, a)
    out = np.where(small, 1.0 + a**2 / 6.0 + a**4 / 120.0, np.sinh(safe) / safe)
    return out


def _acosh_over_sq(beta: np.ndarray) -> np.ndarray:
    # arccosh(beta)/sqrt(beta^2-1) with the beta -> 1 limit (value 1)
    beta = np.asarray(beta, dtype=float)
    h = np.maximum(beta - 1.0, 0.0)
    small = h < 1e-6
    safe = np.where(small, 2.0, beta)
    out = np.where(
        small,
        1.0 - h / 3.0 + 2.0 * h**2 / 15.0,
        np.arccosh(safe) / np.sqrt(safe**2 - 1.0),
    )
    return out


def exp_origin(v, curvature: float = -1.0) -> np.ndarray:
    """Exponential map at the origin: cosh(a)*x_o + sinh(a)*v/a, a = sqrt(|K|)*||v||_L.

    v = 0 returns the origin.  Timelike tangents (<v,v>_L < 0) are rejected.
    """
    curvature = validate_curvature(curvature)
    v = np.asarray(v, dtype=float)
    vv = minkowski_inner(v, v)
    if np.any(vv < -1e-9):
        raise NumericalError("tangent vector is timelike (<v,v>_L < 0)")
    vv = np.maximum(vv, 0.0)
    a = np.sqrt(-curvature * vv)
    base = origin(v.shape[-1] - 1, curvature)
    return np.cosh(a)[..., None] * base + _sinhc(a)[..., None] * v


def log_origin(y, curvature: float = -1.0) -> np.ndarray:
    """Logarithmic map at the origin (inverse of exp_origin); y = x_o returns 0."""
    curvature = validate_curvature(curvature)
    y = np.asarray(y, dtype=float)
    check_on_manifold(y, curvature)
    base = origin(y.shape[-1] - 1, curvature)
    return _log_at(base, y, curvature, validate=False)


def _exp_at(x, v, curvature: float) -> np.ndarray:
    # general-base exponential map; only exercised through wrapped_normal_sample
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    vv = np.maximum(minkowski_inner(v, v), 0.0)
    a = np.sqrt(-curvature * vv)
    return np.cosh(a)[..., None] * x + _sinhc(a)[..., None] * v


def _log_at(x, y, curvature: float, validate: bool = True) -> np.ndarray:
    # general-base logarithmic map: f(beta)*(y - beta*x), beta = K*<x,y>_L
    if validate:
        check_on_manifold(x, curvature)
        check_on_manifold(y, curvature)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = curvature * minkowski_inner(x, y)
    beta = np.maximum(beta, 1.0)
    return _acosh_over_sq(beta)[..., None] * (y - beta[..., None] * x)


def geodesic_distance(x, y, curvature: float = -1.0) -> np.ndarray:
    """Geodesic distance (1/sqrt(|K|)) * arccosh(K*<x,y>_L).

    The argument is clamped to [1, inf); on-manifold pairs satisfy
    K*<x,y>_L >= 1 up to float drift.
    """
    curvature = validate_curvature(curvature)
    check_on_manifold(x, curvature)
    check_on_manifold(y, curvature)
    w = curvature * minkowski_inner(x, y)
    w = np.maximum(w, 1.0)
    return np.arccosh(w) / np.sqrt(-curvature)


def parallel_transport(v, x, y, curvature: float = -1.0) -> np.ndarray:
    """Transport tangent vector v from T_x to T_y along the geodesic.

    Isometric: the Lorentz norm and tangency are preserved.  x = y returns v.
    """
    curvature = validate_curvature(curvature)
    v = np.asarray(v, dtype=float)
    check_on_manifold(x, curvature)
    check_on_manifold(y, curvature)
    tangency = np.abs(minkowski_inner(v, x))
    if np.any(tangency > 1e-6 * (1.0 + np.abs(v).max())):
        raise NumericalError("v is not tangent at x (<v,x>_L != 0)")
    lx = _log_at(x, y, curvature, validate=False)
    d2 = minkowski_inner(lx, lx)
    if np.ndim(d2) == 0:
        if d2 < 1e-24:
            return v.copy()
    ly = _log_at(y, x, curvature, validate=False)
    coeff = minkowski_inner(lx, v) / np.where(np.asarray(d2) < 1e-24, 1.0, d2)
    out = v - coeff[..., None] * (lx + ly)
    if np.ndim(d2) > 0:
        out = np.where(np.asarray(d2)[..., None] < 1e-24, v, out)
    return out


@dataclass(frozen=True)
class DirectionSet:
    """Unit tangent directions at the origin (time coordinate 0, unit spatial part)."""

    directions: np.ndarray  # (L, n+1)
    seed: int

    def __len__(self) -> int:
        return self.directions.shape[0]


def sample_directions(count: int, dim: int, seed: int) -> DirectionSet:
    """Sample `count` directions uniformly on the unit sphere of T_{x_o}L^dim.

    Spatial parts are normalized Gaussian draws; deterministic for a fixed seed.
    """
    if count < 1 or dim < 1:
        raise ValueError("need count >= 1 and dim >= 1")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((count, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero draw has probability 0; resample defensively anyway
    while np.any(norms == 0.0):
        g[norms[:, 0] == 0.0] = rng.standard_normal((int(np.sum(norms[:, 0] == 0.0)), dim))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    dirs = np.concatenate([np.zeros((count, 1)), g / norms], axis=1)
    return DirectionSet(directions=dirs, seed=int(seed))


def wrapped_normal_sample(mean, scale: float, count: int, curvature: float, seed: int) -> np.ndarray:
    """Draw points around `mean` by pushing origin-Gaussian tangents through exp.

    Tangents ~ N(0, scale^2 I) at the origin are parallel-transported to `mean`
    and mapped onto the manifold there.
    """
    curvature = validate_curvature(curvature)
    mean = np.asarray(mean, dtype=float)
    check_on_manifold(mean, curvature)
    if scale < 0:
        raise ValueError("scale must be nonnegative")
    n = mean.shape[-1] - 1
    rng = np.random.default_rng(seed)
    v = np.concatenate(
        [np.zeros((count, 1)), scale * rng.standard_normal((count, n))], axis=1
    )
    base = origin(n, curvature)
    u = parallel_transport(v, np.broadcast_to(base, v.shape), np.broadcast_to(mean, v.shape), curvature)
    return _exp_at(np.broadcast_to(mean, u.shape), u, curvature)
