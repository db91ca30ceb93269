"""Hyperbolic sliced-Wasserstein machinery.

Projects Lorentz-manifold batches to the real line (horospherical Busemann or
geodesic projection), computes 1D Wasserstein distances by sorted pairing of
equal-size uniform empirical measures, and averages over random directions and
view pairs.  All losses return the p-th power of W_p.

The *_grad variants return the loss together with its gradient with respect to
the ambient point coordinates; the sort permutation is held fixed within a
backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import NumericalError
from .geometry import check_on_manifold, validate_curvature

PROJECTION_KINDS = ("horospherical", "geodesic")


@dataclass(frozen=True)
class SwConfig:
    """Sliced-Wasserstein settings: direction count, order p, projection kind."""

    num_directions: int = 128
    order: float = 2.0
    projection_kind: str = "horospherical"
    seed: int = 0

    def __post_init__(self):
        if self.num_directions < 1:
            raise ValueError("num_directions must be >= 1")
        if self.order < 1.0:
            raise ValueError("Wasserstein order must be >= 1")
        if self.projection_kind not in PROJECTION_KINDS:
            raise ValueError(f"projection_kind must be one of {PROJECTION_KINDS}")


class ClampCounter:
    """Counts boundary clamps in the geodesic projection (drifted inputs)."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += int(n)

    def reset(self):
        self.count = 0


geodesic_clamp_counter = ClampCounter()

_ARCTANH_LIMIT = 1.0 - 1e-12


def _rescale_to_unit_curvature(points, curvature):
    # App-D projection formulas are specialized to K = -1; multiplying the
    # coordinates by sqrt(|K|) lands the batch on the unit hyperboloid.
    curvature = validate_curvature(curvature)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    check_on_manifold(points, curvature)
    scale = np.sqrt(-curvature)
    return points * scale, scale


def _check_directions(dirs, dim):
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    if dirs.shape[1] != dim:
        raise ValueError(f"direction dimension {dirs.shape[1]} != point dimension {dim}")
    return dirs


def _busemann_values(z, dirs):
    # z on the K=-1 sheet; value = log(-<z, x_o + theta>_L), always defined
    # on-manifold since z0 - <z_s, theta> >= z0 - ||z_s|| > 0.
    ip = -z[:, :1] + z[:, 1:] @ dirs[:, 1:].T  # (B, L)
    if np.any(ip >= 0):
        raise NumericalError("Busemann log argument is nonpositive (off-manifold input)")
    return np.log(-ip), ip


def _geodesic_values(z, dirs):
    ip_theta = z[:, 1:] @ dirs[:, 1:].T  # (B, L)
    t = ip_theta / z[:, :1]
    clamped = np.abs(t) >= _ARCTANH_LIMIT
    if np.any(clamped):
        geodesic_clamp_counter.add(np.sum(clamped))
        t = np.clip(t, -_ARCTANH_LIMIT, _ARCTANH_LIMIT)
    return np.arctanh(t), (t, clamped, ip_theta)


def busemann_project(points, theta, curvature: float = -1.0) -> np.ndarray:
    """Horospherical projection log(-<z, x_o + theta>_L) of each point."""
    z, _ = _rescale_to_unit_curvature(points, curvature)
    dirs = _check_directions(theta, z.shape[1])
    values, _ = _busemann_values(z, dirs)
    return values[:, 0] if np.asarray(theta).ndim == 1 else values


def geodesic_project(points, theta, curvature: float = -1.0) -> np.ndarray:
    """Geodesic projection arctanh(-<z,theta>_L / <z,x_o>_L) of each point."""
    z, _ = _rescale_to_unit_curvature(points, curvature)
    dirs = _check_directions(theta, z.shape[1])
    values, _ = _geodesic_values(z, dirs)
    return values[:, 0] if np.asarray(theta).ndim == 1 else values


def _project_all(points, dirs, curvature, kind):
    z, scale = _rescale_to_unit_curvature(points, curvature)
    dirs = _check_directions(dirs, z.shape[1])
    if kind == "horospherical":
        values, ip = _busemann_values(z, dirs)
        cache = ("h", z, dirs, ip, scale)
    else:
        values, aux = _geodesic_values(z, dirs)
        cache = ("g", z, dirs, aux, scale)
    return values, cache


def _project_all_backward(dvalues, cache):
    kind, z, dirs, aux, scale = cache
    dz = np.zeros_like(z)
    if kind == "h":
        ip = aux
        dip = dvalues / ip  # d log(-ip) = dip/ip
        dz[:, 0] = -dip.sum(axis=1)
        dz[:, 1:] = dip @ dirs[:, 1:]
    else:
        t, clamped, ip_theta = aux
        dt = np.where(clamped, 0.0, dvalues / (1.0 - t**2))
        dz[:, 1:] = (dt / z[:, :1]) @ dirs[:, 1:]
        dz[:, 0] = -np.sum(dt * ip_theta, axis=1) / z[:, 0] ** 2
    return dz * scale  # chain through the K-rescaling


def wasserstein_1d(u, v, order: float = 2.0) -> float:
    """p-th power of the 1D Wasserstein distance between equal-size samples.

    Both arrays are sorted and paired rank-by-rank: (1/B) * sum |u_(i)-v_(i)|^p.
    """
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.shape != v.shape:
        raise ValueError(f"size mismatch: {u.shape[0]} vs {v.shape[0]}")
    if u.size < 1:
        raise ValueError("empty samples")
    if order < 1.0:
        raise ValueError("Wasserstein order must be >= 1")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise NumericalError("non-finite projected values")
    d = np.sort(u) - np.sort(v)
    return float(np.mean(np.abs(d) ** order))


def _columnwise_w1d_grad(pu, pv, order):
    # pu, pv: (B, L) projected values; returns per-direction W_p^p plus
    # gradients w.r.t. the projected values (sort treated as constant).
    B = pu.shape[0]
    iu = np.argsort(pu, axis=0, kind="stable")
    iv = np.argsort(pv, axis=0, kind="stable")
    d = np.take_along_axis(pu, iu, axis=0) - np.take_along_axis(pv, iv, axis=0)
    absd = np.abs(d)
    w = np.mean(absd**order, axis=0)  # (L,)
    g = (order / B) * absd ** (order - 1.0) * np.sign(d)
    du = np.zeros_like(pu)
    dv = np.zeros_like(pv)
    np.put_along_axis(du, iu, g, axis=0)
    np.put_along_axis(dv, iv, -g, axis=0)
    return w, du, dv


def hhsw_pair(za, zb, dirs, cfg: SwConfig, curvature: float = -1.0) -> float:
    """Sliced distance between two same-size Lorentz batches, averaged over directions."""
    value, _, _ = hhsw_pair_grad(za, zb, dirs, cfg, curvature, need_grad=False)
    return value


def hhsw_pair_grad(za, zb, dirs, cfg: SwConfig, curvature: float = -1.0, need_grad: bool = True):
    za = np.atleast_2d(np.asarray(za, dtype=float))
    zb = np.atleast_2d(np.asarray(zb, dtype=float))
    if za.shape != zb.shape:
        raise ValueError(f"batch shape mismatch: {za.shape} vs {zb.shape}")
    directions = dirs.directions if hasattr(dirs, "directions") else np.asarray(dirs)
    kind = cfg.projection_kind
    pa, cache_a = _project_all(za, directions, curvature, kind)
    pb, cache_b = _project_all(zb, directions, curvature, kind)
    w, dpa, dpb = _columnwise_w1d_grad(pa, pb, cfg.order)
    L = w.shape[0]
    value = float(np.mean(w))
    if not need_grad:
        return value, None, None
    dza = _project_all_backward(dpa / L, cache_a)
    dzb = _project_all_backward(dpb / L, cache_b)
    return value, dza, dzb


def view_pairs(num_views: int):
    """Unordered view pairs; |V| = M(M-1)/2."""
    return list(combinations(range(num_views), 2))


def hhsw_alignment_loss(views, dirs, cfg: SwConfig, curvature: float = -1.0) -> float:
    """Mean sliced distance over all unordered view pairs; zero when all views coincide."""
    value, _ = hhsw_alignment_loss_grad(views, dirs, cfg, curvature, need_grad=False)
    return value


def hhsw_alignment_loss_grad(views, dirs, cfg: SwConfig, curvature: float = -1.0, need_grad: bool = True):
    if len(views) < 2:
        raise ValueError("alignment needs at least 2 views")
    pairs = view_pairs(len(views))
    total = 0.0
    grads = [np.zeros_like(np.atleast_2d(np.asarray(v, dtype=float))) for v in views] if need_grad else None
    for (a, b) in pairs:
        value, dza, dzb = hhsw_pair_grad(views[a], views[b], dirs, cfg, curvature, need_grad)
        total += value
        if need_grad:
            grads[a] += dza / len(pairs)
            grads[b] += dzb / len(pairs)
    return total / len(pairs), grads
