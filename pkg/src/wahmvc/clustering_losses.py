"""Soft-assignment post-processing and the scalar training objectives.

Covers the square-and-renormalize target redistribution, the cluster-level
contrastive loss over cross-view assignment similarities, the entropy balance
regularizer, the weighted total objective, consensus label inference, and the
instance-level Lorentz contrastive baseline.  Each differentiable piece comes
with an explicit backward companion used by the manual training loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .geometry import minkowski_inner, validate_curvature

_COLUMN_EPS = 1e-12  # empty-cluster guard in the target redistribution


@dataclass(frozen=True)
class LossWeights:
    """Weights of the three objective terms plus the contrastive temperature."""

    alpha: float = 0.01
    beta: float = 1.0
    gamma: float = 1.0
    tau: float = 0.4

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")


def soft_assignments(logits) -> np.ndarray:
    """Row-wise softmax of the per-class logit matrix (stabilized)."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(assign, dassign) -> np.ndarray:
    """Pull a gradient on softmax outputs back to the logits."""
    inner = np.sum(dassign * assign, axis=1, keepdims=True)
    return assign * (dassign - inner)


def _check_assignment(probs, what="assignment"):
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 2:
        raise ValueError(f"{what} matrix must be 2-D")
    if not np.all(np.isfinite(probs)):
        raise NumericalError(f"{what} matrix has non-finite entries")
    if probs.min() < -1e-3 or np.abs(probs.sum(axis=1) - 1.0).max() > 1e-3:
        raise ValueError(f"{what} rows must be probability distributions")
    return probs


def target_distribution(assign) -> np.ndarray:
    """Sharpen soft assignments: square entries, normalize by cluster frequency, renormalize rows."""
    a = _check_assignment(assign)
    freq = a.sum(axis=0) + _COLUMN_EPS
    w = a**2 / freq
    return w / w.sum(axis=1, keepdims=True)


def target_distribution_backward(assign, dtarget) -> np.ndarray:
    """Gradient of target_distribution; both the squares and the column sums carry signal."""
    a = np.asarray(assign, dtype=float)
    g = np.asarray(dtarget, dtype=float)
    freq = a.sum(axis=0) + _COLUMN_EPS  # (K,)
    w = a**2 / freq
    r = w.sum(axis=1)  # (N,)
    c = np.sum(g * w, axis=1)  # (N,)
    s1 = np.sum(g * a**2 / r[:, None], axis=0)  # (K,)
    s2 = np.sum(c[:, None] * a**2 / (r**2)[:, None], axis=0)  # (K,)
    da = (
        2.0 * a * g / (freq[None, :] * r[:, None])
        - 2.0 * a * c[:, None] / (freq[None, :] * (r**2)[:, None])
        - s1[None, :] / freq[None, :] ** 2
        + s2[None, :] / freq[None, :] ** 2
    )
    return da


def cluster_similarity(target_m, target_n) -> np.ndarray:
    """Inner products of cluster columns across two views: S = Qm^T Qn."""
    qm = np.asarray(target_m, dtype=float)
    qn = np.asarray(target_n, dtype=float)
    if qm.shape != qn.shape:
        raise ValueError(f"shape mismatch: {qm.shape} vs {qn.shape}")
    return qm.T @ qn


def contrastive_cluster_loss(sim, tau: float) -> float:
    """Cross-view cluster contrast: matched columns (diagonal) against all columns.

    -(1/K) * sum_k log softmax_row(S/tau)[k, k], computed with log-sum-exp.
    """
    s = np.asarray(sim, dtype=float)
    k = s.shape[0]
    if s.shape != (k, k) or k < 2:
        raise ValueError("similarity matrix must be square with K >= 2")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    z = s / tau
    m = z.max(axis=1, keepdims=True)
    lse = (m + np.log(np.sum(np.exp(z - m), axis=1, keepdims=True)))[:, 0]
    return float(-(np.diag(z) - lse).mean())


def contrastive_cluster_loss_backward(sim, tau: float) -> np.ndarray:
    s = np.asarray(sim, dtype=float)
    k = s.shape[0]
    z = s / tau
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=1, keepdims=True)
    return (p - np.eye(k)) / (k * tau)


def semantic_loss(targets, tau: float) -> float:
    """Sum of the cluster-contrastive loss over all ordered view pairs."""
    value, _ = semantic_loss_grad(targets, tau, need_grad=False)
    return value


def semantic_loss_grad(targets, tau: float, need_grad: bool = True):
    if len(targets) < 2:
        raise ValueError("semantic loss needs at least 2 views")
    qs = [np.asarray(q, dtype=float) for q in targets]
    grads = [np.zeros_like(q) for q in qs] if need_grad else None
    total = 0.0
    for m in range(len(qs)):
        for n in range(len(qs)):
            if n == m:
                continue
            sim = cluster_similarity(qs[m], qs[n])
            total += contrastive_cluster_loss(sim, tau)
            if need_grad:
                ds = contrastive_cluster_loss_backward(sim, tau)
                grads[m] += qs[n] @ ds.T
                grads[n] += qs[m] @ ds
    return float(total), grads


def balance_regularizer(targets) -> float:
    """Negative entropy of the mean assignment per view, summed over views.

    Ranges over [-M*log K, 0]; minimized when every cluster holds equal mass.
    """
    value, _ = balance_regularizer_grad(targets, need_grad=False)
    return value


def balance_regularizer_grad(targets, need_grad: bool = True):
    total = 0.0
    grads = [] if need_grad else None
    for q in targets:
        q = np.asarray(q, dtype=float)
        p = q.mean(axis=0)
        pos = p > 0
        total += float(np.sum(p[pos] * np.log(p[pos])))
        if need_grad:
            dq = np.zeros_like(q)
            dq[:, pos] = (np.log(p[pos]) + 1.0) / q.shape[0]
            grads.append(dq)
    return total, grads


def total_loss(hhsw: float, sem: float, reg: float, weights: LossWeights) -> float:
    """Weighted sum alpha*hhsw + beta*sem + gamma*reg."""
    return weights.alpha * hhsw + weights.beta * sem + weights.gamma * reg


def infer_labels(targets, present=None) -> np.ndarray:
    """Consensus labels: argmax of the per-sample mean assignment across views.

    `present` is an optional (N, M) boolean matrix; absent views do not vote.
    Ties break toward the lowest cluster index.
    """
    qs = [np.asarray(q, dtype=float) for q in targets]
    if not qs:
        raise ValueError("need at least one view")
    n, k = qs[0].shape
    if present is None:
        mean = np.mean(qs, axis=0)
    else:
        present = np.asarray(present, dtype=bool)
        votes = np.zeros((n, k))
        counts = present.sum(axis=1)
        if np.any(counts == 0):
            raise ValueError("some sample has no present view to vote with")
        for m, q in enumerate(qs):
            votes[present[:, m]] += q[present[:, m]]
        mean = votes / counts[:, None]
    return np.argmax(mean, axis=1)


def hcl_loss(za, zb, tau: float, curvature: float = -1.0) -> float:
    """Instance-level Lorentz contrastive loss over a pair of views."""
    value, _, _ = hcl_loss_grad(za, zb, tau, curvature, need_grad=False)
    return value


def hcl_loss_grad(za, zb, tau: float, curvature: float = -1.0, need_grad: bool = True):
    curvature = validate_curvature(curvature)
    if tau <= 0:
        raise ValueError("temperature must be positive")
    za = np.atleast_2d(np.asarray(za, dtype=float))
    zb = np.atleast_2d(np.asarray(zb, dtype=float))
    if za.shape != zb.shape or za.shape[0] < 2:
        raise ValueError("need two equal-size batches with at least 2 samples")
    b = za.shape[0]
    sk = np.sqrt(-curvature)
    # pairwise K*<z_i, z_j>_L via one Gram product with the time axis negated
    ja = za.copy()
    ja[:, 0] = -ja[:, 0]
    w = curvature * (ja @ zb.T)
    w = np.maximum(w, 1.0)
    d = np.arccosh(w) / sk
    off = ~np.eye(b, dtype=bool)
    z = -d / tau
    z_off = np.where(off, z, -np.inf)
    m = z_off.max(axis=1, keepdims=True)
    lse = (m + np.log(np.sum(np.exp(z_off - m), axis=1, keepdims=True)))[:, 0]
    value = float(np.mean(np.diag(d) / tau + lse))
    if not need_grad:
        return value, None, None
    p = np.exp(z_off - lse[:, None])  # rows: softmax over j != i (zero diagonal)
    dd = (np.eye(b) / tau - p / tau) / b
    dw = dd / (sk * np.sqrt(np.maximum(w**2 - 1.0, 1e-30))) * curvature
    jb = zb.copy()
    jb[:, 0] = -jb[:, 0]
    dza = dw @ jb
    dzb = dw.T @ ja
    return value, dza, dzb
