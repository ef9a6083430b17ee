"""Optimal-transport line matching.

Pairwise feature distances and matchability histograms are turned into a
joint probability matrix by Sinkhorn scaling; the largest entries form the
prioritized match list.  Functions accept numpy arrays or torch tensors and
return the same kind; torch inputs stay differentiable.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass

import numpy as np
import torch

from .errors import KTooLarge, NumericalUnderflow

log = logging.getLogger(__name__)

UNDERFLOW_TOL = 1e-300
LOSS_CLAMP = 1e-12


def _to_torch(x, dtype=torch.float64):
    if torch.is_tensor(x):
        return x, True
    return torch.as_tensor(np.asarray(x, dtype=float), dtype=dtype), False


def cost_matrix(fx, fy):
    """``H[i, j] = |fx_i - fy_j|``."""
    X, is_t = _to_torch(fx)
    Y, _ = _to_torch(fy, X.dtype)
    H = (X[:, None, :] - Y[None, :, :]).norm(dim=-1)
    return H if is_t else H.numpy()


def sinkhorn(H, r, s, lam: float = 0.1, iters: int = 30, log_fallback: bool = True):
    """Rectangular Sinkhorn scaling of ``exp(-H / lam)`` onto marginals ``r``, ``s``.

    The kernel is normalised to unit mass once, then ``a = r / (K b)`` and
    ``b = s / (K^T a)`` alternate ``iters`` times from ``b = 1``.  If a scaling
    denominator drops below 1e-300 the log-domain solver takes over (or
    :class:`NumericalUnderflow` is raised when ``log_fallback`` is false).
    """
    if lam <= 0 or iters < 1:
        raise ValueError("lam must be > 0 and iters >= 1")
    Ht, is_t = _to_torch(H)
    rt, _ = _to_torch(r, Ht.dtype)
    st, _ = _to_torch(s, Ht.dtype)
    try:
        W = _sinkhorn_scaled(Ht, rt, st, lam, iters)
    except NumericalUnderflow:
        if not log_fallback:
            raise
        log.warning("sinkhorn underflow at lambda=%g, switching to log domain", lam)
        W = sinkhorn_log(Ht, rt, st, lam, iters)
    return W if is_t else W.detach().numpy()


def _sinkhorn_scaled(H, r, s, lam, iters):
    tiny = max(UNDERFLOW_TOL, torch.finfo(H.dtype).tiny)
    K = torch.exp(-H / lam)
    K = K / K.sum()
    b = torch.ones(H.shape[1], dtype=H.dtype)
    for _ in range(iters):
        Kb = K @ b
        if bool((Kb < tiny).any()):
            raise NumericalUnderflow("K b underflowed")
        a = r / Kb
        Ka = K.T @ a
        if bool((Ka < tiny).any()):
            raise NumericalUnderflow("K^T a underflowed")
        b = s / Ka
    return a[:, None] * K * b[None, :]


def sinkhorn_log(H, r, s, lam: float = 0.1, iters: int = 30):
    """Same iteration as :func:`sinkhorn` carried out on log-scalings."""
    Ht, is_t = _to_torch(H)
    rt, _ = _to_torch(r, Ht.dtype)
    st, _ = _to_torch(s, Ht.dtype)
    logK = -Ht / lam
    logK = logK - torch.logsumexp(logK.reshape(-1), dim=0)
    log_r, log_s = torch.log(rt), torch.log(st)
    log_b = torch.zeros(Ht.shape[1], dtype=Ht.dtype)
    for _ in range(iters):
        log_a = log_r - torch.logsumexp(logK + log_b[None, :], dim=1)
        log_b = log_s - torch.logsumexp(logK + log_a[:, None], dim=0)
    W = torch.exp(log_a[:, None] + logK + log_b[None, :])
    return W if is_t else W.detach().numpy()


@dataclass(eq=False)
class MatchList:
    """Prioritized matches: ``pairs`` ``(K, 2)`` ints, ``weights`` descending."""

    pairs: np.ndarray
    weights: np.ndarray

    def __len__(self):
        return len(self.pairs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source_idx", "target_idx", "weight"])
        for (i, j), x in zip(self.pairs, self.weights):
            w.writerow([int(i), int(j), repr(float(x))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MatchList":
        rows = list(csv.DictReader(io.StringIO(text)))
        pairs = np.array([[int(r["source_idx"]), int(r["target_idx"])] for r in rows], dtype=int).reshape(-1, 2)
        weights = np.array([float(r["weight"]) for r in rows])
        return cls(pairs, weights)


def topk(W, K: int) -> MatchList:
    """The ``K`` largest entries of ``W``, descending, ties row-major."""
    W = np.asarray(W.detach() if torch.is_tensor(W) else W, dtype=float)
    M, N = W.shape
    if K > M * N:
        raise KTooLarge(f"K={K} exceeds {M}x{N} entries")
    flat = W.reshape(-1)
    order = np.argsort(-flat, kind="stable")[:K]
    return MatchList(np.column_stack(np.unravel_index(order, W.shape)).astype(int), flat[order])


def matching_loss(W, C_gt):
    """Balanced negative log-likelihood of true and false correspondences."""
    Wt, is_t = _to_torch(W)
    C, _ = _to_torch(C_gt, Wt.dtype)
    Wc = Wt.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    true = C > 0.5
    n_true = int(true.sum())
    n_false = C.numel() - n_true
    if n_true < 1:
        raise ValueError("need at least one true correspondence")
    loss = -torch.log(Wc[true]).sum() / n_true
    if n_false:
        loss = loss - torch.log(1.0 - Wc[~true]).sum() / n_false
    return loss if is_t else float(loss)


def precision_at_k(W, C_gt, K: int | None = None) -> float:
    """Fraction of the top-``K`` entries of ``W`` that are true (``K`` defaults to the true count)."""
    C = np.asarray(C_gt)
    if K is None:
        K = int(C.sum())
    if K == 0:
        return 0.0
    ml = topk(W, K)
    return float(C[ml.pairs[:, 0], ml.pairs[:, 1]].mean())


def match_lines(model, src, tgt, lam: float = 0.1, iters: int = 30, K: int = 200):
    """Run the network and matcher on two line sets; returns ``(MatchList, W, outputs)``."""
    with torch.no_grad():
        out = model(src, tgt)
        H = cost_matrix(out["fx"], out["fy"])
        W = sinkhorn(H, out["r"], out["s"], lam, iters)
    W = W.double().numpy()
    K = min(K, W.size)
    return topk(W, K), W, out
