"""Line-wise feature network.

Subspace coding (k-NN edge convolution on directions and moments), alternating
self/cross multi-head attention, matchability regression, the matching
projection and the pose-regression head.  Parameters live in a
:class:`LineNet` module; gradients come from torch autograd.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DegenerateRow, NonFiniteGradient, TooFewLines
from .plucker import RigidTransform


@dataclass(frozen=True)
class NetConfig:
    knn_k: int = 10
    edge_conv_dim: int = 8
    subspace_mlp: tuple = (8, 16, 32, 64)
    fuse_mlp: tuple = (128, 128, 128)
    depth: int = 12
    heads: int = 4
    feat_dim: int = 128
    groupnorm_groups: int = 8
    # scale attention logits by 1/sqrt(feat_dim) instead of 1/sqrt(feat_dim / heads)
    literal_attention_scale: bool = False

    def __post_init__(self):
        object.__setattr__(self, "subspace_mlp", tuple(self.subspace_mlp))
        object.__setattr__(self, "fuse_mlp", tuple(self.fuse_mlp))
        if self.feat_dim % self.heads:
            raise ValueError("feat_dim must be divisible by heads")
        if self.depth % 2:
            raise ValueError("depth must be even")
        if self.fuse_mlp[-1] != self.feat_dim:
            raise ValueError("last fuse_mlp width must equal feat_dim")

    @property
    def update_mlp(self):
        D = self.feat_dim
        return (2 * D, 2 * D, D)

    @property
    def matchability_mlp(self):
        D = self.feat_dim
        return (3 * D, 2 * D, 2 * D, D, 1)

    @property
    def regression_mlp(self):
        D = self.feat_dim
        return (2 * D, D, D, D // 2, D // 2, 7)

    @classmethod
    def paper(cls) -> "NetConfig":
        return cls()

    @classmethod
    def desk(cls) -> "NetConfig":
        return cls(subspace_mlp=(8, 16, 32), fuse_mlp=(64, 32, 32), depth=4, heads=2, feat_dim=32)

    @classmethod
    def tiny(cls) -> "NetConfig":
        return cls(knn_k=3, subspace_mlp=(8, 8), fuse_mlp=(8, 8), depth=2, heads=2, feat_dim=8)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["subspace_mlp"] = list(self.subspace_mlp)
        d["fuse_mlp"] = list(self.fuse_mlp)
        return d


def knn_graph(values, metric: str, k: int) -> np.ndarray:
    """``(n, k)`` neighbour indices, anchor excluded, ties to the lower index.

    ``metric`` is ``"angular"`` (unit vectors, angle between them) or
    ``"euclidean"``.
    """
    X = np.asarray(values.detach().cpu() if torch.is_tensor(values) else values, dtype=float)
    n = len(X)
    if n <= k:
        raise TooFewLines(f"{n} lines cannot have {k} neighbours each")
    if metric == "angular":
        D = np.arccos(np.clip(X @ X.T, -1.0, 1.0))
    elif metric == "euclidean":
        D = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    np.fill_diagonal(D, np.inf)
    return np.argsort(D, axis=1, kind="stable")[:, :k]


def edge_conv(values: torch.Tensor, neighbors, theta: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
    """``E(o_i) = mean_k theta (o_k - o_i) + phi o_i``; weights are ``(out, in)``."""
    nb = torch.as_tensor(np.asarray(neighbors), dtype=torch.long)
    diff = values[nb] - values[:, None, :]  # (n, k, c)
    return (diff @ theta.T).mean(dim=1) + values @ phi.T


def _groups_for(channels: int, groups: int, rows: int) -> int:
    g = min(groups, channels)
    while channels % g:
        g -= 1
    # a single pooled row needs at least two channels per group
    if rows == 1:
        while g > 1 and (channels // g < 2 or channels % g):
            g -= 1
    return g


class MLPBlock(nn.Module):
    """Per-line perceptron; GroupNorm (statistics over the set) + GELU after every layer but the last."""

    def __init__(self, in_dim: int, sizes, groups: int = 8, pooled: bool = False):
        super().__init__()
        dims = [in_dim, *sizes]
        self.linears = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.norms = nn.ModuleList(
            nn.GroupNorm(_groups_for(c, groups, 1 if pooled else 2), c) for c in sizes[:-1]
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        last = len(self.linears) - 1
        for i, lin in enumerate(self.linears):
            x = lin(x)
            if i < last:
                x = _group_norm_rows(x, self.norms[i])
                x = F.gelu(x)
        return x


def _group_norm_rows(x: torch.Tensor, norm: nn.GroupNorm) -> torch.Tensor:
    # (n, C) rows -> (1, C, n) so that statistics span the group channels and all lines
    return norm(x.T.unsqueeze(0)).squeeze(0).T


class SubspaceBranch(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        E = cfg.edge_conv_dim
        self.theta = nn.Parameter(torch.empty(E, 3))
        self.phi = nn.Parameter(torch.empty(E, 3))
        self.edge_norm = nn.GroupNorm(_groups_for(E, cfg.groupnorm_groups, 2), E)
        self.mlp = MLPBlock(E, cfg.subspace_mlp, cfg.groupnorm_groups)

    def forward(self, values: torch.Tensor, neighbors) -> torch.Tensor:
        e = edge_conv(values, neighbors, self.theta, self.phi)
        e = F.gelu(_group_norm_rows(e, self.edge_norm))
        return self.mlp(e)


class AttentionLayer(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        D = cfg.feat_dim
        self.heads = cfg.heads
        self.q = nn.Linear(D, D)
        self.k = nn.Linear(D, D)
        self.v = nn.Linear(D, D)
        self.update = MLPBlock(2 * D, cfg.update_mlp, cfg.groupnorm_groups)
        self.scale = 1.0 / math.sqrt(D if cfg.literal_attention_scale else D // cfg.heads)

    def attention(self, x: torch.Tensor, source: torch.Tensor):
        """Messages to ``x`` from ``source``; returns ``(message, weights (h, n, m))``."""
        n, D = x.shape
        h = self.heads
        q = self.q(x).reshape(n, h, D // h).transpose(0, 1)
        k = self.k(source).reshape(len(source), h, D // h).transpose(0, 1)
        v = self.v(source).reshape(len(source), h, D // h).transpose(0, 1)
        alpha = torch.softmax(q @ k.transpose(1, 2) * self.scale, dim=-1)
        msg = (alpha @ v).transpose(0, 1).reshape(n, D)
        return msg, alpha

    def forward(self, x: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
        msg, _ = self.attention(x, source)
        return x + self.update(torch.cat([x, msg], dim=1))


class LineNet(nn.Module):
    """All trainable parameters of the feature trunk and its heads."""

    def __init__(self, cfg: NetConfig = NetConfig()):
        super().__init__()
        self.cfg = cfg
        D = cfg.feat_dim
        self.dir_branch = SubspaceBranch(cfg)
        self.mom_branch = SubspaceBranch(cfg)
        self.fuse = MLPBlock(2 * cfg.subspace_mlp[-1], cfg.fuse_mlp, cfg.groupnorm_groups)
        self.layers = nn.ModuleList(AttentionLayer(cfg) for _ in range(cfg.depth))
        self.match_head = MLPBlock(3 * D, cfg.matchability_mlp, cfg.groupnorm_groups)
        self.proj = nn.Linear(D, D)
        self.reg_head = MLPBlock(2 * D, cfg.regression_mlp, cfg.groupnorm_groups, pooled=True)
        self.reset_parameters()

    def reset_parameters(self):
        for mod in self.modules():
            if isinstance(mod, nn.Linear):
                nn.init.xavier_uniform_(mod.weight)
                nn.init.zeros_(mod.bias)
            elif isinstance(mod, nn.GroupNorm):
                nn.init.ones_(mod.weight)
                nn.init.zeros_(mod.bias)
            elif isinstance(mod, SubspaceBranch):
                nn.init.xavier_uniform_(mod.theta)
                nn.init.xavier_uniform_(mod.phi)

    @property
    def dtype(self):
        return self.proj.weight.dtype

    def _as_tensor(self, lines):
        if torch.is_tensor(lines):
            return lines.to(self.dtype)
        return torch.as_tensor(np.asarray(lines, dtype=float), dtype=self.dtype)

    def subspace_encode(self, lines) -> torch.Tensor:
        L = self._as_tensor(lines)
        k = self.cfg.knn_k
        V, M = L[:, :3], L[:, 3:6]
        fv = self.dir_branch(V, knn_graph(V, "angular", k))
        fm = self.mom_branch(M, knn_graph(M, "euclidean", k))
        return self.fuse(torch.cat([fv, fm], dim=1))

    def attention_embed(self, f_s: torch.Tensor, f_t: torch.Tensor):
        """Odd layers (1-based) use self edges, even layers cross edges."""
        for t, layer in enumerate(self.layers):
            if t % 2 == 0:
                f_s, f_t = layer(f_s, f_s), layer(f_t, f_t)
            else:
                f_s, f_t = layer(f_s, f_t), layer(f_t, f_s)
        return f_s, f_t

    def matchability(self, f_self: torch.Tensor, f_cross: torch.Tensor) -> torch.Tensor:
        ctx = torch.cat([f_cross.mean(dim=0), f_cross.max(dim=0).values])
        x = torch.cat([f_self, ctx.expand(len(f_self), -1)], dim=1)
        return torch.softmax(self.match_head(x)[:, 0], dim=0)

    def project_for_matching(self, f: torch.Tensor) -> torch.Tensor:
        y = self.proj(f)
        n = y.norm(dim=1, keepdim=True)
        if bool((n < 1e-12).any()):
            raise DegenerateRow("projected feature row has zero norm")
        return y / n

    def regression_head(self, f_s: torch.Tensor, f_t: torch.Tensor):
        """``(q, t)``: unit scalar-first quaternion with ``q[0] >= 0`` and translation."""
        g = torch.cat([f_s.max(dim=0).values, f_t.max(dim=0).values])[None, :]
        out = self.reg_head(g)[0]
        q = out[:4] / out[:4].norm()
        q = torch.where(q[0] < 0, -q, q)
        return q, out[4:]

    def trunk(self, src, tgt):
        return self.attention_embed(self.subspace_encode(src), self.subspace_encode(tgt))

    def forward(self, src, tgt) -> dict:
        f_s, f_t = self.trunk(src, tgt)
        return {
            "f_s": f_s,
            "f_t": f_t,
            "r": self.matchability(f_s, f_t),
            "s": self.matchability(f_t, f_s),
            "fx": self.project_for_matching(f_s),
            "fy": self.project_for_matching(f_t),
        }


def quaternion_to_matrix(q: torch.Tensor) -> torch.Tensor:
    w, x, y, z = q
    return torch.stack(
        [
            torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)]),
            torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)]),
            torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]),
        ]
    )


# functional surface -------------------------------------------------------

def subspace_encode(lines, params: LineNet) -> torch.Tensor:
    return params.subspace_encode(lines)


def attention_embed(f_s, f_t, params: LineNet):
    return params.attention_embed(f_s, f_t)


def matchability(f_self, f_cross, params: LineNet) -> torch.Tensor:
    return params.matchability(f_self, f_cross)


def project_for_matching(f, params: LineNet) -> torch.Tensor:
    return params.project_for_matching(f)


def regression_head(f_s, f_t, params: LineNet):
    """Pose as a :class:`~linereg.plucker.RigidTransform` (detached)."""
    q, t = params.regression_head(f_s, f_t)
    q = q.detach().double()
    # renormalise in double precision so a float32 network still yields an orthonormal R
    q = q / q.norm()
    return RigidTransform(quaternion_to_matrix(q).numpy(), t.detach().double().numpy())


def gradient(params: LineNet, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Reverse-mode gradient of ``loss`` w.r.t. every named parameter.

    Parameters not reached by ``loss`` get zero gradients.
    """
    named = list(params.named_parameters())
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    out = {}
    for (name, p), g in zip(named, grads):
        g = torch.zeros_like(p) if g is None else g
        if not bool(torch.isfinite(g).all()):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        out[name] = g
    return out
