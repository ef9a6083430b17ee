"""Training loop for the matching network and the regression baseline."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from .baselines import regression_loss_terms
from .config import RunConfig
from .errors import NonFiniteGradient
from .features import LineNet
from .matching import cost_matrix, matching_loss, precision_at_k, sinkhorn
from .plucker import transform_lines
from .synth import ScenePair, sample_pose

log = logging.getLogger(__name__)

CSV_HEADER = "epoch,mean_loss,match_precision_at_K"


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    precision: float

    def csv_row(self) -> str:
        return f"{self.epoch},{self.mean_loss!r},{self.precision!r}"


def create_model(cfg: RunConfig) -> LineNet:
    """Fresh network, initialised from ``cfg.seed``."""
    torch.manual_seed(cfg.seed)
    return LineNet(cfg.net)


def make_optimizer(model: LineNet, cfg: RunConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)


def augment_scene(scene: ScenePair, rng: np.random.Generator, cfg: RunConfig) -> ScenePair:
    """Move source and target by independent random poses, keeping the gt pose consistent."""
    g_s = sample_pose(rng, cfg.rot_range_deg, cfg.trans_range_m)
    g_t = sample_pose(rng, cfg.rot_range_deg, cfg.trans_range_m)
    return ScenePair(
        transform_lines(g_s, scene.source),
        transform_lines(g_t, scene.target),
        g_t.compose(scene.gt_pose).compose(g_s.inverse()),
        scene.gt_matches,
        scene.seed,
        scene.noise_params,
        scene.overlap_ratio,
    )


def scene_loss(model: LineNet, scene: ScenePair, cfg: RunConfig):
    """``(loss, precision)`` for one scene; precision is NaN for the regression method."""
    if cfg.method == "regression":
        f_s, f_t = model.trunk(scene.source, scene.target)
        q, t = model.regression_head(f_s, f_t)
        q_gt = torch.as_tensor(scene.gt_pose.quaternion(), dtype=q.dtype)
        t_gt = torch.as_tensor(scene.gt_pose.t, dtype=t.dtype)
        return regression_loss_terms(q_gt, t_gt, q, t), math.nan
    out = model(scene.source, scene.target)
    W = sinkhorn(cost_matrix(out["fx"], out["fy"]), out["r"], out["s"], cfg.sinkhorn_lambda, cfg.sinkhorn_iters)
    C = scene.correspondence_matrix()
    loss = matching_loss(W, torch.as_tensor(C, dtype=W.dtype))
    K = min(cfg.precision_k or int(C.sum()), C.size)
    return loss, precision_at_k(W.detach().numpy(), C, K)


def _check_finite(model: LineNet, loss, epoch: int, scene_id) -> None:
    if not bool(torch.isfinite(loss)):
        raise NonFiniteGradient(f"non-finite loss at epoch {epoch}, scene {scene_id}")
    for name, p in model.named_parameters():
        if p.grad is not None and not bool(torch.isfinite(p.grad).all()):
            raise NonFiniteGradient(f"non-finite gradient for {name} at epoch {epoch}, scene {scene_id}")


def train_epoch(model: LineNet, optimizer, scenes, cfg: RunConfig, epoch: int, scene_ids=None) -> EpochStats:
    """One pass over ``scenes`` in a seeded order, Adam step per batch.

    Gradients of a batch are summed in the batch's scene order and divided
    by its size.  ``epoch`` is 1-based and seeds the order, so resuming at
    any epoch reproduces an uninterrupted run.
    """
    n = len(scenes)
    ids = list(range(n)) if scene_ids is None else list(scene_ids)
    order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
    losses = np.zeros(n)
    precs = np.zeros(n)
    model.train()
    for b in range(0, n, cfg.batch_size):
        batch = order[b : b + cfg.batch_size]
        optimizer.zero_grad()
        for i in batch:
            scene = scenes[i]
            if cfg.augment:
                scene = augment_scene(scene, np.random.default_rng([cfg.seed, epoch, int(i), 2]), cfg)
            loss, prec = scene_loss(model, scene, cfg)
            (loss / len(batch)).backward()
            _check_finite(model, loss, epoch, ids[i])
            losses[i] = loss.item()
            precs[i] = prec
        optimizer.step()
    # summed in scene order with exact rounding, independent of the shuffle
    return EpochStats(epoch, math.fsum(losses) / n, math.fsum(precs) / n)


def train(model: LineNet, scenes, cfg: RunConfig, optimizer=None, start_epoch: int = 0, scene_ids=None, on_epoch=None):
    """Train from ``start_epoch`` (completed epochs) up to ``cfg.epochs``.

    ``on_epoch(stats, model, optimizer)`` is called after every epoch.
    Returns ``(history, optimizer)``.
    """
    if not scenes:
        raise ValueError("need at least one training scene")
    torch.set_num_threads(1)
    optimizer = optimizer or make_optimizer(model, cfg)
    history = []
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        stats = train_epoch(model, optimizer, scenes, cfg, epoch, scene_ids)
        log.info("epoch %d loss %.6f precision %.4f", epoch, stats.mean_loss, stats.precision)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats, model, optimizer)
    return history, optimizer
