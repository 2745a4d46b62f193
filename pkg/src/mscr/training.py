"""Loss functions and the training loop.

Per step: sample a batch of records, pick one random heartbeat per
record, draw fresh masks, restore, and take an AdamW step on the
mean per-item loss under a single-cycle cosine schedule. Deterministic
given the seed: batching, beat choice, and masks each consume their own
spawned rng stream, and reduction order is fixed.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autodiff import ContractError, NumericError, Tensor, add, backward, div, log, mul, sub, tsum
from .checkpoint import save_checkpoint
from .config import PipelineConfig, TrainConfig
from .model import ModelConfig, init_params, model_forward
from .optim import AdamWState, adamw_step, cosine_lr
from .sigproc import make_global_mask, make_local_mask, prepare_record


@dataclass
class TrainReport:
    epoch_global: list
    epoch_local: list
    epoch_trend: list
    epoch_total: list
    checkpoint_path: Optional[str]
    wall_time_s: float
    skipped_records: int = 0


def uncertainty_loss(x: Tensor, x_hat: Tensor, sigma: Tensor) -> Tensor:
    """Sum_k (x_k - x_hat_k)^2 / sigma_k + log sigma_k."""
    if x.data.shape != x_hat.data.shape or x.data.shape != sigma.data.shape:
        raise ContractError(
            f"length mismatch: x {x.data.shape}, x_hat {x_hat.data.shape}, sigma {sigma.data.shape}"
        )
    if np.any(sigma.data <= 0):
        raise ContractError("sigma must be strictly positive")
    r = sub(x, x_hat)
    return tsum(add(div(mul(r, r), sigma), log(sigma)))


def trend_loss(x_g: Tensor, x_hat_t: Tensor) -> Tensor:
    """Plain sum of squared errors against the global signal."""
    if x_g.data.shape != x_hat_t.data.shape:
        raise ContractError(
            f"length mismatch: x_g {x_g.data.shape} vs x_hat_t {x_hat_t.data.shape}"
        )
    r = sub(x_g, x_hat_t)
    return tsum(mul(r, r))


def total_loss(l_global: Tensor, l_local: Tensor, l_trend: Tensor, alpha: float, beta: float) -> Tensor:
    return add(l_global, add(mul(l_local, alpha), mul(l_trend, beta)))


def _item_losses(prepared, beat, mask_g, mask_l, params, model_cfg, cfg):
    out = model_forward(prepared.x, beat, mask_g, mask_l, prepared.trend.values, params, model_cfg)
    lg = uncertainty_loss(Tensor(prepared.x), out.x_hat_g, out.sigma_g)
    ll = uncertainty_loss(Tensor(beat), out.x_hat_l, out.sigma_l)
    lt = trend_loss(Tensor(prepared.x), out.x_hat_t)
    return lg, ll, lt, total_loss(lg, ll, lt, cfg.alpha, cfg.beta)


def train(
    records,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    pipe_cfg: Optional[PipelineConfig] = None,
    checkpoint_path: Optional[str] = None,
    log_fn=None,
) -> tuple[dict, TrainReport]:
    """Returns (params, report). Records too short to filter or segment
    are skipped with a counted warning; an all-skipped dataset errors.
    """
    t0 = time.monotonic()
    if pipe_cfg is None:
        pipe_cfg = PipelineConfig()
    if not records:
        raise ContractError("training dataset is empty")

    prepared = []
    skipped = 0
    for rec in records:
        try:
            pr = prepare_record(rec, pipe_cfg, model_cfg.d)
        except ContractError:
            skipped += 1
            continue
        if pr.x.size != model_cfg.D or not pr.beats:
            skipped += 1
            continue
        prepared.append(pr)
    if skipped:
        warnings.warn(f"skipped {skipped} record(s) unfit for segmentation")
    if not prepared:
        raise ContractError("every record was skipped; nothing to train on")

    params = init_params(model_cfg)
    param_list = list(params.values())
    state = AdamWState(lr=cfg.lr0, weight_decay=cfg.weight_decay)

    root = np.random.SeedSequence(cfg.seed)
    rng_batch, rng_beat, rng_mask = (np.random.default_rng(s) for s in root.spawn(3))

    n = len(prepared)
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * steps_per_epoch
    report = TrainReport([], [], [], [], checkpoint_path, 0.0, skipped)

    step = 0
    for epoch in range(cfg.epochs):
        order = rng_batch.permutation(n)
        sums = np.zeros(4)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            batch_graph = None
            for idx in batch:
                pr = prepared[idx]
                beat = pr.beats[int(rng_beat.integers(len(pr.beats)))].samples
                mg = make_global_mask(model_cfg.D, cfg.mask_ratio_g, cfg.k_regions, rng_mask)
                ml = make_local_mask(model_cfg.d, cfg.mask_ratio_l, rng_mask)
                lg, ll, lt, item = _item_losses(pr, beat, mg, ml, params, model_cfg, cfg)
                sums += (lg.item(), ll.item(), lt.item(), item.item())
                batch_graph = item if batch_graph is None else add(batch_graph, item)
            loss = mul(batch_graph, 1.0 / len(batch))
            if not np.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at step {step}")
            for p in param_list:
                p.zero_grad()
            backward(loss, param_list)
            lr = cosine_lr(step, total_steps, cfg.lr0)
            adamw_step(param_list, state, lr)
            step += 1
        means = sums / n
        report.epoch_global.append(float(means[0]))
        report.epoch_local.append(float(means[1]))
        report.epoch_trend.append(float(means[2]))
        report.epoch_total.append(float(means[3]))
        if log_fn is not None:
            log_fn(
                f"epoch {epoch + 1}/{cfg.epochs} "
                f"total {means[3]:.4f} global {means[0]:.4f} "
                f"local {means[1]:.4f} trend {means[2]:.4f}"
            )

    if checkpoint_path is not None:
        save_checkpoint(params, {"model": model_cfg, "train": cfg, "pipe": pipe_cfg}, checkpoint_path)
    report.wall_time_s = time.monotonic() - t0
    return params, report
