"""Training: binary cross-entropy loss, AdamW with a cosine learning-rate
schedule, joint RGB-D-mask data augmentation, and the seeded training loop.

Loss reduction is the mean over pixels so the configured learning rate does
not depend on image size.  The loop is fully deterministic given (seed,
config, data): shuffling, augmentation draws, and the optimizer are all fed
from one seeded generator.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

__all__ = [
    "BCE_EPS",
    "bce_loss",
    "AdamW",
    "cosine_lr",
    "AugmentSpec",
    "TrainPlan",
    "augment",
    "train_loop",
    "NonFiniteLossError",
]

BCE_EPS = 1e-7

LOG_HEADER = ["epoch", "step", "lr", "loss", "mAP", "IoU", "MAE", "maxF", "maxE", "S"]


class NonFiniteLossError(RuntimeError):
    """Raised when a training step produces a NaN/inf loss."""


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy; pred clamped to [eps, 1-eps] before logs."""
    if pred.shape != target.shape:
        raise T.ShapeError(f"bce_loss: shapes differ {pred.shape} vs {target.shape}")
    td = target.data
    if np.any(np.minimum(np.abs(td), np.abs(td - 1.0)) > 1e-6):
        raise ValueError("bce_loss: target values must be 0 or 1")
    p = T.clamp(pred, BCE_EPS, 1.0 - BCE_EPS)
    one_minus_t = Tensor(1.0 - td)
    pos = T.mul(target.detach(), T.log(p))
    neg = T.mul(one_minus_t, T.log(T.sub(Tensor(np.ones_like(p.data)), p)))
    return T.neg(T.mean_all(T.add(pos, neg)))


def cosine_lr(step: int, total_steps: int, lr_base: float, lr_min: float = 0.0) -> float:
    """lr_min + 0.5*(lr_base - lr_min)*(1 + cos(pi*step/total)); clamps past the end."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step >= total_steps:
        return lr_min
    return lr_min + 0.5 * (lr_base - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


class AdamW:
    """Decoupled weight decay, then Adam with bias-corrected moments."""

    def __init__(self, params: dict[str, Tensor], lr=1e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.05):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data, dtype=np.float64) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data, dtype=np.float64) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NonFiniteLossError(f"non-finite gradient for parameter {k!r}; step rejected")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            w = p.data.astype(np.float64)
            w -= lr * self.weight_decay * w
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g, dtype=np.float64)
            w -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = w.astype(p.data.dtype)


# -- augmentation ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentSpec:
    flip_prob: float = 0.5
    crop_scale_range: tuple[float, float] = (0.7, 1.0)
    rotation_degrees: float = 15.0
    gaussian_noise_sigma: float = 0.01
    impulse_noise_prob: float = 0.01

    @staticmethod
    def identity() -> "AugmentSpec":
        return AugmentSpec(0.0, (1.0, 1.0), 0.0, 0.0, 0.0)


def _affine_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, bilinear: bool) -> np.ndarray:
    """Sample img (H,W[,C]) at float coordinate grids ys/xs (clamped)."""
    h, w = img.shape[:2]
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    if not bilinear:
        return img[np.rint(ys).astype(np.intp), np.rint(xs).astype(np.intp)]
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None] if img.ndim == 3 else ys - y0
    fx = (xs - x0)[..., None] if img.ndim == 3 else xs - x0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def augment(
    rgb: np.ndarray,
    depth: np.ndarray,
    mask: np.ndarray,
    spec: AugmentSpec,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One seeded draw of joint geometric + photometric augmentation.

    rgb (H,W,3), depth (H,W), mask (H,W) are float arrays in [0,1]; the same
    flip/crop/rotation is applied to all three (nearest-neighbour for the
    mask so it stays binary); noise touches only rgb and depth.
    """
    h, w = mask.shape
    if rgb.shape[:2] != (h, w) or depth.shape != (h, w):
        raise ValueError("augment: rgb/depth/mask spatial sizes differ")

    flip = rng.random() < spec.flip_prob
    scale = rng.uniform(*spec.crop_scale_range)
    angle = math.radians(rng.uniform(-spec.rotation_degrees, spec.rotation_degrees))
    geom_identity = not flip and scale == 1.0 and angle == 0.0

    if not geom_identity:
        ch = max(1, int(round(h * scale)))
        cw = max(1, int(round(w * scale)))
        oy = rng.integers(0, h - ch + 1)
        ox = rng.integers(0, w - cw + 1)
        # output pixel -> crop-window coordinate -> rotate about window centre
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
        ys = (yy + 0.5) * (ch / h) - 0.5
        xs = (xx + 0.5) * (cw / w) - 0.5
        if angle != 0.0:
            cy, cx = (ch - 1) / 2.0, (cw - 1) / 2.0
            dy, dx = ys - cy, xs - cx
            cos_a, sin_a = math.cos(angle), math.sin(angle)
            ys = cy + cos_a * dy - sin_a * dx
            xs = cx + sin_a * dy + cos_a * dx
        ys = ys + oy
        xs = xs + ox
        if flip:
            xs = (w - 1) - xs
        rgb = _affine_sample(rgb, ys, xs, bilinear=True)
        depth = _affine_sample(depth, ys, xs, bilinear=True)
        mask = _affine_sample(mask, ys, xs, bilinear=False)

    if spec.gaussian_noise_sigma > 0:
        rgb = np.clip(rgb + rng.normal(0, spec.gaussian_noise_sigma, rgb.shape), 0, 1)
        depth = np.clip(depth + rng.normal(0, spec.gaussian_noise_sigma, depth.shape), 0, 1)
    if spec.impulse_noise_prob > 0:
        hit = rng.random(rgb.shape[:2]) < spec.impulse_noise_prob
        salt = rng.random(rgb.shape[:2]) < 0.5
        rgb = rgb.copy()
        rgb[hit & salt] = 1.0
        rgb[hit & ~salt] = 0.0
    return rgb.astype(np.float32), depth.astype(np.float32), mask.astype(np.float32)


# -- training loop ---------------------------------------------------------------


@dataclass(frozen=True)
class TrainPlan:
    epochs: int = 50
    batch_size: int = 4
    lr_base: float = 1e-4
    lr_min: float = 0.0
    weight_decay: float = 0.05
    checkpoint_every: int = 10
    eval_every: int = 10
    seed: int = 0
    augment: AugmentSpec = field(default_factory=AugmentSpec)

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.lr_base < 0 or self.lr_min < 0 or self.weight_decay < 0:
            raise ValueError("learning rates and weight decay must be non-negative")


def train_loop(
    model,
    samples: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    plan: TrainPlan,
    out_dir: str | None = None,
    eval_fn=None,
    checkpoint_fn=None,
    log_hook=None,
):
    """Seeded SGD loop: forward -> BCE -> backward -> AdamW with cosine lr.

    ``samples`` holds float (rgb HxWx3, depth HxW, mask HxW) triples in
    [0,1].  Returns the per-step loss history.  On a non-finite loss the
    loop aborts with :class:`NonFiniteLossError`; the last good checkpoint
    (if ``checkpoint_fn`` is set) is retained on disk.
    """
    plan.validate()
    if not samples:
        raise ValueError("train_loop: empty dataset")
    rng = np.random.default_rng(plan.seed)
    opt = AdamW(model.named_parameters(), lr=plan.lr_base, weight_decay=plan.weight_decay)
    steps_per_epoch = max(1, math.ceil(len(samples) / plan.batch_size))
    total_steps = plan.epochs * steps_per_epoch

    log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "train_log.csv")
        with open(log_path, "w", newline="") as fh:
            csv.writer(fh).writerow(LOG_HEADER)

    def emit(epoch, step, lr, loss):
        metrics = eval_fn(model) if eval_fn is not None else {}
        row = [
            epoch,
            step,
            f"{lr:.10g}",
            f"{loss:.10g}",
            *(f"{metrics.get(k, float('nan')):.6f}" for k in ("mAP", "IoU", "MAE", "maxF", "maxE", "S")),
        ]
        if log_path is not None:
            # atomic append: single write call on a line
            with open(log_path, "a", newline="") as fh:
                csv.writer(fh).writerow(row)
        if log_hook is not None:
            log_hook(epoch, step, lr, loss, metrics)

    history = []
    model.train()
    step = 0
    for epoch in range(1, plan.epochs + 1):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for b0 in range(0, len(samples), plan.batch_size):
            idxs = order[b0 : b0 + plan.batch_size]
            batch = [augment(*samples[i], plan.augment, rng) for i in idxs]
            rgb = Tensor(np.ascontiguousarray(np.stack([s[0] for s in batch]).transpose(0, 3, 1, 2)))
            depth = Tensor(np.stack([s[1] for s in batch])[:, None])
            mask = Tensor(np.stack([s[2] for s in batch])[:, None])
            lr = cosine_lr(step, total_steps, plan.lr_base, plan.lr_min)
            opt.zero_grad()
            pred = model(rgb, depth)
            loss = bce_loss(pred, mask)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise NonFiniteLossError(f"non-finite loss at epoch {epoch} step {step}")
            loss.backward()
            opt.step(lr)
            history.append(loss_val)
            epoch_loss += loss_val
            step += 1
        if epoch % plan.eval_every == 0 or epoch == plan.epochs:
            emit(epoch, step, lr, epoch_loss / steps_per_epoch)
        if checkpoint_fn is not None and (epoch % plan.checkpoint_every == 0 or epoch == plan.epochs):
            checkpoint_fn(model, epoch)
    return history
