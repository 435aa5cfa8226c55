"""Conditional mel diffusion: schedule, corruption, denoiser, losses, sampler."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .data_model import DiffusionSchedule
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)


def make_schedule(n_steps: int = 100, beta_start: float = 1e-4, beta_end: float = 0.06) -> DiffusionSchedule:
    if n_steps < 1:
        raise ConfigError("diffusion needs at least one step")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return DiffusionSchedule(np.linspace(beta_start, beta_end, n_steps))


def q_sample(x0, t, noise, schedule: DiffusionSchedule):
    """Closed-form forward corruption sqrt(ab_t) x0 + sqrt(1 - ab_t) noise.

    ``t`` is an int or, for batched torch input, a (B,) tensor of steps.
    """
    if noise.shape != x0.shape:
        raise DataError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
    if isinstance(x0, torch.Tensor):
        ab = torch.as_tensor(schedule.alpha_bars, dtype=x0.dtype, device=x0.device)[torch.as_tensor(t)]
        ab = ab.reshape(ab.shape + (1,) * (x0.dim() - ab.dim()))
        return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * noise
    ab = schedule.alpha_bars[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


def first_order_difference(y):
    """Frame-to-frame change along the time axis (axis -2): row i-1 = frame i - frame i-1."""
    if y.shape[-2] < 2:
        raise DataError("need >=2 frames")
    return y[..., 1:, :] - y[..., :-1, :]


def l_fd(y, y_hat):
    """Mean absolute error between first-order differences."""
    if y.shape != y_hat.shape:
        raise DataError(f"shape mismatch {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    return abs(first_order_difference(y) - first_order_difference(y_hat)).mean()


def masked_mel_losses(y: torch.Tensor, x0_hat: torch.Tensor, masked: torch.Tensor, lengths: torch.Tensor):
    """(l_mel, l_fd) for a padded batch.

    l_mel: MAE of the prediction against ``y`` over masked frames.
    l_fd: MAE of first-order differences of the assembled output (copy of ``y``
    outside the mask, prediction inside) against ``y``, over each item's valid rows.
    Both are per-item means averaged over the batch.
    """
    n_mels = y.shape[-1]
    m = masked[..., None].to(y.dtype)
    per_mel = (torch.abs(x0_hat - y) * m).sum(dim=(1, 2)) / (m.sum(dim=(1, 2)) * n_mels).clamp_min(1)
    y_hat = torch.where(masked[..., None], x0_hat, y)
    diff = torch.abs(first_order_difference(y) - first_order_difference(y_hat))
    rows = torch.arange(y.shape[1] - 1, device=y.device)[None, :] < (lengths[:, None] - 1)
    r = rows[..., None].to(y.dtype)
    per_fd = (diff * r).sum(dim=(1, 2)) / (r.sum(dim=(1, 2)) * n_mels).clamp_min(1)
    return per_mel.mean(), per_fd.mean()


@dataclass
class LossBreakdown:
    l_mel: float
    l_fd: float
    l_dur: float
    l_pitch: float
    lambda_fd: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


def combine(l_mel, l_fd_value, l_dur, l_pitch, lambda_fd: float):
    return l_mel + lambda_fd * l_fd_value + l_dur + l_pitch


# ---------------------------------------------------------------------------
# Denoiser
# ---------------------------------------------------------------------------


def step_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freq = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / max(1, half - 1))
    ang = t.float()[:, None] * freq[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


class ResidualBlock(nn.Module):
    def __init__(self, width: int, d_cond: int, dilation: int):
        super().__init__()
        self.dilated = nn.Conv1d(width, 2 * width, 3, padding=dilation, dilation=dilation)
        self.step = nn.Linear(width, width)
        self.cond = nn.Conv1d(d_cond, 2 * width, 1)
        self.out = nn.Conv1d(width, 2 * width, 1)

    def forward(self, x, cond, step):
        h = x + self.step(step)[..., None]
        h = self.dilated(h) + self.cond(cond)
        gate, filt = h.chunk(2, dim=1)
        h = torch.sigmoid(gate) * torch.tanh(filt)
        res, skip = self.out(h).chunk(2, dim=1)
        return (x + res) / math.sqrt(2.0), skip


class Denoiser(nn.Module):
    """Gated dilated residual conv stack predicting the clean (normalised) mel."""

    def __init__(self, n_mels: int = 80, d_cond: int = 192, width: int = 256, blocks: int = 12, dilation_cycle: int = 4):
        super().__init__()
        self.width = width
        self.inp = nn.Conv1d(n_mels, width, 1)
        self.step_mlp = nn.Sequential(nn.Linear(width, 4 * width), nn.Mish(), nn.Linear(4 * width, width))
        self.blocks = nn.ModuleList([ResidualBlock(width, d_cond, 2 ** (i % dilation_cycle)) for i in range(blocks)])
        self.skip_out = nn.Conv1d(width, width, 1)
        self.head = nn.Conv1d(width, n_mels, 1)
        self.n_blocks = blocks

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        """x_t (B, T, n_mels), t (B,), cond (B, T, d_cond) -> x0 estimate (B, T, n_mels)."""
        if x_t.shape[:2] != cond.shape[:2]:
            raise DataError(f"condition has {cond.shape[1]} frames, mel has {x_t.shape[1]}")
        x = F.relu(self.inp(x_t.transpose(1, 2)))
        c = cond.transpose(1, 2)
        step = self.step_mlp(step_features(t, self.width))
        skips = 0
        for block in self.blocks:
            x, s = block(x, c, step)
            skips = skips + s
        h = F.relu(self.skip_out(skips / math.sqrt(self.n_blocks)))
        return self.head(h).transpose(1, 2)


# ---------------------------------------------------------------------------
# Training objective and sampling
# ---------------------------------------------------------------------------


def training_step(
    batch, model, schedule: DiffusionSchedule, lambda_fd: float, generator: torch.Generator, pitch_jitter: int = 0
):
    """Forward pass and loss for one batch. Returns (total tensor, LossBreakdown).

    Items whose mask is empty are dropped with a warning. ``pitch_jitter`` > 0
    shifts the teacher-forced pitch bins of voiced frames by a uniform offset in
    [-pitch_jitter, pitch_jitter] so the denoiser tolerates small pitch errors.
    """
    empty = ~batch.frame_masked.any(dim=1)
    if bool(empty.any()):
        log.warning("skipping %d batch item(s) with an empty mask", int(empty.sum()))
        batch = batch.select(~empty)
        if batch.size == 0:
            return None, None

    bsz = batch.size
    t = torch.randint(0, schedule.n_steps, (bsz,), generator=generator)
    z0 = model.normalize(batch.mel)
    noise = torch.randn(z0.shape, generator=generator)
    x_t = q_sample(z0, t, noise, schedule)
    x_t = torch.where(batch.frame_masked[..., None], x_t, z0)

    jitter = None
    if pitch_jitter > 0:
        jitter = torch.randint(-pitch_jitter, pitch_jitter + 1, batch.f0.shape, generator=generator)
    cond = model.condition_for(batch, predict_pitch=False, pitch_jitter=jitter)
    x0_hat = model.denormalize(model.denoiser(x_t, t, cond.frames))
    valid = batch.frame_valid[..., None]
    x0_hat = torch.where(valid, x0_hat, batch.mel)

    l_mel, l_fd_value = masked_mel_losses(batch.mel, x0_hat, batch.frame_masked, batch.n_frames)
    l_dur = duration_loss(cond.predictions.log_durations, batch.durations, batch.ph_masked)
    l_pitch = pitch_loss(cond.predictions.log_f0, cond.predictions.voicing_logit, batch.f0, batch.frame_masked)
    total = combine(l_mel, l_fd_value, l_dur, l_pitch, lambda_fd)
    breakdown = LossBreakdown(
        l_mel.item(), l_fd_value.item(), l_dur.item(), l_pitch.item(), float(lambda_fd), total.item()
    )
    return total, breakdown


def duration_loss(log_pred: torch.Tensor, durations: torch.Tensor, ph_masked: torch.Tensor) -> torch.Tensor:
    target = torch.log1p(durations.to(log_pred.dtype))
    m = ph_masked.to(log_pred.dtype)
    return ((log_pred - target) ** 2 * m).sum() / m.sum().clamp_min(1)


def pitch_loss(log_f0: torch.Tensor, vuv_logit: torch.Tensor, f0: torch.Tensor, frame_masked: torch.Tensor) -> torch.Tensor:
    voiced = f0 > 0
    mv = (frame_masked & voiced).to(log_f0.dtype)
    target = torch.log(torch.where(voiced, f0, torch.ones_like(f0)))
    mse = ((log_f0 - target) ** 2 * mv).sum() / mv.sum().clamp_min(1)
    m = frame_masked.to(log_f0.dtype)
    bce = (F.binary_cross_entropy_with_logits(vuv_logit, voiced.to(log_f0.dtype), reduction="none") * m).sum()
    return mse + bce / m.sum().clamp_min(1)


@torch.no_grad()
def sample(model, schedule: DiffusionSchedule, cond: torch.Tensor, y_mask: torch.Tensor, masked: torch.Tensor, seed: int):
    """Ancestral sampling with frame preservation.

    ``y_mask`` (B, T, n_mels) carries the true mel on unmasked frames; ``masked``
    is (B, T). Unmasked frames are reset to their true (normalised) content after
    every step and copied verbatim into the result.
    """
    if cond.shape[:2] != y_mask.shape[:2] or masked.shape != y_mask.shape[:2]:
        raise DataError("condition, mel and mask lengths differ")
    gen = torch.Generator().manual_seed(int(seed))
    keep = ~masked[..., None]
    z_known = model.normalize(y_mask)
    x = torch.randn(y_mask.shape, generator=gen)
    x = torch.where(keep, z_known, x)
    betas, ab = schedule.betas, schedule.alpha_bars
    bsz = y_mask.shape[0]
    for t in range(schedule.n_steps - 1, -1, -1):
        z0 = model.denoiser(x, torch.full((bsz,), t, dtype=torch.long), cond)
        if t > 0:
            ab_prev = ab[t - 1]
            c0 = math.sqrt(ab_prev) * betas[t] / (1.0 - ab[t])
            ct = math.sqrt(1.0 - betas[t]) * (1.0 - ab_prev) / (1.0 - ab[t])
            var = betas[t] * (1.0 - ab_prev) / (1.0 - ab[t])
            x = c0 * z0 + ct * x + math.sqrt(var) * torch.randn(x.shape, generator=gen)
        else:
            x = z0
        x = torch.where(keep, z_known, x)
    return torch.where(keep, y_mask, model.denormalize(x))
