"""Contrastive co-training: symmetric InfoNCE, AdamW, and the dual-pathway step.

One co-training step forwards both framerate pathways, fuses them, and
backpropagates a single symmetric contrastive loss under the gradient
masking contract: the backbone learns only through the low-rate pathway
and the adapters (plus the fusion matrix) only through the high-rate
pathway. The temperature is a fixed constant, never a parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .model import VideoTextModel


@dataclass
class TrainConfig:
    temperature: float = 0.07
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 1
    batch_size: int = 8
    seed: int = 0
    precision: str = "float64"
    aux_pathway_losses: bool = False

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision}")


@dataclass
class Batch:
    clip_ids: list[str]
    x_low: np.ndarray  # [B, T, 3, S, S]
    x_high: np.ndarray  # [B, lambda*T, 3, S, S]
    text_ids: np.ndarray  # [B, L]

    def __post_init__(self) -> None:
        b = len(self.clip_ids)
        if b == 0:
            raise DataError("empty batch")
        if self.x_low.shape[0] != b or self.x_high.shape[0] != b or self.text_ids.shape[0] != b:
            raise ShapeError(
                f"batch size mismatch: {b} ids, {self.x_low.shape[0]} low stacks, "
                f"{self.x_high.shape[0]} high stacks, {self.text_ids.shape[0]} texts"
            )
        if len(set(self.clip_ids)) != b:
            raise DataError("duplicate clip ids within a batch")


def info_nce(e_v: Tensor, e_t: Tensor, temperature: float = 0.07) -> Tensor:
    """Symmetric contrastive loss over a batch of paired embeddings.

    Both directions (video-to-text and text-to-video) contribute a
    log-softmax term per pair; the mean log-likelihood is negated so the
    returned scalar is minimized. Inputs must be L2-normalized rows.
    """
    if e_v.ndim != 2 or e_v.shape != e_t.shape:
        raise ShapeError(f"expected matching [B, D] embeddings, got {e_v.shape} and {e_t.shape}")
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    for name, t in (("video", e_v), ("text", e_t)):
        norms = np.linalg.norm(t.data, axis=1)
        if np.abs(norms - 1.0).max() > 1e-6:
            raise NumericalError(
                f"{name} embeddings are not L2-normalized "
                f"(max deviation {np.abs(norms - 1.0).max():.2e})"
            )
    b = e_v.shape[0]
    logits = ad.matmul(e_v, ad.transpose(e_t, (1, 0))) * (1.0 / temperature)
    eye = Tensor(np.eye(b))
    pos_v2t = ad.sum_(ad.mul(ad.log_softmax(logits, axis=1), eye))
    pos_t2v = ad.sum_(ad.mul(ad.log_softmax(logits, axis=0), eye))
    return ad.add(pos_v2t, pos_t2v) * (-1.0 / b)


def adamw_update(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    weight_decay: float,
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Weight decay scales the parameter directly (independent of the
    adaptive step); moments are bias-corrected with step count ``t``.
    """
    if g.shape != p.shape or m.shape != p.shape or v.shape != p.shape:
        raise ShapeError(
            f"optimizer state shapes {m.shape}/{v.shape}/{g.shape} do not match "
            f"parameter shape {p.shape}"
        )
    if t < 1:
        raise ConfigError(f"step count must be >= 1, got {t}")
    if weight_decay:
        p *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    p -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    """AdamW over a named parameter dict; parameters without grads are skipped."""

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        cfg.validate()
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c = self.cfg
        for name, p in self.params.items():
            if p.grad is None:
                continue
            adamw_update(
                p.data, p.grad, self.m[name], self.v[name],
                self.t, c.lr, c.beta1, c.beta2, c.eps, c.weight_decay,
            )

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def _pathway_loss(e: Tensor, e_t: Tensor, temperature: float) -> Tensor:
    return info_nce(ad.l2_normalize(e, axis=1), e_t, temperature)


def cotrain_step(
    batch: Batch,
    model: VideoTextModel,
    opt: AdamW,
    cfg: TrainConfig,
    eos_id: int,
) -> dict[str, float]:
    """One optimizer step of dual-pathway contrastive training.

    Returns the fused loss plus per-pathway losses; the per-pathway
    numbers are monitoring-only unless ``cfg.aux_pathway_losses`` adds
    them to the training objective.
    """
    opt.zero_grad()
    e_low, e_high, fused = model.encode_clips_parts(batch.x_low, batch.x_high, mode="cotrain")
    e_v = ad.l2_normalize(fused, axis=1)
    e_t = ad.l2_normalize(model.text_forward(batch.text_ids, eos_id), axis=1)
    loss = info_nce(e_v, e_t, cfg.temperature)

    if cfg.aux_pathway_losses:
        loss_low = _pathway_loss(e_low, e_t, cfg.temperature)
        loss_high = _pathway_loss(e_high, e_t, cfg.temperature)
        total = ad.add(loss, ad.add(loss_low, loss_high))
    else:
        with ad.no_grad():
            loss_low = _pathway_loss(e_low.detach(), e_t.detach(), cfg.temperature)
            loss_high = _pathway_loss(e_high.detach(), e_t.detach(), cfg.temperature)
        total = loss
    backward(total)
    opt.step()
    return {
        "loss": loss.item(),
        "loss_low": loss_low.item(),
        "loss_high": loss_high.item(),
    }


@dataclass
class Dataset:
    clip_ids: list[str]
    x_low: np.ndarray
    x_high: np.ndarray
    text_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.clip_ids)

    def batch(self, indices: np.ndarray) -> Batch:
        return Batch(
            clip_ids=[self.clip_ids[i] for i in indices],
            x_low=self.x_low[indices],
            x_high=self.x_high[indices],
            text_ids=self.text_ids[indices],
        )


def train_model(
    model: VideoTextModel,
    data: Dataset,
    cfg: TrainConfig,
    eos_id: int,
    log_every: int = 0,
) -> list[dict[str, float]]:
    """Epoch loop with a seeded deterministic batch order. Returns step losses."""
    cfg.validate()
    if len(data) == 0:
        raise DataError("empty training dataset")
    opt = AdamW(model.params, cfg)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for _ in range(cfg.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(data), cfg.batch_size):
            batch = data.batch(order[start : start + cfg.batch_size])
            losses = cotrain_step(batch, model, opt, cfg, eos_id)
            history.append(losses)
            if log_every and len(history) % log_every == 0:
                print(f"step {len(history)}: loss={losses['loss']:.4f}")
    return history
