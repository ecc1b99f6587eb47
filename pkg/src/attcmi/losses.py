"""Training objectives for the adversarial multi-task model.

Discriminator: -E[log(1 - D(fake))] - E[log(D(real))].
Generator: uncertainty-weighted sum of the classification cross-entropy and
the image term (lambda * L1 + adversarial), with trainable per-task
log-sigmas; the log barrier keeps either task from being muted for free.

All probabilities are clamped to [EPS, 1-EPS] before any log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

EPS = 1e-7


@dataclass
class UncertaintyParams:
    """Trainable log-sigmas for the classification and image tasks.

    Stored as log(sigma) and exponentiated on use, which keeps both sigmas
    positive for any parameter value. Both start at the same value (0.0,
    i.e. sigma = 1, reducing the total to plain task weighting at step 0).
    """

    log_sigma1: Tensor  # classification
    log_sigma2: Tensor  # image reconstruction

    @classmethod
    def fresh(cls, initial: float = 0.0) -> "UncertaintyParams":
        return cls(log_sigma1=Tensor(np.float64(initial), requires_grad=True),
                   log_sigma2=Tensor(np.float64(initial), requires_grad=True))

    @property
    def sigma1(self) -> float:
        return float(np.exp(self.log_sigma1.data))

    @property
    def sigma2(self) -> float:
        return float(np.exp(self.log_sigma2.data))

    def named(self) -> dict:
        return {"u/log_sigma1": self.log_sigma1, "u/log_sigma2": self.log_sigma2}


@dataclass
class LossBreakdown:
    l_d: float
    l_cat: float
    l_l1: float
    l_adv: float
    l_img: float
    l_g_total: float
    sigma1: float
    sigma2: float


def discriminator_loss(d_fake: Tensor, d_real: Tensor) -> Tensor:
    """Mean over the batch of -log(1 - D(fake)) - log(D(real))."""
    fake = T.clip(d_fake, EPS, 1.0 - EPS)
    real = T.clip(d_real, EPS, 1.0 - EPS)
    return T.tmean(T.neg(T.log(T.sub(1.0, fake)))) + T.tmean(T.neg(T.log(real)))


def categorical_loss(probs: Tensor, labels) -> Tensor:
    """Categorical cross-entropy: mean of -log p[true class]."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError(f"labels must lie in [0, {probs.shape[1]}), got "
                         f"[{labels.min()}, {labels.max()}]")
    picked = T.clip(T.gather_rows(probs, labels), EPS, 1.0)
    return T.tmean(T.neg(T.log(picked)))


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Per-element mean absolute error (mean, not sum: keeps the weighting
    coefficient scale-free across image sizes)."""
    if pred.shape != target.shape:
        raise T.ShapeError(f"l1_loss: shapes {pred.shape} vs {target.shape}")
    return T.tmean(T.absolute(T.sub(pred, target)))


def adversarial_loss(d_fake: Tensor) -> Tensor:
    """-mean(log D(fake)): the generator's incentive to fool the discriminator."""
    return T.tmean(T.neg(T.log(T.clip(d_fake, EPS, 1.0 - EPS))))


def image_loss_parts(pred: Tensor, target: Tensor, d_fake: Tensor,
                     lam: float) -> tuple:
    """Returns (total, l1_term, adversarial_term); total = lam*l1 + adv."""
    l1 = l1_loss(pred, target)
    adv = adversarial_loss(d_fake)
    return T.add(T.mul(l1, float(lam)), adv), l1, adv


def image_loss(pred: Tensor, target: Tensor, d_fake: Tensor, lam: float = 100.0) -> Tensor:
    return image_loss_parts(pred, target, d_fake, lam)[0]


def generator_total(l_cat: Tensor, l_img: Tensor, u: UncertaintyParams) -> Tensor:
    """(1/sigma1^2) l_cat + (1/(2 sigma2^2)) l_img + log sigma1 + log sigma2."""
    w1 = T.exp(T.mul(u.log_sigma1, -2.0))          # 1 / sigma1^2
    w2 = T.mul(T.exp(T.mul(u.log_sigma2, -2.0)), 0.5)
    return T.mul(w1, l_cat) + T.mul(w2, l_img) + u.log_sigma1 + u.log_sigma2
