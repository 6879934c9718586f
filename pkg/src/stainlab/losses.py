"""Loss terms for the conditional GAN objective.

The discriminator sees (condition, candidate) pairs and emits a map of
per-patch probabilities. Its loss is the negated log-likelihood of calling
real pairs real and generated pairs fake, with the fake term weighted by
``alpha``:

    d_loss = -mean(log d_real) - alpha * mean(log(1 - d_fake))

The generator minimizes the non-saturating adversarial surrogate plus an L1
reconstruction term and a correlation penalty that rewards structural
agreement with the target:

    g_total = g_adv + lambda_l1 * l1 + gamma_cc * (1 - pearson_cc)

Expectations are realized as means over the score map / image. All
functions accept torch tensors (differentiable) or numpy arrays; numpy
inputs are evaluated in float64 and returned as plain floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import torch

from .errors import ConfigError, ContractError

_LOG_EPS = 1e-12  # scores of exactly 0/1 give large finite losses, never NaN
_DEGENERATE_STD = 1e-12  # below this an input counts as constant


@dataclass
class LossWeights:
    alpha: float = 1.0
    lambda_l1: float = 100.0
    gamma_cc: float = 10.0

    def __post_init__(self) -> None:
        for name in ("alpha", "lambda_l1", "gamma_cc"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ConfigError(f"loss weight {name} must be finite, got {v}")
        if self.lambda_l1 < 0 or self.gamma_cc < 0:
            raise ConfigError("lambda_l1 and gamma_cc must be >= 0")


@dataclass
class LossBreakdown:
    """One training step's loss components.

    ``g_total == g_adv + lambda_l1 * g_l1 + gamma_cc * g_cc_penalty``.
    Fields may be 0-dim tensors (live, for backward) or plain floats.
    """

    d_loss: Any
    g_adv: Any
    g_l1: Any
    g_cc_penalty: Any
    g_total: Any
    degenerate_cc: bool = False

    def row(self, step: int) -> dict:
        def scalar(v) -> float:
            return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)

        return {
            "step": step,
            "d_loss": scalar(self.d_loss),
            "g_adv": scalar(self.g_adv),
            "g_l1": scalar(self.g_l1),
            "g_cc_penalty": scalar(self.g_cc_penalty),
            "g_total": scalar(self.g_total),
        }


def _pair(a, b, name: str) -> tuple[torch.Tensor, torch.Tensor, bool]:
    """Convert a pair of inputs to tensors; report whether to return floats."""
    was_numpy = not (isinstance(a, torch.Tensor) or isinstance(b, torch.Tensor))
    ta = torch.as_tensor(a, dtype=torch.float64 if was_numpy else None)
    tb = torch.as_tensor(b, dtype=torch.float64 if was_numpy else None)
    if ta.shape != tb.shape:
        raise ContractError(f"{name}: shape mismatch {tuple(ta.shape)} vs {tuple(tb.shape)}")
    return ta, tb, was_numpy


def _ret(value: torch.Tensor, as_float: bool):
    return float(value) if as_float else value


def discriminator_loss(d_real, d_fake, alpha: float = 1.0):
    """Negated objective the discriminator maximizes, averaged over the map."""
    real, fake, as_float = _pair(d_real, d_fake, "discriminator_loss")
    loss = -torch.log(real.clamp(min=_LOG_EPS)).mean() - alpha * torch.log(
        (1.0 - fake).clamp(min=_LOG_EPS)
    ).mean()
    return _ret(loss, as_float)


def generator_adv_loss(d_fake):
    """Non-saturating generator surrogate: -mean(log d_fake)."""
    fake = torch.as_tensor(d_fake, dtype=torch.float64 if not isinstance(d_fake, torch.Tensor) else None)
    loss = -torch.log(fake.clamp(min=_LOG_EPS)).mean()
    return _ret(loss, not isinstance(d_fake, torch.Tensor))


def l1_loss(generated, target):
    """Mean absolute per-element difference."""
    g, t, as_float = _pair(generated, target, "l1_loss")
    return _ret((g - t).abs().mean(), as_float)


def pearson_cc(a, b, return_degenerate: bool = False):
    """Pearson correlation over all elements of all channels jointly.

    Constant inputs have no defined correlation; they yield 0 with the
    degenerate flag set so all-background patches cannot blow up training.
    The result is clamped to [-1, 1] against float rounding.
    """
    ta, tb, as_float = _pair(a, b, "pearson_cc")
    if ta.numel() < 2:
        raise ContractError(f"pearson_cc needs at least 2 elements, got {ta.numel()}")
    da = ta - ta.mean()
    db = tb - tb.mean()
    var_a = (da * da).mean()
    var_b = (db * db).mean()
    degenerate = bool(var_a < _DEGENERATE_STD**2) or bool(var_b < _DEGENERATE_STD**2)
    if degenerate:
        cc = torch.zeros((), dtype=ta.dtype)
    else:
        cc = ((da * db).mean() / torch.sqrt(var_a * var_b)).clamp(-1.0, 1.0)
    value = _ret(cc, as_float)
    if return_degenerate:
        return value, degenerate
    return value


def cc_penalty(generated, target):
    """1 - pearson_cc(target, generated): zero penalty at perfect correlation."""
    cc = pearson_cc(target, generated)
    return 1.0 - cc


def combined_generator_loss(
    d_fake, generated, target, weights: LossWeights, d_loss=float("nan")
) -> LossBreakdown:
    """Full generator objective with its per-term breakdown."""
    g_adv = generator_adv_loss(d_fake)
    g_l1 = l1_loss(generated, target)
    cc, degenerate = pearson_cc(target, generated, return_degenerate=True)
    g_cc = 1.0 - cc
    g_total = g_adv + weights.lambda_l1 * g_l1 + weights.gamma_cc * g_cc
    return LossBreakdown(
        d_loss=d_loss,
        g_adv=g_adv,
        g_l1=g_l1,
        g_cc_penalty=g_cc,
        g_total=g_total,
        degenerate_cc=degenerate,
    )
