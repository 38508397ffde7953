"""Training objective: weighted L1 + KL + perceptual + adversarial.

The perceptual term compares feature maps from a small random conv net
whose weights are drawn once from a fixed seed and never trained or
checkpointed. Random features are a weak proxy for a pretrained
extractor but they keep the package self-contained, and the term only
has to rank near/far reconstructions consistently, which it does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

AUX_WEIGHT = 1.0
_EXTRACTOR_SEED = 90125


@dataclass
class LossWeights:
    lambda_recon: float = 4.0
    lambda_p: float = 4.0
    lambda_kl: float = 1e-7
    lambda_adv: float = 0.2
    adv_start_step: int = 0

    def __post_init__(self):
        for f in ("lambda_recon", "lambda_p", "lambda_kl", "lambda_adv"):
            if getattr(self, f) < 0:
                raise ConfigError(f"{f} must be >= 0, got {getattr(self, f)}")
        if self.adv_start_step < 0:
            raise ConfigError("adv_start_step must be >= 0")


def _l1(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return ad.mean(ad.absolute(ad.sub(a, b)))


def recon_loss(x_hat: Tensor, x: Tensor, aux_pairs=()) -> Tensor:
    """Mean |x_hat - x| over recoupled frames, plus AUX_WEIGHT times the
    same L1 on each (predicted, target) component pair in aux_pairs."""
    total = _l1(x_hat, x)
    for pred, target in aux_pairs:
        total = ad.add(total, ad.mul(_l1(pred, target), AUX_WEIGHT))
    return total


def kl_loss(latents) -> Tensor:
    """Mean over elements, then over components, of the closed-form KL
    against a standard normal: 0.5 * (mu^2 + exp(lv) - 1 - lv)."""
    lats = list(latents.values()) if isinstance(latents, dict) else list(latents)
    if not lats:
        raise ShapeError("kl_loss needs at least one latent")
    total = None
    for lat in lats:
        mu, lv = lat.mu, lat.log_var
        per = ad.mul(ad.sub(ad.add(ad.square(mu), ad.exp(lv)),
                            ad.add(lv, 1.0)), 0.5)
        term = ad.mean(per)
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 1.0 / len(lats))


class PerceptualExtractor:
    """Three stride-2 conv layers applied per frame, weights fixed at
    construction from a seed baked into this module."""

    def __init__(self, seed: int = _EXTRACTOR_SEED):
        rng = np.random.default_rng(seed)
        chans = [(3, 8), (8, 16), (16, 16)]
        self.layers = []
        for ci, co in chans:
            conv = nn.Conv3d(rng, ci, co, kernel=(1, 3, 3), stride=(1, 2, 2))
            conv.weight.requires_grad = False
            conv.bias.requires_grad = False
            self.layers.append(conv)

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        for i, conv in enumerate(self.layers):
            if i:
                h = ad.leaky_relu(h, nn.LEAKY_SLOPE)
            h = conv(h)
        return h


def perceptual_loss(x_hat: Tensor, x: Tensor,
                    extractor: PerceptualExtractor) -> Tensor:
    if x_hat.shape != x.shape:
        raise ShapeError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    return ad.mean(ad.square(ad.sub(extractor(x_hat), extractor(x))))


class Discriminator:
    """Four strided 3D convs to single-channel patch logits."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        spec = [(3, 32, (1, 2, 2)), (32, 64, (2, 2, 2)),
                (64, 64, (2, 2, 2)), (64, 1, (1, 2, 2))]
        self.layers = [nn.Conv3d(rng, ci, co, kernel=(3, 3, 3), stride=st)
                       for ci, co, st in spec]
        pairs = []
        for i, conv in enumerate(self.layers):
            pairs.extend(conv.named(f"discriminator.conv{i}"))
        self.params = nn.collect(pairs)

    def __call__(self, video: Tensor) -> Tensor:
        if video.ndim != 4 or video.shape[0] != 3:
            raise ShapeError(f"expected [3,T,H,W], got {video.shape}")
        h = video
        for i, conv in enumerate(self.layers):
            if i:
                h = ad.leaky_relu(h, nn.LEAKY_SLOPE)
            h = conv(h)
        return h


def adv_losses(disc: Discriminator, real: Tensor, fake: Tensor):
    """Non-saturating pair: (generator loss, discriminator loss).

    The discriminator sees the fake through a detached copy so its loss
    never reaches generator parameters."""
    if real.shape != fake.shape:
        raise ShapeError(f"shape mismatch {real.shape} vs {fake.shape}")
    gen = ad.mean(ad.softplus(ad.mul(disc(fake), -1.0)))
    d_real = ad.mean(ad.softplus(ad.mul(disc(real), -1.0)))
    d_fake = ad.mean(ad.softplus(disc(fake.detach())))
    return gen, ad.add(d_real, d_fake)


def total_loss(recon: Tensor, kl: Tensor, adv_gen, p: Tensor,
               weights: LossWeights, step: int) -> Tensor:
    """Weighted sum; the adversarial term joins once step reaches
    weights.adv_start_step."""
    total = ad.add(ad.mul(recon, weights.lambda_recon),
                   ad.mul(kl, weights.lambda_kl))
    total = ad.add(total, ad.mul(p, weights.lambda_p))
    if adv_gen is not None and step >= weights.adv_start_step:
        total = ad.add(total, ad.mul(adv_gen, weights.lambda_adv))
    return total
