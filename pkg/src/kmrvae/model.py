"""Dedicated Gaussian encoders with one shared 3D decoder.

Three identical-architecture encoders (keyframe, motion, residual, no
weight sharing) map a [3,T,H,W] stack to a diagonal Gaussian over a
[D, T/4, H/8, W/8] latent grid; one decoder maps any of the three
latents back to [3,T,H,W]. Downsampling is three strided conv stages
(two of them temporal), each chased by a pre-activation residual block;
the decoder mirrors the strides with nearest-neighbour upsampling.

The concat variant used by the ablation study swaps the three encoders
for a single one over the 9-channel stack and widens the decoder head to
9 channels; the latent budget stays one D-channel grid, which is the
point of the comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ShapeError

LATENT_DIM = 16
TEMPORAL_FACTOR = 4
SPATIAL_FACTOR = 8

COMPONENTS = ("k", "m", "r")

_STRIDES = ((2, 2, 2), (2, 2, 2), (1, 2, 2))


class _ResBlock:
    """x + conv(lrelu(conv(lrelu(x)))), channels preserved."""

    def __init__(self, rng, ch):
        self.c1 = nn.Conv3d(rng, ch, ch, kernel=(3, 3, 3))
        self.c2 = nn.Conv3d(rng, ch, ch, kernel=(3, 3, 3))

    def __call__(self, x):
        h = self.c1(ad.leaky_relu(x, nn.LEAKY_SLOPE))
        h = self.c2(ad.leaky_relu(h, nn.LEAKY_SLOPE))
        return ad.add(x, h)

    def named(self, prefix):
        yield from self.c1.named(prefix + ".c1")
        yield from self.c2.named(prefix + ".c2")


class _Encoder:
    def __init__(self, rng, cin, c_lo, c_hi, latent_dim):
        chans = [(c_lo, c_lo), (c_lo, c_hi), (c_hi, c_hi)]
        self.stem = nn.Conv3d(rng, cin, c_lo, kernel=(3, 3, 3))
        self.downs = []
        self.blocks = []
        for (ci, co), stride in zip(chans, _STRIDES):
            self.downs.append(
                nn.Conv3d(rng, ci, co, kernel=(3, 3, 3), stride=stride))
            self.blocks.append(_ResBlock(rng, co))
        self.head = nn.Conv3d(rng, c_hi, 2 * latent_dim, kernel=(3, 3, 3))
        # log_var half of the head starts at zero: sigma is exactly 1
        self.head.weight.data[latent_dim:] = 0.0
        self.latent_dim = latent_dim

    def __call__(self, x):
        h = self.stem(x)
        for down, block in zip(self.downs, self.blocks):
            h = block(down(ad.leaky_relu(h, nn.LEAKY_SLOPE)))
        out = self.head(ad.leaky_relu(h, nn.LEAKY_SLOPE))
        d = self.latent_dim
        return out[:d], out[d:]

    def named(self, prefix):
        yield from self.stem.named(prefix + ".stem")
        for i, (down, block) in enumerate(zip(self.downs, self.blocks)):
            yield from down.named(f"{prefix}.down{i}")
            yield from block.named(f"{prefix}.block{i}")
        yield from self.head.named(prefix + ".head")


class _Decoder:
    def __init__(self, rng, latent_dim, c_lo, c_hi, cout):
        self.stem = nn.Conv3d(rng, latent_dim, c_hi, kernel=(3, 3, 3))
        self.factors = tuple(reversed(_STRIDES))
        chans = [(c_hi, c_hi), (c_hi, c_lo), (c_lo, c_lo)]
        self.ups = [nn.Conv3d(rng, ci, co, kernel=(3, 3, 3))
                    for ci, co in chans]
        self.blocks = [_ResBlock(rng, c_lo), _ResBlock(rng, c_lo)]
        self.head = nn.Conv3d(rng, c_lo, cout, kernel=(3, 3, 3))
        self.cout = cout

    def __call__(self, z):
        h = self.stem(z)
        for conv, factor in zip(self.ups, self.factors):
            h = conv(ad.upsample_nearest(
                ad.leaky_relu(h, nn.LEAKY_SLOPE), factor))
        for block in self.blocks:
            h = block(h)
        return self.head(ad.leaky_relu(h, nn.LEAKY_SLOPE))

    def named(self, prefix):
        yield from self.stem.named(prefix + ".stem")
        for i, conv in enumerate(self.ups):
            yield from conv.named(f"{prefix}.up{i}")
        for i, block in enumerate(self.blocks):
            yield from block.named(f"{prefix}.block{i}")
        yield from self.head.named(prefix + ".head")


@dataclass
class LatentGaussian:
    mu: Tensor
    log_var: Tensor


@dataclass
class VaeOutput:
    """Everything the losses and recoupling need from one forward pass."""

    x_k_hat: Tensor
    x_m_hat: Tensor
    x_r_hat: Tensor
    latents: dict  # component -> LatentGaussian
    z: dict        # component -> sampled (or mu) latent


def reparameterize(lat: LatentGaussian, rng=None, eps=None,
                   inference: bool = False) -> Tensor:
    """z = mu + exp(log_var/2) * eps with eps ~ N(0,I) held constant.

    Pass a Generator (or a pre-drawn eps array) for the training path;
    inference mode returns mu itself, bit for bit."""
    if inference:
        return lat.mu
    if eps is None:
        if rng is None:
            raise ShapeError("reparameterize needs rng or eps unless "
                             "inference=True")
        eps = rng.standard_normal(lat.mu.shape)
    eps_t = Tensor(np.asarray(eps, dtype=lat.mu.data.dtype))
    sigma = ad.exp(ad.mul(lat.log_var, 0.5))
    return ad.add(lat.mu, ad.mul(sigma, eps_t))


def keyframe_average(x_k_hat: Tensor) -> Tensor:
    """Mean over the T temporal slices -> [3,H,W]."""
    if x_k_hat.ndim != 4:
        raise ShapeError(f"expected [3,T,H,W], got {x_k_hat.shape}")
    return ad.mean(x_k_hat, axis=1)


class ComponentVae:
    def __init__(self, latent_dim: int = LATENT_DIM, c_lo: int = 32,
                 c_hi: int = 64, seed: int = 0,
                 variant: str = "dedicated"):
        if variant not in ("dedicated", "concat"):
            raise ShapeError(f"unknown variant {variant!r}")
        rng = np.random.default_rng(seed)
        self.latent_dim = latent_dim
        self.variant = variant
        pairs = []
        if variant == "dedicated":
            self.encoders = {}
            for comp in COMPONENTS:
                enc = _Encoder(rng, 3, c_lo, c_hi, latent_dim)
                self.encoders[comp] = enc
                pairs.extend(enc.named(f"encoder_{comp}"))
            self.decoder = _Decoder(rng, latent_dim, c_lo, c_hi, 3)
        else:
            self.encoder_cat = _Encoder(rng, 9, c_lo, c_hi, latent_dim)
            pairs.extend(self.encoder_cat.named("encoder_cat"))
            self.decoder = _Decoder(rng, latent_dim, c_lo, c_hi, 9)
        pairs.extend(self.decoder.named("decoder"))
        self.params = nn.collect(pairs)

    def param_count(self) -> int:
        return nn.param_count(self.params)

    def _check_input(self, x: Tensor):
        if x.ndim != 4:
            raise ShapeError(f"component stack must be 4D, got {x.shape}")
        _, t, h, w = x.shape
        problems = []
        if t % TEMPORAL_FACTOR:
            problems.append(f"T={t} not divisible by {TEMPORAL_FACTOR}")
        if h % SPATIAL_FACTOR:
            problems.append(f"H={h} not divisible by {SPATIAL_FACTOR}")
        if w % SPATIAL_FACTOR:
            problems.append(f"W={w} not divisible by {SPATIAL_FACTOR}")
        if problems:
            raise ShapeError("; ".join(problems))

    def encode(self, component: str, x: Tensor) -> LatentGaussian:
        self._check_input(x)
        if self.variant == "dedicated":
            if component not in self.encoders:
                raise ShapeError(f"unknown component {component!r}")
            if x.shape[0] != 3:
                raise ShapeError(f"expected 3 channels, got {x.shape[0]}")
            mu, log_var = self.encoders[component](x)
        else:
            if component != "cat":
                raise ShapeError(
                    "concat variant encodes the joint stack under 'cat'")
            if x.shape[0] != 9:
                raise ShapeError(f"expected 9 channels, got {x.shape[0]}")
            mu, log_var = self.encoder_cat(x)
        return LatentGaussian(mu=mu, log_var=log_var)

    def decode(self, z: Tensor) -> Tensor:
        if z.ndim != 4 or z.shape[0] != self.latent_dim:
            raise ShapeError(
                f"latent must be [{self.latent_dim},T',H',W'], got {z.shape}")
        return self.decoder(z)

    def forward(self, components, rng=None,
                inference: bool = False) -> VaeOutput:
        """components is a DecoupledComponents; see that type for layout."""
        if self.variant == "dedicated":
            stacks = {"k": components.x_k, "m": components.x_m,
                      "r": components.x_r}
            latents, zs, outs = {}, {}, {}
            for comp in COMPONENTS:
                lat = self.encode(comp, stacks[comp])
                z = reparameterize(lat, rng=rng, inference=inference)
                latents[comp] = lat
                zs[comp] = z
                outs[comp] = self.decode(z)
            return VaeOutput(x_k_hat=outs["k"], x_m_hat=outs["m"],
                             x_r_hat=outs["r"], latents=latents, z=zs)
        joint = ad.concat(
            [components.x_k, components.x_m, components.x_r], axis=0)
        lat = self.encode("cat", joint)
        z = reparameterize(lat, rng=rng, inference=inference)
        out = self.decode(z)
        return VaeOutput(x_k_hat=out[0:3], x_m_hat=out[3:6],
                         x_r_hat=out[6:9], latents={"cat": lat},
                         z={"cat": z})
