import numpy as np
import pytest

from kmrvae import autodiff as ad
from kmrvae import losses as L
from kmrvae import optim
from kmrvae.autodiff import Tensor
from kmrvae.errors import ConfigError, ShapeError
from kmrvae.model import LatentGaussian

LN2 = float(np.log(2.0))


def _clip(rng, t=4, h=16, w=16):
    return Tensor(rng.random((3, t, h, w)).astype(np.float32))


# ------------------------------------------------------------------ recon

def test_recon_zero_on_identity_and_mean_abs():
    rng = np.random.default_rng(0)
    x = _clip(rng)
    assert L.recon_loss(x, x).item() == 0.0
    shifted = Tensor(x.data + np.float32(0.1))
    assert abs(L.recon_loss(shifted, x).item() - 0.1) < 1e-6


def test_recon_aux_pairs_add_their_own_l1():
    rng = np.random.default_rng(1)
    x, xh = _clip(rng), _clip(rng)
    m, r = _clip(rng), _clip(rng)
    frame_only = L.recon_loss(xh, x).item()
    with_perfect_aux = L.recon_loss(xh, x, aux_pairs=[(m, m), (r, r)]).item()
    assert with_perfect_aux == frame_only
    mh = Tensor(m.data + np.float32(0.5))
    grown = L.recon_loss(xh, x, aux_pairs=[(mh, m)]).item()
    assert abs(grown - (frame_only + L.AUX_WEIGHT * 0.5)) < 1e-5


def test_recon_shape_mismatch_rejected():
    a = Tensor(np.zeros((3, 4, 16, 16), np.float32))
    b = Tensor(np.zeros((3, 4, 16, 8), np.float32))
    with pytest.raises(ShapeError):
        L.recon_loss(a, b)
    with pytest.raises(ShapeError):
        L.recon_loss(a, a, aux_pairs=[(a, b)])


# --------------------------------------------------------------------- kl

def _lat(mu, lv):
    return LatentGaussian(mu=Tensor(np.asarray(mu, np.float32)),
                          log_var=Tensor(np.asarray(lv, np.float32)))


def test_kl_standard_normal_is_zero():
    lat = _lat(np.zeros(8), np.zeros(8))
    assert L.kl_loss([lat, lat, lat]).item() == 0.0


def test_kl_unit_mean_single_element():
    assert abs(L.kl_loss([_lat([1.0], [0.0])]).item() - 0.5) < 1e-7


def test_kl_nonnegative_and_zero_only_at_origin():
    rng = np.random.default_rng(2)
    for _ in range(20):
        mu = rng.normal(size=6) * 2
        lv = rng.normal(size=6)
        assert L.kl_loss([_lat(mu, lv)]).item() > 0.0
    assert L.kl_loss([_lat([0.0], [0.0])]).item() == 0.0


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(3)
    n = 200_000
    for _ in range(10):
        mu = rng.uniform(0.5, 1.5, size=4) * rng.choice([-1.0, 1.0], size=4)
        lv = rng.uniform(-1.0, 1.0, size=4)
        closed = L.kl_loss([_lat(mu, lv)]).item()
        eps = rng.standard_normal((n, 4))
        z = mu + np.exp(lv / 2) * eps
        # log q(z) - log p(z), averaged over draws then elements
        diff = -0.5 * lv - 0.5 * eps * eps + 0.5 * z * z
        mc = float(diff.mean())
        assert abs(mc - closed) / closed < 0.02, (closed, mc)


def test_kl_accepts_dict_and_rejects_empty():
    lat = _lat([1.0], [0.0])
    assert L.kl_loss({"k": lat}).item() == L.kl_loss([lat]).item()
    with pytest.raises(ShapeError):
        L.kl_loss([])


# ------------------------------------------------------------- perceptual

def test_perceptual_zero_on_identity_and_symmetric():
    ext = L.PerceptualExtractor()
    rng = np.random.default_rng(4)
    x, y = _clip(rng), _clip(rng)
    assert L.perceptual_loss(x, x, ext).item() == 0.0
    assert L.perceptual_loss(x, y, ext).item() == L.perceptual_loss(y, x, ext).item()


def test_perceptual_ranks_near_before_far():
    ext = L.PerceptualExtractor()
    rng = np.random.default_rng(5)
    for _ in range(20):
        base = rng.random((3, 4, 16, 16)).astype(np.float32)
        noise = rng.standard_normal(base.shape).astype(np.float32)
        near = Tensor(base + 0.01 * noise)
        far = Tensor(base + 0.2 * noise)
        x = Tensor(base)
        assert (L.perceptual_loss(near, x, ext).item()
                < L.perceptual_loss(far, x, ext).item())


def test_perceptual_depends_on_seed_but_is_frozen():
    rng = np.random.default_rng(6)
    x, y = _clip(rng), _clip(rng)
    default = L.perceptual_loss(x, y, L.PerceptualExtractor())
    other = L.perceptual_loss(x, y, L.PerceptualExtractor(seed=1))
    assert default.item() != other.item()
    again = L.perceptual_loss(x, y, L.PerceptualExtractor())
    assert default.item() == again.item()


def test_perceptual_extractor_takes_no_gradients():
    ext = L.PerceptualExtractor()
    rng = np.random.default_rng(7)
    x = Tensor(rng.random((3, 4, 16, 16)).astype(np.float32),
               requires_grad=True)
    L.perceptual_loss(x, _clip(rng), ext).backward()
    assert x.grad is not None
    for conv in ext.layers:
        assert conv.weight.grad is None and conv.bias.grad is None


# ------------------------------------------------------------ adversarial

def test_zero_logit_discriminator_gives_ln2_losses():
    disc = L.Discriminator(seed=0)
    disc.params["discriminator.conv3.weight"].data[:] = 0.0
    rng = np.random.default_rng(8)
    gen, dloss = L.adv_losses(disc, _clip(rng), _clip(rng))
    assert abs(gen.item() - LN2) < 1e-6
    assert abs(dloss.item() - 2 * LN2) < 1e-6


def test_generator_gradient_through_fake_is_nonzero():
    disc = L.Discriminator(seed=1)
    rng = np.random.default_rng(9)
    fake = Tensor(rng.random((3, 4, 16, 16)).astype(np.float32),
                  requires_grad=True)
    gen, _ = L.adv_losses(disc, _clip(rng), fake)
    gen.backward()
    assert np.all(np.isfinite(fake.grad))
    assert np.abs(fake.grad).max() > 0.0


def test_disc_loss_never_reaches_generator_side():
    disc = L.Discriminator(seed=2)
    rng = np.random.default_rng(10)
    fake = Tensor(rng.random((3, 4, 16, 16)).astype(np.float32),
                  requires_grad=True)
    _, dloss = L.adv_losses(disc, _clip(rng), fake)
    dloss.backward()
    assert fake.grad is None


def test_discriminator_trains_on_fixed_batch():
    disc = L.Discriminator(seed=3)
    rng = np.random.default_rng(11)
    real, fake = _clip(rng), _clip(rng)
    state = optim.AdamState(lr=1e-3)
    history = []
    for _ in range(50):
        optim.zero_grad(disc.params)
        _, dloss = L.adv_losses(disc, real, fake)
        history.append(dloss.item())
        dloss.backward()
        optim.adam_step(disc.params, state)
    assert history[-1] < history[0]


def test_discriminator_patch_extent_survives_small_inputs():
    disc = L.Discriminator(seed=4)
    for t, h, w in [(4, 8, 8), (4, 16, 16), (8, 32, 32)]:
        out = disc(Tensor(np.zeros((3, t, h, w), np.float32)))
        assert out.shape[0] == 1
        assert all(s >= 1 for s in out.shape[1:]), out.shape
    with pytest.raises(ShapeError):
        disc(Tensor(np.zeros((4, 4, 16, 16), np.float32)))


# ------------------------------------------------------------------ total

def _scalar(v):
    return Tensor(np.asarray(v, np.float32))


def test_total_loss_paper_weight_arithmetic():
    w = L.LossWeights(adv_start_step=100)
    total = L.total_loss(_scalar(0.1), _scalar(2.0), _scalar(0.3),
                         _scalar(0.05), w, step=100)
    assert abs(total.item() - 0.6600002) <= 1e-7


def test_total_loss_gates_adversarial_term():
    w = L.LossWeights(adv_start_step=10)
    parts = dict(recon=_scalar(0.1), kl=_scalar(2.0), p=_scalar(0.05))
    before = L.total_loss(parts["recon"], parts["kl"], _scalar(1e6),
                          parts["p"], w, step=9)
    without = L.total_loss(parts["recon"], parts["kl"], None,
                           parts["p"], w, step=9)
    at_gate = L.total_loss(parts["recon"], parts["kl"], _scalar(0.3),
                           parts["p"], w, step=10)
    assert before.item() == without.item()
    assert abs(at_gate.item() - 0.6600002) <= 1e-7


def test_total_loss_zero_parts_and_monotonicity():
    w = L.LossWeights(adv_start_step=0)
    zero = L.total_loss(_scalar(0), _scalar(0), _scalar(0), _scalar(0), w, 0)
    assert zero.item() == 0.0
    lo = L.total_loss(_scalar(0.1), _scalar(1.0), _scalar(0.1), _scalar(0.1), w, 0)
    hi = L.total_loss(_scalar(0.2), _scalar(1.0), _scalar(0.1), _scalar(0.1), w, 0)
    assert hi.item() > lo.item()


def test_loss_weights_validate():
    with pytest.raises(ConfigError):
        L.LossWeights(lambda_recon=-1.0)
    with pytest.raises(ConfigError):
        L.LossWeights(adv_start_step=-5)
