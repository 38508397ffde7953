"""Two-stage adaptation trainer.

Phase 0 warms the motion net up photometrically (see motion.py). Phase 1
freezes the motion net and fits the three encoders plus the shared
decoder on cached components; phase 2 unfreezes motion, freezes the
keyframe encoder, and trains the rest with the decoupling in the graph.
The decoder is trainable throughout.

One Generator seeded from the config drives batch order and latent
noise, in a fixed draw order, so a run is reproducible from its seed and
resumable from a checkpoint's saved rng state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from . import losses as LS
from . import metrics
from . import motion as MO
from . import optim
from .autodiff import Tensor
from .config import Config
from .decouple import DecoupledComponents, decouple, recouple
from .errors import ConfigError, TrainingAborted
from .model import ComponentVae, keyframe_average

SECTIONS = frozenset({"motion_net", "encoder_k", "encoder_m", "encoder_r",
                      "decoder", "discriminator"})


@dataclass(frozen=True)
class PhasePlan:
    """Warm-up length plus a tuple of (steps, frozen sections) stages."""

    phase0_steps: int
    stages: tuple

    def __post_init__(self):
        if self.phase0_steps < 0:
            raise ConfigError("phase0_steps must be >= 0")
        for steps, frozen in self.stages:
            if steps < 0:
                raise ConfigError("stage lengths must be >= 0")
            bad = set(frozen) - SECTIONS
            if bad:
                raise ConfigError(f"unknown freeze sections {sorted(bad)}")

    @staticmethod
    def decoupled_adaptation(p0: int, p1: int, p2: int) -> "PhasePlan":
        return PhasePlan(p0, ((p1, frozenset({"motion_net"})),
                              (p2, frozenset({"encoder_k"}))))

    @staticmethod
    def single_phase(p0: int, steps: int) -> "PhasePlan":
        """Ablation baseline: same budget, no freeze schedule."""
        return PhasePlan(p0, ((steps, frozenset()),))

    @property
    def total_steps(self) -> int:
        return self.phase0_steps + sum(s for s, _ in self.stages)


@dataclass
class TrainResult:
    log_lines: list
    initial: dict | None
    final: dict
    checkpoint_path: str | None
    seconds: float
    budget: dict = field(default_factory=dict)


def _merge(a: dict, b: dict) -> dict:
    overlap = a.keys() & b.keys()
    if overlap:
        raise ConfigError(f"parameter names collide: {sorted(overlap)}")
    out = dict(a)
    out.update(b)
    return out


class Trainer:
    def __init__(self, cfg: Config, dataset, plan: PhasePlan | None = None,
                 out_dir=None, phase_hook=None):
        if not len(dataset):
            raise ConfigError("training needs a non-empty dataset")
        clips = [np.asarray(c, dtype=np.float32) for c in dataset]
        split = len(clips) - cfg.holdout_clips
        if split < 1:
            raise ConfigError(
                f"{len(clips)} clips cannot spare {cfg.holdout_clips} "
                "for holdout")
        self.cfg = cfg
        self.train_clips = clips[:split]
        self.holdout = clips[split:]
        self.plan = plan if plan is not None else PhasePlan.decoupled_adaptation(
            cfg.phase0_steps, cfg.phase1_steps, cfg.phase2_steps)
        self.motion = MO.MotionNet(seed=cfg.seed)
        self.model = ComponentVae(latent_dim=cfg.latent_dim, c_lo=cfg.c_lo,
                                  c_hi=cfg.c_hi, seed=cfg.seed + 1,
                                  variant=cfg.variant)
        self.disc = LS.Discriminator(seed=cfg.seed + 2)
        self.extractor = LS.PerceptualExtractor()
        self.rng = np.random.default_rng(cfg.seed + 3)
        self.gen_params = _merge(self.motion.params, self.model.params)
        self.gen_opt = optim.AdamState(lr=cfg.lr)
        self.disc_opt = optim.AdamState(lr=cfg.lr)
        self.weights = LS.LossWeights(
            lambda_recon=cfg.lambda_recon, lambda_p=cfg.lambda_p,
            lambda_kl=cfg.lambda_kl, lambda_adv=cfg.lambda_adv,
            adv_start_step=cfg.adv_start_step)
        self.out_dir = None if out_dir is None else Path(out_dir)
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.phase_hook = phase_hook
        self.log_lines = []

    # ------------------------------------------------------------- helpers

    def _emit(self, step, phase, total, recon, kl, p, adv, psnr):
        line = (f"{step} {phase} {total:.8e} {recon:.8e} {kl:.8e} "
                f"{p:.8e} {adv:.8e} {psnr:.3f}")
        self.log_lines.append(line)
        if self.out_dir is not None:
            with open(self.out_dir / "train.log", "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def _save(self, name: str, step: int, phase: int) -> str:
        path = self.out_dir / name
        ckpt_io.save_checkpoint(path, ckpt_io.build_checkpoint(
            step, phase, rng=self.rng, gen_params=self.gen_params,
            gen_opt=self.gen_opt, disc_params=self.disc.params,
            disc_opt=self.disc_opt))
        return str(path)

    def _crash(self, step: int, phase: int):
        if self.out_dir is not None:
            self._save("crash.dcpt", step, phase)

    def evaluate(self, clips=None) -> dict:
        """Inference-mode reconstruction metrics, holdout by default."""
        if clips is None:
            clips = self.holdout if self.holdout else self.train_clips
        psnrs, ssims = [], []
        mus = None
        with ad.no_grad():
            for arr in clips:
                clip = Tensor(arr)
                comps = decouple(clip, self.motion)
                out = self.model.forward(comps, inference=True)
                xhat = recouple(keyframe_average(out.x_k_hat),
                                out.x_m_hat, out.x_r_hat)
                rec = np.clip(xhat.data, 0.0, 1.0)
                psnrs.append(metrics.psnr(rec, arr))
                ssims.append(metrics.ssim(rec, arr))
                if mus is None:
                    mus = {c: [] for c in out.latents}
                for c, lat in out.latents.items():
                    mus[c].append(lat.mu.data.copy())
        report = {"psnr": float(np.mean(psnrs)),
                  "ssim": float(np.mean(ssims)),
                  "clips": len(clips)}
        if len(clips) >= 2:
            report["latent"] = metrics.latent_stats(mus)
        return report

    def _component_cache(self):
        """Components of every training clip under the current (frozen)
        motion net; valid for exactly as long as the net stays frozen."""
        cache = []
        with ad.no_grad():
            for arr in self.train_clips:
                comps = decouple(Tensor(arr), self.motion)
                cache.append((comps.x_k.data, comps.x_m.data,
                              comps.x_r.data))
        return cache

    # ---------------------------------------------------------- one step

    def _train_step(self, step, phase, frozen, cache):
        cfg = self.cfg
        gated = (step >= self.weights.adv_start_step
                 and self.weights.lambda_adv > 0)
        idx = self.rng.integers(0, len(self.train_clips),
                                size=cfg.batch_size)
        recon_t, kl_t, p_t, adv_t, d_t, psnrs = [], [], [], [], [], []
        for j in idx:
            arr = self.train_clips[int(j)]
            clip = Tensor(arr)
            if cache is not None:
                xk, xm, xr = cache[int(j)]
                comps = DecoupledComponents(Tensor(xk), Tensor(xm),
                                            Tensor(xr))
            elif cfg.detach_decouple:
                with ad.no_grad():
                    comps = decouple(clip, self.motion)
            else:
                comps = decouple(clip, self.motion)
            out = self.model.forward(comps, rng=self.rng)
            xhat = recouple(keyframe_average(out.x_k_hat),
                            out.x_m_hat, out.x_r_hat)
            aux = []
            if cfg.aux_components:
                aux = [(out.x_m_hat, comps.x_m.detach()),
                       (out.x_r_hat, comps.x_r.detach())]
            recon_t.append(LS.recon_loss(xhat, clip, aux_pairs=aux))
            kl_t.append(LS.kl_loss(out.latents))
            p_t.append(LS.perceptual_loss(xhat, clip, self.extractor))
            if gated:
                g, d = LS.adv_losses(self.disc, clip, xhat)
                adv_t.append(g)
                d_t.append(d)
            psnrs.append(metrics.psnr(xhat.data, arr))
        recon = ad.mean(ad.stack(recon_t))
        kl = ad.mean(ad.stack(kl_t))
        p = ad.mean(ad.stack(p_t))
        adv = ad.mean(ad.stack(adv_t)) if gated else None
        total = LS.total_loss(recon, kl, adv, p, self.weights, step)
        val = total.item()
        if not np.isfinite(val):
            self._crash(step, phase)
            raise TrainingAborted(f"non-finite total loss {val}", step)
        try:
            optim.zero_grad(self.gen_params)
            total.backward()
            optim.clip_global_norm(self.gen_params, cfg.clip_norm, frozen)
            optim.adam_step(self.gen_params, self.gen_opt, frozen)
            if gated:
                dloss = ad.mean(ad.stack(d_t))
                optim.zero_grad(self.disc.params)
                dloss.backward()
                optim.clip_global_norm(self.disc.params, cfg.clip_norm)
                optim.adam_step(self.disc.params, self.disc_opt)
        except TrainingAborted:
            self._crash(step, phase)
            raise
        self._emit(step, phase, val, recon.item(), kl.item(), p.item(),
                   0.0 if adv is None else adv.item(),
                   float(np.mean(psnrs)))

    # -------------------------------------------------------------- run

    def run(self, resume=None) -> TrainResult:
        t0 = time.time()
        cfg = self.cfg
        p0 = self.plan.phase0_steps
        initial = None
        start_step = 0
        if resume is not None:
            ck = ckpt_io.load_checkpoint(resume)
            if ck.step < p0:
                raise ConfigError(
                    f"checkpoint at step {ck.step} is inside the "
                    f"{p0}-step motion warm-up; warm-up restarts from "
                    "scratch, resume from a later checkpoint")
            if ck.step > self.plan.total_steps:
                raise ConfigError(
                    f"checkpoint step {ck.step} exceeds the "
                    f"{self.plan.total_steps}-step plan")
            ckpt_io.restore_checkpoint(
                ck, gen_params=self.gen_params, gen_opt=self.gen_opt,
                disc_params=self.disc.params, disc_opt=self.disc_opt,
                rng=self.rng)
            start_step = ck.step
        else:
            initial = self.evaluate()
            if p0 > 0:
                def phase0_line(s, loss, psnr):
                    self._emit(s, 0, loss, loss, 0.0, 0.0, 0.0, psnr)

                MO.pretrain_motion(
                    self.motion, self.train_clips, p0, lr=cfg.motion_lr,
                    rng=self.rng, batch_size=cfg.batch_size,
                    clip_norm=cfg.clip_norm, blur0=cfg.motion_blur0,
                    anneal_frac=cfg.motion_anneal_frac, log=phase0_line)
            if self.out_dir is not None:
                self._save(f"step_{p0:05d}.dcpt", p0, 0)
        step = max(start_step, p0)
        boundary = p0
        last_phase = 0
        for stage_idx, (stage_steps, frozen) in enumerate(self.plan.stages):
            phase = stage_idx + 1
            boundary += stage_steps
            if step >= boundary:
                last_phase = phase
                continue
            cache = (self._component_cache()
                     if "motion_net" in frozen else None)
            if self.phase_hook is not None:
                self.phase_hook(phase, "start", self)
            while step < boundary:
                step += 1
                self._train_step(step, phase, frozen, cache)
                if (self.out_dir is not None
                        and step % cfg.checkpoint_every == 0
                        and step < self.plan.total_steps):
                    self._save(f"step_{step:05d}.dcpt", step, phase)
            if self.phase_hook is not None:
                self.phase_hook(phase, "end", self)
            last_phase = phase
        final = self.evaluate()
        path = None
        if self.out_dir is not None:
            path = self._save("final.dcpt", step, last_phase)
        return TrainResult(
            log_lines=self.log_lines, initial=initial, final=final,
            checkpoint_path=path, seconds=time.time() - t0,
            budget={"total_steps": self.plan.total_steps,
                    "batch_size": cfg.batch_size, "seed": cfg.seed,
                    "clips": len(self.train_clips)})


def train_run(cfg: Config, dataset, plan: PhasePlan | None = None,
              out_dir=None, resume=None, phase_hook=None) -> TrainResult:
    return Trainer(cfg, dataset, plan=plan, out_dir=out_dir,
                   phase_hook=phase_hook).run(resume=resume)
