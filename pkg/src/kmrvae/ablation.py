"""Controlled comparisons behind the two design claims: dedicated
encoders versus one concat encoder, and the staged freeze schedule
versus training everything at once. Each comparison runs both arms with
identical data, seed and step budget, and refuses to compare results
whose budgets differ."""

from __future__ import annotations

from . import videoio
from .config import Config, ablation_seed_list
from .errors import ConfigError
from .train import PhasePlan, TrainResult, train_run


def _clone(cfg: Config, **overrides) -> Config:
    values = dict(cfg.items())
    values.update(overrides)
    return Config(values)


def _require_same_budget(a: TrainResult, b: TrainResult) -> None:
    if a.budget != b.budget:
        raise ConfigError(
            f"ablation arms ran different budgets: {a.budget} vs {b.budget}")


def _dataset(cfg: Config):
    return [s.video for s in videoio.synthesize_dataset(
        cfg.seed, cfg.num_clips, cfg.frames, cfg.height, cfg.width,
        cfg.regime)]


def _arm_report(res: TrainResult) -> dict:
    return {"psnr": res.final["psnr"], "ssim": res.final["ssim"],
            "latent": res.final.get("latent"), "budget": res.budget,
            "seconds": round(res.seconds, 2)}


def run_encoder_ablation(cfg: Config, dataset=None) -> dict:
    """Dedicated per-component encoders vs the 9-channel concat encoder,
    same decoder budget, same latent grid size."""
    clips = _dataset(cfg) if dataset is None else dataset
    dedicated = train_run(_clone(cfg, variant="dedicated"), clips)
    concat = train_run(_clone(cfg, variant="concat"), clips)
    _require_same_budget(dedicated, concat)
    return {
        "dedicated": _arm_report(dedicated),
        "concat": _arm_report(concat),
        "psnr_gap": dedicated.final["psnr"] - concat.final["psnr"],
        "dedicated_wins": dedicated.final["psnr"] > concat.final["psnr"],
    }


def run_schedule_ablation(cfg: Config) -> dict:
    """Two-phase adaptation vs a single unfrozen phase of equal length,
    once per seed in cfg.ablation_seeds."""
    rows = []
    for seed in ablation_seed_list(cfg):
        cfg_seed = _clone(cfg, seed=seed)
        clips = _dataset(cfg_seed)
        two = train_run(cfg_seed, clips, plan=PhasePlan.decoupled_adaptation(
            cfg.phase0_steps, cfg.phase1_steps, cfg.phase2_steps))
        single = train_run(cfg_seed, clips, plan=PhasePlan.single_phase(
            cfg.phase0_steps, cfg.phase1_steps + cfg.phase2_steps))
        _require_same_budget(two, single)
        rows.append({
            "seed": seed,
            "two_phase_psnr": two.final["psnr"],
            "single_phase_psnr": single.final["psnr"],
            "two_phase_wins": two.final["psnr"] >= single.final["psnr"],
        })
    return {"rows": rows,
            "wins": sum(r["two_phase_wins"] for r in rows),
            "seeds": len(rows)}
