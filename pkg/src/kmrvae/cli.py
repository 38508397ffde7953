"""Command-line front end.

Every subcommand takes an optional config file (flat `key = value`
lines) plus any number of `--set key=value` overrides, so a run is
fully described by its invocation. Exit codes: 0 on success, 1 on bad
input of any kind (usage, config, file contents), 2 when training
aborts on non-finite numbers.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import ablation as ablation_mod
from . import autodiff as ad
from . import gradcheck as gradcheck_mod
from . import metrics as metrics_mod
from . import videoio
from .checkpoint import load_checkpoint, restore_checkpoint
from .config import Config, load_config
from .decouple import decouple, recouple
from .errors import ConfigError, FormatError, ShapeError, TrainingAborted
from .model import keyframe_average
from .train import PhasePlan, Trainer, train_run


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1, not 2."""

    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _add_common(sub):
    sub.add_argument("config", nargs="?", default=None,
                     help="config file; defaults apply when omitted")
    sub.add_argument("--set", action="append", default=[], metavar="K=V",
                     help="override one config key (repeatable)")


def _build_parser() -> _Parser:
    parser = _Parser(prog="kmrvae", description=__doc__)
    subs = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = subs.add_parser("gen-data", parents=[], help="write synthetic "
                        "clips to data_dir as clip_NNN.dcvr")
    _add_common(p)

    p = subs.add_parser("pretrain-motion", help="run only the motion "
                        "warm-up and save a resumable checkpoint")
    _add_common(p)

    p = subs.add_parser("train", help="full run: warm-up plus the "
                        "staged schedule, checkpoints in out_dir")
    _add_common(p)
    p.add_argument("--resume", default=None, metavar="CKPT",
                   help="continue from a .dcpt checkpoint")

    p = subs.add_parser("reconstruct", help="round-trip one clip "
                        "through a trained model")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, metavar="IN.dcvr")
    p.add_argument("--output", required=True, metavar="OUT.dcvr")
    p.add_argument("--ppm-dir", default=None,
                   help="also dump the reconstruction as PPM frames")

    p = subs.add_parser("decouple", help="dump keyframe/motion/residual "
                        "stacks of one clip as PPM frames")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, metavar="IN.dcvr")
    p.add_argument("--out-dir", required=True)

    p = subs.add_parser("eval", help="print a one-line JSON metric "
                        "record")
    _add_common(p)
    p.add_argument("--ref", default=None, metavar="REF.dcvr")
    p.add_argument("--cand", default=None, metavar="CAND.dcvr")
    p.add_argument("--checkpoint", default=None,
                   help="evaluate this model over the clips in data_dir "
                        "instead of comparing two files")

    p = subs.add_parser("ablation", help="run the comparison named by "
                        "the `ablation` config key and print JSON")
    _add_common(p)

    p = subs.add_parser("gradcheck", help="finite-difference check of "
                        "every registered op; exit 0 iff all pass")
    p.add_argument("--seed", type=int, default=0)

    return parser


# ----------------------------------------------------------------- helpers


def _config(args) -> Config:
    return load_config(args.config, args.set)


def _load_clips(data_dir: str):
    paths = sorted(Path(data_dir).glob("*.dcvr"))
    if not paths:
        raise ConfigError(f"no .dcvr clips in {data_dir!r}; run gen-data "
                          "first or point data_dir elsewhere")
    return [videoio.load_video(str(p)) for p in paths]


def _restored_trainer(cfg: Config, clips, checkpoint: str) -> Trainer:
    """A Trainer whose nets carry the checkpoint weights; optimizer and
    rng state are not needed for inference so they are left alone. The
    holdout split is irrelevant here, so it is cleared rather than
    letting a small clip list trip the split validation."""
    values = dict(cfg.items())
    values["holdout_clips"] = 0
    trainer = Trainer(Config(values), clips)
    ck = load_checkpoint(checkpoint)
    restore_checkpoint(ck, gen_params=trainer.gen_params,
                       disc_params=trainer.disc.params)
    return trainer


def _reconstruct_clip(trainer: Trainer, video: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        comps = decouple(ad.Tensor(video), trainer.motion)
        out = trainer.model.forward(comps, inference=True)
        xhat = recouple(keyframe_average(out.x_k_hat),
                        out.x_m_hat, out.x_r_hat)
    return np.clip(xhat.data, 0.0, 1.0)


def _print_json(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


# ------------------------------------------------------------- subcommands


def _cmd_gen_data(args) -> int:
    cfg = _config(args)
    samples = videoio.synthesize_dataset(
        cfg.seed, cfg.num_clips, cfg.frames, cfg.height, cfg.width,
        cfg.regime)
    out = Path(cfg.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        videoio.save_video(str(out / f"clip_{i:03d}.dcvr"), s.video)
    print(f"wrote {len(samples)} {cfg.regime} clips "
          f"({cfg.frames}x{cfg.height}x{cfg.width}) to {out}")
    return 0


def _cmd_pretrain_motion(args) -> int:
    cfg = _config(args)
    clips = _load_clips(cfg.data_dir)
    plan = PhasePlan.decoupled_adaptation(cfg.phase0_steps, 0, 0)
    result = train_run(cfg, clips, plan=plan, out_dir=cfg.out_dir)
    _print_json({"steps": cfg.phase0_steps,
                 "checkpoint": result.checkpoint_path,
                 "psnr": result.final["psnr"]})
    return 0


def _cmd_train(args) -> int:
    cfg = _config(args)
    clips = _load_clips(cfg.data_dir)
    result = train_run(cfg, clips, out_dir=cfg.out_dir, resume=args.resume)
    record = {"steps": result.budget["total_steps"],
              "seconds": round(result.seconds, 2),
              "checkpoint": result.checkpoint_path,
              "psnr": result.final["psnr"],
              "ssim": result.final["ssim"]}
    if result.initial is not None:
        record["initial_psnr"] = result.initial["psnr"]
    _print_json(record)
    return 0


def _cmd_reconstruct(args) -> int:
    cfg = _config(args)
    video = videoio.load_video(args.input)
    trainer = _restored_trainer(cfg, [video], args.checkpoint)
    rec = _reconstruct_clip(trainer, video)
    videoio.save_video(args.output, rec)
    if args.ppm_dir:
        videoio.dump_ppm(rec, args.ppm_dir)
    _print_json({"output": args.output,
                 "psnr": metrics_mod.psnr(rec, video),
                 "ssim": metrics_mod.ssim(rec, video)})
    return 0


def _cmd_decouple(args) -> int:
    cfg = _config(args)
    video = videoio.load_video(args.input)
    trainer = _restored_trainer(cfg, [video], args.checkpoint)
    with ad.no_grad():
        comps = decouple(ad.Tensor(video), trainer.motion)
    out = Path(args.out_dir)
    videoio.dump_ppm(comps.x_k.data, str(out / "keyframe"))
    videoio.dump_ppm(comps.x_m.data, str(out / "motion"), signed=True)
    videoio.dump_ppm(comps.x_r.data, str(out / "residual"), signed=True)
    print(f"wrote {3 * video.shape[1]} frames under {out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _config(args)
    if args.checkpoint is not None:
        clips = _load_clips(cfg.data_dir)
        trainer = _restored_trainer(cfg, clips, args.checkpoint)
        _print_json(trainer.evaluate(clips))
        return 0
    if args.ref is None or args.cand is None:
        raise ConfigError(
            "eval needs --checkpoint, or both --ref and --cand")
    ref = videoio.load_video(args.ref)
    cand = videoio.load_video(args.cand)
    _print_json({"psnr": metrics_mod.psnr(cand, ref),
                 "ssim": metrics_mod.ssim(cand, ref)})
    return 0


def _cmd_ablation(args) -> int:
    cfg = _config(args)
    if cfg.ablation == "encoders":
        _print_json(ablation_mod.run_encoder_ablation(cfg))
    else:
        _print_json(ablation_mod.run_schedule_ablation(cfg))
    return 0


def _cmd_gradcheck(args) -> int:
    reports = gradcheck_mod.run_standard_checks(seed=args.seed)
    for r in reports:
        print(r)
    return 0 if all(r.ok for r in reports) else 1


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "pretrain-motion": _cmd_pretrain_motion,
    "train": _cmd_train,
    "reconstruct": _cmd_reconstruct,
    "decouple": _cmd_decouple,
    "eval": _cmd_eval,
    "ablation": _cmd_ablation,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError(parser.format_usage())
        return _COMMANDS[args.command](args)
    except _UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (ConfigError, ShapeError, FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except TrainingAborted as e:
        print(f"aborted at step {e.step}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
