"""Flat text config: one `key = value` per line, '#' comments, every key
optional, unknown keys rejected. The same strings work as --set
overrides on the command line, which win over the file."""

from __future__ import annotations

from .errors import ConfigError

# name -> default; the default's type is the declared type of the key
DEFAULTS = {
    "seed": 0,
    "out_dir": "runs/run0",
    "data_dir": "data",
    # synthetic data
    "regime": "translate",
    "num_clips": 32,
    "holdout_clips": 4,
    "frames": 8,
    "height": 32,
    "width": 32,
    # model
    "latent_dim": 16,
    "c_lo": 32,
    "c_hi": 64,
    "variant": "dedicated",
    # motion warm-up
    "motion_lr": 3e-3,
    "motion_blur0": 0.4,
    "motion_anneal_frac": 0.6,
    # training
    "batch_size": 4,
    "phase0_steps": 500,
    "phase1_steps": 1500,
    "phase2_steps": 500,
    "lr": 5e-5,
    "clip_norm": 1.0,
    "lambda_recon": 4.0,
    "lambda_p": 4.0,
    "lambda_kl": 1e-7,
    "lambda_adv": 0.2,
    "adv_start_step": -1,  # -1: gate opens at 80% of total steps
    "aux_components": True,
    "detach_decouple": False,
    "checkpoint_every": 500,
    # ablation harness
    "ablation": "encoders",
    "ablation_seeds": "0,1,2",
}

_REGIMES = ("translate", "multi-object", "scale-change")
_VARIANTS = ("dedicated", "concat")
_ABLATIONS = ("encoders", "schedule")


class Config:
    __slots__ = tuple(DEFAULTS)

    def __init__(self, values: dict):
        for k in DEFAULTS:
            setattr(self, k, values[k])

    @property
    def total_steps(self) -> int:
        return self.phase0_steps + self.phase1_steps + self.phase2_steps

    def items(self):
        return [(k, getattr(self, k)) for k in DEFAULTS]


def _convert(key: str, text: str):
    want = type(DEFAULTS[key])
    text = text.strip()
    if want is bool:
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if want is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}")
    if want is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}")
    return text


def parse_config_text(text: str, source: str = "config") -> dict:
    """Raw key -> string values from file content."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', "
                              f"got {line.strip()!r}")
        key, value = body.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path=None, sets=()) -> Config:
    """Defaults, overlaid with the file (if given), overlaid with --set
    pairs, then validated."""
    raw = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            raw.update(parse_config_text(fh.read(), source=str(path)))
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"--set: unknown key {key!r}")
        raw[key] = value
    values = dict(DEFAULTS)
    for key, text in raw.items():
        values[key] = _convert(key, text)
    cfg = Config(values)
    _validate(cfg)
    if cfg.adv_start_step < 0:
        cfg.adv_start_step = int(0.8 * cfg.total_steps)
    return cfg


def _validate(cfg: Config) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.regime in _REGIMES,
         f"regime must be one of {_REGIMES}, got {cfg.regime!r}")
    need(cfg.variant in _VARIANTS,
         f"variant must be one of {_VARIANTS}, got {cfg.variant!r}")
    need(cfg.ablation in _ABLATIONS,
         f"ablation must be one of {_ABLATIONS}, got {cfg.ablation!r}")
    need(cfg.num_clips >= 1, "num_clips must be >= 1")
    need(0 <= cfg.holdout_clips < cfg.num_clips,
         "holdout_clips must be in [0, num_clips)")
    need(cfg.frames >= 2, "frames must be >= 2")
    need(cfg.frames % 4 == 0, "frames must be divisible by 4")
    need(cfg.height % 8 == 0 and cfg.width % 8 == 0,
         "height and width must be divisible by 8")
    need(cfg.height >= 16 and cfg.width >= 16,
         "height and width must be >= 16 for the warp pyramid")
    need(cfg.latent_dim >= 1, "latent_dim must be >= 1")
    need(cfg.c_lo >= 1 and cfg.c_hi >= 1, "channel widths must be >= 1")
    need(cfg.batch_size >= 1, "batch_size must be >= 1")
    for key in ("phase0_steps", "phase1_steps", "phase2_steps",
                "checkpoint_every"):
        need(getattr(cfg, key) >= 0, f"{key} must be >= 0")
    need(cfg.checkpoint_every > 0, "checkpoint_every must be > 0")
    need(cfg.lr > 0 and cfg.motion_lr > 0, "learning rates must be > 0")
    need(cfg.clip_norm > 0, "clip_norm must be > 0")
    for key in ("lambda_recon", "lambda_p", "lambda_kl", "lambda_adv"):
        need(getattr(cfg, key) >= 0, f"{key} must be >= 0")
    need(0.0 <= cfg.motion_anneal_frac <= 1.0,
         "motion_anneal_frac must be in [0,1]")
    need(cfg.motion_blur0 >= 0, "motion_blur0 must be >= 0")
    try:
        seeds = [int(s) for s in cfg.ablation_seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(
            f"ablation_seeds must be comma-separated integers, "
            f"got {cfg.ablation_seeds!r}")
    need(len(seeds) >= 1, "ablation_seeds must name at least one seed")


def ablation_seed_list(cfg: Config):
    return [int(s) for s in cfg.ablation_seeds.split(",") if s.strip()]
