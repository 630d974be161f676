"""Dataclass configs and the flat key=value override machinery used by the CLI."""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Raised for unknown keys, malformed values or invariant violations."""


@dataclass
class AudioConfig:
    """STFT front-end parameters.

    Defaults produce a (257, 300) log spectrogram from 3 s of 22050 Hz audio:
    n_fft=512 -> 257 bins, hop=220 -> floor(66150/220)=300 frames retained.
    """

    sr: int = 22050
    duration_s: float = 3.0
    n_fft: int = 512
    hop: int = 220
    win_length: int = 512
    eps: float = 1e-10

    def __post_init__(self):
        if self.sr <= 0 or self.duration_s <= 0:
            raise ConfigError("audio.sr and audio.duration_s must be positive")
        if not (0 < self.win_length <= self.n_fft):
            raise ConfigError("audio.win_length must be in (0, n_fft]")
        if self.hop <= 0:
            raise ConfigError("audio.hop must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.sr * self.duration_s))

    @property
    def freq_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def frames(self) -> int:
        # Frames retained after truncation; centered framing always yields more.
        return self.n_samples // self.hop


@dataclass
class ModelConfig:
    """Architecture knobs shared by the encoders, fusion and decoder."""

    D: int = 32
    S: int = 3
    image_size: int = 64
    seed: int = 0
    audio_channels: tuple[int, ...] = (16, 32, 64)
    spec_bins: int = 257
    spec_frames: int = 300
    fusion_softmax: bool = False
    decoder_blocks: int = 2
    decoder_heads: int = 4

    def __post_init__(self):
        if min(self.D, self.S, self.image_size) <= 0:
            raise ConfigError("model.D, model.S and model.image_size must be positive")
        if self.D % 4 != 0:
            raise ConfigError("model.D must be divisible by 4 (sin/cos position bands)")
        if self.D % self.decoder_heads != 0:
            raise ConfigError("model.D must be divisible by decoder.heads")
        stride = self.total_stride
        if self.image_size % stride != 0:
            raise ConfigError(
                f"model.image_size must be divisible by the encoder stride {stride}"
            )

    @property
    def total_stride(self) -> int:
        # Stem is /4, each later stage halves again.
        return 4 * 2 ** (self.S - 1)

    @property
    def stage_sizes(self) -> list[int]:
        return [self.image_size // (4 * 2**s) for s in range(self.S)]


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 20
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 0.0  # 0 disables clipping; NaN loss always aborts

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("train.lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("train.epochs must be >= 0")


@dataclass
class EvalConfig:
    beta_sq: float = 0.3
    threshold: float = 0.5
    per_image_ap: bool = False


@dataclass
class Config:
    """Aggregate config; every field is reachable through a flat dotted key."""

    audio: AudioConfig = field(default_factory=AudioConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


# Flat key -> (section attr, field name). Keys are the public config surface;
# unknown keys are rejected everywhere.
_KEY_MAP: dict[str, tuple[str, str]] = {
    "audio.sr": ("audio", "sr"),
    "audio.duration_s": ("audio", "duration_s"),
    "audio.n_fft": ("audio", "n_fft"),
    "audio.hop": ("audio", "hop"),
    "audio.win_length": ("audio", "win_length"),
    "audio.eps": ("audio", "eps"),
    "model.D": ("model", "D"),
    "model.S": ("model", "S"),
    "model.image_size": ("model", "image_size"),
    "model.seed": ("model", "seed"),
    "model.audio_channels": ("model", "audio_channels"),
    "model.spec_bins": ("model", "spec_bins"),
    "model.spec_frames": ("model", "spec_frames"),
    "fusion.softmax": ("model", "fusion_softmax"),
    "decoder.blocks": ("model", "decoder_blocks"),
    "decoder.heads": ("model", "decoder_heads"),
    "train.lr": ("train", "lr"),
    "train.batch_size": ("train", "batch_size"),
    "train.epochs": ("train", "epochs"),
    "train.seed": ("train", "seed"),
    "train.beta1": ("train", "beta1"),
    "train.beta2": ("train", "beta2"),
    "train.adam_eps": ("train", "adam_eps"),
    "train.grad_clip": ("train", "grad_clip"),
    "eval.beta_sq": ("eval", "beta_sq"),
    "eval.threshold": ("eval", "threshold"),
    "eval.per_image_ap": ("eval", "per_image_ap"),
}

SEED_ENV_VAR = "AVSAM_SEED"


def _parse_value(raw: str, target_type):
    raw = raw.strip()
    if target_type is bool:
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse {raw!r} as bool")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is tuple or target_type == tuple[int, ...]:
        parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
        return tuple(int(p) for p in parts)
    return raw


def _field_type(section: str, name: str):
    section_cls = {
        "audio": AudioConfig,
        "model": ModelConfig,
        "train": TrainConfig,
        "eval": EvalConfig,
    }[section]
    for f in dataclasses.fields(section_cls):
        if f.name == name:
            return f.type
    raise KeyError(name)


_TYPE_NAMES = {"int": int, "float": float, "bool": bool, "tuple[int, ...]": tuple}


def apply_overrides(cfg: Config, overrides: dict[str, str]) -> Config:
    """Return a new Config with the given flat key=value overrides applied."""
    sections = {
        "audio": dataclasses.asdict(cfg.audio),
        "model": dataclasses.asdict(cfg.model),
        "train": dataclasses.asdict(cfg.train),
        "eval": dataclasses.asdict(cfg.eval),
    }
    for key, raw in overrides.items():
        if key not in _KEY_MAP:
            raise ConfigError(f"unknown config key: {key!r}")
        section, name = _KEY_MAP[key]
        ftype = _field_type(section, name)
        if isinstance(ftype, str):  # postponed annotations store strings
            ftype = _TYPE_NAMES.get(ftype, str)
        sections[section][name] = _parse_value(raw, ftype)
    sections["model"]["audio_channels"] = tuple(sections["model"]["audio_channels"])
    return Config(
        audio=AudioConfig(**sections["audio"]),
        model=ModelConfig(**sections["model"]),
        train=TrainConfig(**sections["train"]),
        eval=EvalConfig(**sections["eval"]),
    )


def parse_config_file(path: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; '#' starts a comment; blank lines ignored."""
    overrides: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line.rstrip()!r}")
            key, value = stripped.split("=", 1)
            key = key.strip()
            if key not in _KEY_MAP:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            overrides[key] = value.strip()
    return overrides


def load_config(path: str | None = None, overrides: dict[str, str] | None = None) -> Config:
    """Build a Config with precedence: explicit overrides > file > defaults.

    The AVSAM_SEED environment variable, when set, overrides every seed key
    regardless of file or flag values.
    """
    merged: dict[str, str] = {}
    if path is not None:
        merged.update(parse_config_file(path))
    if overrides:
        for key in overrides:
            if key not in _KEY_MAP:
                raise ConfigError(f"unknown config key: {key!r}")
        merged.update(overrides)
    cfg = apply_overrides(Config(), merged)
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from exc
        cfg = dataclasses.replace(
            cfg,
            model=dataclasses.replace(cfg.model, seed=seed),
            train=dataclasses.replace(cfg.train, seed=seed),
        )
    return cfg


def config_hash(cfg: Config) -> str:
    """Hash of the architecture-relevant keys; guards checkpoint/model mismatch."""
    relevant = {
        k: getattr(getattr(cfg, sec), name)
        for k, (sec, name) in sorted(_KEY_MAP.items())
        if sec == "model"
    }
    canonical = ";".join(f"{k}={relevant[k]}" for k in sorted(relevant))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
