"""Run configuration: presets, the key = value file format, and cross-module checks.

File format::

    # comment
    preset = desk
    [training]
    steps = 500
    vocoder.upsample_strides = 4,4,4   # dotted keys work in any section

Keys inside ``[section]`` are relative to that section. Tuples are comma
separated; nested tuples separate groups with ``;`` (``1,2;1,2``).
Precedence: preset defaults < file < overrides.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from math import prod
from pathlib import Path

from .corpus import CorpusConfig
from .dsp import DESK_DSP, PAPER_DSP, DspParams
from .encoder import DESK_ENCODER, PAPER_ENCODER, EncoderConfig
from .errors import ConfigError
from .evaluation import EvalConfig
from .fusion import FusionConfig
from .pitch import PitchParams
from .training import LossWeights, TrainConfig
from .vocoder import DiscriminatorConfig, GeneratorConfig

PRESETS = ("desk", "paper")

# (section, attribute on RunConfig, key prefix inside the section)
_SECTIONS = (
    ("dsp", "dsp", ""),
    ("pitch", "pitch", ""),
    ("encoder", "encoder", ""),
    ("fusion", "fusion", ""),
    ("vocoder", "generator", ""),
    ("vocoder", "discriminator", "disc_"),
    ("training", "training", ""),
    ("training", "losses", ""),
    ("corpus", "corpus", ""),
    ("eval", "eval", ""),
)
# sections whose values change tensor shapes or features; these form the fingerprint
MODEL_SECTIONS = ("dsp", "pitch", "encoder", "fusion", "vocoder")


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    dsp: DspParams = DESK_DSP
    pitch: PitchParams = PitchParams()
    encoder: EncoderConfig = DESK_ENCODER
    fusion: FusionConfig = FusionConfig()
    generator: GeneratorConfig = GeneratorConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig()
    training: TrainConfig = TrainConfig()
    losses: LossWeights = LossWeights()
    corpus: CorpusConfig = CorpusConfig()
    eval: EvalConfig = EvalConfig()

    def validate(self) -> "RunConfig":
        self.dsp.validate()
        self.pitch.validate(self.dsp.sample_rate)
        self.encoder.validate()
        self.fusion.validate(self.encoder.hidden_size)
        self.generator.validate()
        self.discriminator.validate()
        self.training.validate()
        self.losses.validate()
        self.corpus.validate()
        self.eval.validate()
        if self.dsp.hop_length != prod(self.generator.upsample_strides):
            raise ConfigError(
                f"dsp.hop_length ({self.dsp.hop_length}) must equal the product of "
                f"vocoder.upsample_strides {self.generator.upsample_strides} "
                f"({prod(self.generator.upsample_strides)})")
        if self.training.segment_frames * self.dsp.hop_length < max(self.pitch.window,
                                                                    self.discriminator.min_length):
            raise ConfigError("training.segment_frames too short for pitch.window / discriminator input")
        return self

    @property
    def fusion_width(self) -> int:
        h = self.encoder.hidden_size
        return h + 2 + self.fusion.resolved_dim(h) + 2

    def items(self):
        """(dotted key, value) for every setting, in a stable order."""
        yield "preset", self.preset
        for section, attr, prefix in _SECTIONS:
            obj = getattr(self, attr)
            for f in fields(obj):
                yield f"{section}.{prefix}{f.name}", getattr(obj, f.name)

    def to_text(self) -> str:
        lines, current = [], None
        for key, value in self.items():
            if key == "preset":
                lines.append(f"preset = {value}")
                continue
            section, name = key.split(".", 1)
            if section != current:
                lines.append(f"\n[{section}]")
                current = section
            lines.append(f"{name} = {_format(value)}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        text = "\n".join(f"{k}={_format(v)}" for k, v in self.items() if k.split(".")[0] in MODEL_SECTIONS)
        return hashlib.sha256(text.encode()).hexdigest()


def preset_config(name: str = "desk") -> RunConfig:
    if name == "desk":
        return RunConfig()
    if name == "paper":
        # 40 ms pitch window at 44.1 kHz, as the desk window is at 16 kHz
        return RunConfig(preset="paper", dsp=PAPER_DSP, pitch=PitchParams(window=1764), encoder=PAPER_ENCODER,
                         generator=GeneratorConfig(base_channels=512))
    raise ConfigError(f"unknown preset {name!r}; choose one of {PRESETS}")


def _format(value) -> str:
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ";".join(",".join(str(v) for v in group) for group in value)
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if default and isinstance(default[0], tuple) or ";" in raw:
                inner = default[0][0] if default and default[0] else 0
                return tuple(tuple(type(inner)(v) for v in g.split(",") if v.strip())
                             for g in raw.split(";"))
            inner = default[0] if default else 0
            return tuple(type(inner)(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Flatten the key = value text into {dotted key: raw value}."""
    out, section = {}, ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        if section and "." not in key:
            key = f"{section}.{key}"
        out[key] = value
    return out


def apply_settings(cfg: RunConfig, settings: dict[str, str]) -> RunConfig:
    known = {}
    for section, attr, prefix in _SECTIONS:
        for f in fields(getattr(cfg, attr)):
            known[f"{section}.{prefix}{f.name}"] = (attr, f.name)
    updates: dict[str, dict] = {}
    for key, raw in settings.items():
        if key == "preset":
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        attr, name = known[key]
        default = getattr(getattr(cfg, attr), name)
        updates.setdefault(attr, {})[name] = _parse(raw, default, key)
    return replace(cfg, **{attr: replace(getattr(cfg, attr), **vals) for attr, vals in updates.items()})


def load_config(path=None, overrides=(), preset: str | None = None) -> RunConfig:
    """Preset, then file, then ``overrides`` (``"section.key=value"`` strings)."""
    settings: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        settings = parse_text(p.read_text(), str(p))
    extra = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        extra[k.strip()] = v.strip()
    name = preset or extra.get("preset") or settings.get("preset") or "desk"
    cfg = preset_config(name)
    cfg = apply_settings(cfg, settings)
    cfg = apply_settings(cfg, extra)
    return cfg.validate()


def config_from_text(text: str, overrides=()) -> RunConfig:
    settings = parse_text(text)
    cfg = preset_config(settings.get("preset", "desk"))
    cfg = apply_settings(cfg, settings)
    extra = dict(o.split("=", 1) for o in overrides)
    return apply_settings(cfg, {k.strip(): v.strip() for k, v in extra.items()}).validate()
