"""Deterministic synthetic corpora.

Voices are rendered by a source-filter model: an impulse train at a
time-varying f0 drives three cascaded two-pole resonators. Speakers differ in
base f0, pitch range, formant scaling and vibrato; "accents" are systematic
formant, duration and intonation-slope transforms of one utterance.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import signal

from .dsp import Waveform, load_waveform, save_waveform, slice_clips
from .errors import ConfigError, ManifestError

VOWELS = {
    "a": (730.0, 1090.0, 2440.0),
    "i": (270.0, 2290.0, 3010.0),
    "u": (300.0, 870.0, 2240.0),
    "e": (530.0, 1840.0, 2480.0),
    "o": (570.0, 840.0, 2410.0),
    "ae": (660.0, 1720.0, 2410.0),
    "er": (490.0, 1350.0, 1690.0),
}
BANDWIDTHS = (80.0, 100.0, 140.0)
NOISE_FLOOR_DB = -40.0
PEAK = 0.5
BLOCK = 64


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    base_f0: float
    f0_range: float = 2.0  # semitones of per-segment pitch movement
    formant_shift: float = 1.0
    vibrato_rate: float = 5.5
    vibrato_depth: float = 0.5  # semitones
    accent_tag: str = "neutral"

    def __post_init__(self):
        if not 80 <= self.base_f0 <= 400:
            raise ValueError(f"base_f0 {self.base_f0} outside [80, 400]")
        if not 0.8 <= self.formant_shift <= 1.25:
            raise ValueError(f"formant_shift {self.formant_shift} outside [0.8, 1.25]")


@dataclass(frozen=True)
class Segment:
    formants: tuple  # (F1, F2, F3) Hz; empty for a pause
    duration: float
    pitch: float = 0.0  # semitones relative to base f0

    @property
    def is_pause(self) -> bool:
        return not self.formants


@dataclass(frozen=True)
class UtteranceSpec:
    utterance_id: str
    segments: tuple

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)


@dataclass(frozen=True)
class AccentTransform:
    formant_ratio: float = 1.0
    duration_scale: float = 1.0
    pitch_slope: float = 0.0  # semitones added linearly from start to end


CATALOG = (
    SpeakerProfile("spk0", 120.0, 2.0, 0.85, 5.0, 0.5),
    SpeakerProfile("spk1", 250.0, 2.5, 1.20, 6.0, 0.6),
    SpeakerProfile("spk2", 170.0, 2.0, 1.00, 5.5, 0.5),
    SpeakerProfile("spk3", 310.0, 3.0, 1.25, 6.0, 0.7),
    SpeakerProfile("spk4", 95.0, 1.5, 0.80, 4.5, 0.4),
    SpeakerProfile("spk5", 215.0, 2.5, 1.10, 5.5, 0.6),
    SpeakerProfile("spk6", 140.0, 2.0, 0.92, 5.0, 0.5),
)


def default_profiles(count: int = 7) -> list[SpeakerProfile]:
    if not 1 <= count <= len(CATALOG):
        raise ValueError(f"profile count must be in [1, {len(CATALOG)}]")
    return list(CATALOG[:count])


def random_utterance(rng: np.random.Generator, utterance_id: str, min_seconds: float = 1.5,
                     max_seconds: float = 4.0, pitch_range: float = 2.0) -> UtteranceSpec:
    target = rng.uniform(min_seconds, max_seconds)
    names = list(VOWELS)
    segments, total = [], 0.0
    while total < target:
        dur = float(rng.uniform(0.12, 0.35))
        if segments and not segments[-1].is_pause and rng.random() < 0.12:
            seg = Segment((), float(rng.uniform(0.05, 0.15)))
        else:
            seg = Segment(VOWELS[names[rng.integers(len(names))]], dur,
                          float(rng.uniform(-pitch_range, pitch_range)))
        segments.append(seg)
        total += seg.duration
    if segments[-1].is_pause:
        segments.pop()
    return UtteranceSpec(utterance_id, tuple(segments))


def _resonator(freq: float, bw: float, sr: int):
    r = math.exp(-math.pi * bw / sr)
    c = 2.0 * r * math.cos(2.0 * math.pi * freq / sr)
    a = np.array([1.0, -c, r * r])
    return np.array([a.sum()]), a  # unit gain at DC


def _track(values, durations, sr: int, n: int) -> np.ndarray:
    """Piecewise-linear interpolation between segment centres, per sample."""
    edges = np.concatenate([[0.0], np.cumsum(durations)])
    centres = (edges[:-1] + edges[1:]) / 2.0
    t = np.arange(n) / sr
    return np.interp(t, centres, values)


def synthesize_utterance(spec: UtteranceSpec, profile: SpeakerProfile, singing: bool = False,
                         seed: int = 0, sample_rate: int = 16000,
                         accent: AccentTransform = AccentTransform()) -> Waveform:
    """Render ``spec`` in ``profile``'s voice. Deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    sr = sample_rate
    durs = np.array([s.duration * accent.duration_scale for s in spec.segments])
    n = int(round(durs.sum() * sr))
    t = np.arange(n) / sr

    voiced_seg = np.array([not s.is_pause for s in spec.segments], dtype=float)
    pitch = np.array([s.pitch for s in spec.segments])
    semis = _track(pitch, durs, sr, n) + accent.pitch_slope * (t / max(t[-1], 1e-9) - 0.5)
    if singing:
        semis = semis + profile.vibrato_depth * np.sin(2.0 * np.pi * profile.vibrato_rate * t)
    f0 = profile.base_f0 * 2.0 ** (semis / 12.0)

    edges = np.concatenate([[0], np.round(np.cumsum(durs) * sr).astype(int)])
    gate = np.zeros(n)
    for k, s in enumerate(spec.segments):
        gate[edges[k]:edges[k + 1]] = voiced_seg[k]
    ramp = max(1, int(0.01 * sr))
    gate = np.convolve(gate, np.ones(ramp) / ramp, mode="same")

    # impulse train: split each impulse between the two samples around its exact time
    phase = np.cumsum(f0 / sr)
    excitation = np.zeros(n + 1)
    crossings = np.nonzero(np.floor(phase[1:]) > np.floor(phase[:-1]))[0] + 1
    for i in crossings:
        frac = (phase[i] - math.floor(phase[i])) / (f0[i] / sr)
        excitation[i - 1] += frac
        excitation[i] += 1.0 - frac
    excitation = excitation[:n] * gate

    formants = []
    last = next(s.formants for s in spec.segments if not s.is_pause)
    for s in spec.segments:
        last = s.formants or last
        formants.append(last)
    shift = profile.formant_shift * accent.formant_ratio
    tracks = [_track([f[j] * shift for f in formants], durs, sr, n) for j in range(3)]

    out = excitation
    states = [np.zeros(2) for _ in range(3)]
    y = np.empty(n)
    for start in range(0, n, BLOCK):
        block = out[start:start + BLOCK]
        for j in range(3):
            freq = min(tracks[j][start], 0.45 * sr)
            b, a = _resonator(freq, BANDWIDTHS[j] * shift, sr)
            block, states[j] = signal.lfilter(b, a, block, zi=states[j])
        y[start:start + BLOCK] = block

    peak = np.max(np.abs(y))
    if peak > 0:
        y = y * (PEAK / peak)
    rms = math.sqrt(float(np.mean(y ** 2))) or PEAK
    y = y + rng.standard_normal(n) * rms * 10.0 ** (NOISE_FLOOR_DB / 20.0)
    return Waveform(np.clip(y, -1.0, 1.0), sr)


# ------------------------------------------------------------------- manifests

MANIFEST_FIELDS = ("utterance_id", "speaker_id", "accent", "path", "pair_id")


@dataclass(frozen=True)
class ManifestRecord:
    utterance_id: str
    speaker_id: str
    accent: str
    path: Path
    pair_id: str = ""


def write_manifest(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            rel = Path(r.path)
            try:
                rel = rel.relative_to(path.parent)
            except ValueError:
                pass
            w.writerow([r.utterance_id, r.speaker_id, r.accent, rel.as_posix(), r.pair_id])


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or tuple(rows[0]) != MANIFEST_FIELDS:
        raise ManifestError(f"{path}: header must be {' '.join(MANIFEST_FIELDS)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_FIELDS):
            raise ManifestError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} fields, got {len(row)}")
        uid, spk, acc, rel, pair = row
        if not uid or not spk:
            raise ManifestError(f"{path}:{lineno}: empty utterance or speaker id")
        clip = Path(rel)
        out.append(ManifestRecord(uid, spk, acc, clip if clip.is_absolute() else path.parent / clip, pair))
    return out


def build_nonparallel_corpus(out_dir, profile_count: int = 7, seconds_per_speaker: float = 60.0,
                             seed: int = 0, sample_rate: int = 16000, clip_seconds: float = 5.0,
                             singing_fraction: float = 0.5, profiles=None) -> Path:
    """Render a mixed singing/speaking stream per speaker, slice into clips and
    write ``manifest.tsv``. Speaker identities come from :data:`CATALOG`; the
    seed only drives the utterance content."""
    out_dir = Path(out_dir)
    profiles = list(profiles) if profiles is not None else default_profiles(profile_count)
    records = []
    for p_idx, prof in enumerate(profiles):
        rng = np.random.default_rng([seed, p_idx])
        parts, total, k = [], 0.0, 0
        while total < seconds_per_speaker:
            spec = random_utterance(rng, f"{prof.speaker_id}-u{k:03d}", pitch_range=prof.f0_range)
            singing = bool(rng.random() < singing_fraction)
            w = synthesize_utterance(spec, prof, singing, seed=int(rng.integers(2 ** 31)),
                                     sample_rate=sample_rate)
            parts.append(w.samples)
            total += w.duration
            k += 1
        stream = Waveform(np.concatenate(parts)[: int(round(seconds_per_speaker * sample_rate))], sample_rate)
        for c, clip in enumerate(slice_clips(stream, clip_seconds)):
            uid = f"{prof.speaker_id}_{c:03d}"
            path = out_dir / "wav" / prof.speaker_id / f"{uid}.wav"
            save_waveform(clip, path)
            records.append(ManifestRecord(uid, prof.speaker_id, prof.accent_tag, path))
    manifest = out_dir / "manifest.tsv"
    write_manifest(records, manifest)
    return manifest


def default_accent_transforms(tags) -> dict:
    tags = list(tags)
    n = len(tags)
    out = {}
    for i, tag in enumerate(tags):
        u = i / (n - 1) - 0.5 if n > 1 else 0.0  # spread over [-0.5, 0.5]
        out[tag] = AccentTransform(1.0 + 0.24 * u, 1.0 + 0.2 * u, 4.0 * u)
    return out


def build_parallel_corpus(out_dir, accent_tags=("A", "B"), utterances: int = 10, seed: int = 0,
                          sample_rate: int = 16000, base_profile: SpeakerProfile = CATALOG[2],
                          transforms: dict | None = None) -> Path:
    """Render each utterance once per accent tag. Pair members share
    ``pair_id``; each (speaker, accent) rendering is its own voice id."""
    tags = list(accent_tags)
    if len(tags) < 2:
        raise ValueError("need at least two accent tags")
    transforms = transforms or default_accent_transforms(tags)
    out_dir = Path(out_dir)
    rng = np.random.default_rng([seed, 7919])
    records = []
    for k in range(utterances):
        pair = f"utt{k:03d}"
        spec = random_utterance(rng, pair, 2.0, 4.0, base_profile.f0_range)
        synth_seed = int(rng.integers(2 ** 31))
        for tag in tags:
            prof = replace(base_profile, speaker_id=f"{base_profile.speaker_id}-{tag}", accent_tag=tag)
            w = synthesize_utterance(spec, prof, False, seed=synth_seed, sample_rate=sample_rate,
                                     accent=transforms[tag])
            path = out_dir / "wav" / tag / f"{pair}_{tag}.wav"
            save_waveform(w, path)
            records.append(ManifestRecord(f"{pair}_{tag}", prof.speaker_id, tag, path, pair))
    manifest = out_dir / "manifest.tsv"
    write_manifest(records, manifest)
    return manifest


def load_clips(records) -> list[Waveform]:
    return [load_waveform(r.path) for r in records]


@dataclass(frozen=True)
class CorpusConfig:
    speakers: int = 7
    seconds_per_speaker: float = 60.0
    clip_seconds: float = 5.0
    singing_fraction: float = 0.5
    seed: int = 0
    accent_tags: tuple = ("A", "B")
    parallel_utterances: int = 10

    def validate(self) -> "CorpusConfig":
        if not 1 <= self.speakers <= len(CATALOG):
            raise ConfigError(f"corpus.speakers must be in [1, {len(CATALOG)}]")
        if self.seconds_per_speaker <= 0 or self.clip_seconds <= 0:
            raise ConfigError("corpus.seconds_per_speaker and corpus.clip_seconds must be positive")
        if not 0.0 <= self.singing_fraction <= 1.0:
            raise ConfigError("corpus.singing_fraction must be in [0, 1]")
        if len(self.accent_tags) < 2:
            raise ConfigError("corpus.accent_tags needs at least two tags")
        if self.parallel_utterances < 1:
            raise ConfigError("corpus.parallel_utterances must be >= 1")
        return self
