"""Voice/accent classification probes and the four-scenario similarity matrix.

Scenarios (all scores are cosine similarities of utterance embeddings):

O2O  two different original clips of the same speaker
O2C  an original clip of speaker t vs a clip converted to t
C2O  a converted clip vs an original clip of its source speaker
C2C  two clips from different sources converted to the same target

``cross_target`` (converted clips with different targets and different
sources) is reported as the baseline C2C must beat.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold, cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from .dsp import Waveform
from .errors import ConfigError, DataError
from .pipeline import analyze, convert

SCENARIOS = ("C2C", "O2C", "C2O", "O2O")
METRIC = "cosine similarity of utterance embeddings"


@dataclass(frozen=True)
class EvalConfig:
    held_out_clips: int = 20
    probe_folds: int = 5
    probe_c: float = 1.0
    seed: int = 0

    def validate(self) -> "EvalConfig":
        if self.held_out_clips < 2:
            raise ConfigError("eval.held_out_clips must be >= 2")
        if self.probe_folds < 2:
            raise ConfigError("eval.probe_folds must be >= 2")
        if self.probe_c <= 0:
            raise ConfigError("eval.probe_c must be positive")
        return self


# ------------------------------------------------------------------ embeddings

def utterance_embedding(w: Waveform, model, cfg) -> np.ndarray:
    """Time-mean encoder embedding followed by (median log-f0, std of voiced log-f0)."""
    feats = analyze(w, cfg)
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        emb = model.encoder(torch.as_tensor(feats.mel.frames, dtype=dtype).unsqueeze(0))[0]
    voiced = feats.f0.f0_hz[feats.f0.voiced]
    if voiced.size:
        logs = np.log(voiced)
        stats = [float(np.median(logs)), float(np.std(logs))]
    else:
        stats = [0.0, 0.0]
    return np.concatenate([emb.double().mean(dim=0).numpy(), stats])


def similarity(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------------- probes

def _check_labels(labels) -> np.ndarray:
    labels = np.asarray(labels)
    values, counts = np.unique(labels, return_counts=True)
    if len(values) < 2:
        raise DataError("probe needs at least two distinct labels")
    if counts.min() < 4:
        raise DataError(f"probe needs >= 4 examples per label; {values[counts.argmin()]!r} has {counts.min()}")
    return labels


def _probe(c: float = 1.0):
    return make_pipeline(StandardScaler(), LogisticRegression(C=c, max_iter=2000))


def probe_accuracy(embeddings, labels, folds: int = 5, seed: int = 0, c: float = 1.0) -> float:
    """Stratified k-fold accuracy (percent) of a multinomial logistic-regression probe.
    ``folds`` is capped at the smallest class size."""
    labels = _check_labels(labels)
    x = np.asarray(embeddings, dtype=np.float64)
    k = min(folds, int(np.unique(labels, return_counts=True)[1].min()))
    cv = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
    return 100.0 * float(np.mean(cross_val_score(_probe(c), x, labels, cv=cv)))


def fit_probe(embeddings, labels, c: float = 1.0):
    labels = _check_labels(labels)
    return _probe(c).fit(np.asarray(embeddings, dtype=np.float64), labels)


def probe_transfer_accuracy(probe, embeddings, labels) -> float:
    """Percent of ``embeddings`` the fitted probe assigns to ``labels``."""
    pred = probe.predict(np.asarray(embeddings, dtype=np.float64))
    return 100.0 * float(np.mean(pred == np.asarray(labels)))


# ------------------------------------------------------------ conversion study

@dataclass
class ConversionStudy:
    source_labels: list  # speaker of each source clip
    targets: list  # target ids, one column per target
    original: np.ndarray  # (N, D) embeddings of the source clips
    converted: np.ndarray  # (N, K, D) embeddings of source i converted to target k
    target_originals: dict = field(default_factory=dict)  # target id -> (M, D) originals of that voice

    def conversions(self):
        """(embeddings, intended target) of every converted clip."""
        n, k = self.converted.shape[:2]
        return self.converted.reshape(n * k, -1), [self.targets[j] for _ in range(n) for j in range(k)]


def run_conversions(sources, targets, model, cfg, target_originals=None) -> ConversionStudy:
    """``sources``: sequence of (speaker id, Waveform); every source is
    converted to every target id."""
    if not sources or not targets:
        raise DataError("conversion study needs at least one source and one target")
    original = np.stack([utterance_embedding(w, model, cfg) for _, w in sources])
    converted = np.stack([
        np.stack([utterance_embedding(convert(w, t, model, cfg).waveform, model, cfg) for t in targets])
        for _, w in sources
    ])
    if target_originals is None:
        target_originals = {}
        for t in targets:
            rows = [original[i] for i, (s, _) in enumerate(sources) if s == t]
            if rows:
                target_originals[t] = np.stack(rows)
    return ConversionStudy([s for s, _ in sources], list(targets), original, converted, target_originals)


def _mean(values) -> float:
    values = list(values)
    if not values:
        return math.nan
    return float(np.mean(values))


def conversion_matrix(study: ConversionStudy) -> dict[str, float]:
    """Raw (unfloored) mean similarity per scenario plus ``cross_target``."""
    n, k = study.converted.shape[:2]
    spk = study.source_labels
    o2o = [similarity(study.original[i], study.original[j])
           for i, j in itertools.combinations(range(n), 2) if spk[i] == spk[j]]
    o2c, c2o, c2c, cross = [], [], [], []
    for i in range(n):
        for a, t in enumerate(study.targets):
            conv = study.converted[i, a]
            o2c += [similarity(o, conv) for o in study.target_originals.get(t, ())]
            c2o += [similarity(conv, study.original[j]) for j in range(n) if spk[j] == spk[i]]
    for (i, a), (j, b) in itertools.combinations(itertools.product(range(n), range(k)), 2):
        if i == j:
            continue
        s = similarity(study.converted[i, a], study.converted[j, b])
        (c2c if a == b else cross).append(s)
    scores = {"C2C": _mean(c2c), "O2C": _mean(o2c), "C2O": _mean(c2o), "O2O": _mean(o2o),
              "cross_target": _mean(cross)}
    if any(math.isnan(scores[s]) for s in SCENARIOS):
        empty = [s for s in SCENARIOS if math.isnan(scores[s])]
        raise DataError(f"empty scenario populations: {', '.join(empty)}")
    return scores


# ---------------------------------------------------------------------- report

@dataclass
class EvalReport:
    accuracies: dict  # row name -> {"voice_id": pct or None, "accent": pct or None}
    matrix: dict  # scenario -> raw mean similarity
    metadata: dict = field(default_factory=dict)

    def floored(self) -> dict[str, float]:
        return {k: max(0.0, v) for k, v in self.matrix.items()}

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["section", "row", "column", "value"])
            for row, cols in self.accuracies.items():
                for col in ("voice_id", "accent"):
                    if cols.get(col) is not None:
                        w.writerow(["probe_accuracy_pct", row, col, f"{cols[col]:.2f}"])
            for scen, v in self.floored().items():
                w.writerow(["similarity", METRIC, scen, f"{v:.4f}"])
            for k, v in self.metadata.items():
                w.writerow(["metadata", k, "", v])

    def to_text(self, model_name: str = "vcshift") -> str:
        """Aligned tables: tasks x populations (probe accuracy), then one row of scenario means."""
        def cell(v, w):
            return f"{'-':>{w}}" if v is None else f"{v:>{w}.1f}"

        cols = list(self.accuracies)
        widths = [max(len(c), 6) for c in cols]
        tasks = (("Voice Identification", "voice_id"), ("Accent Classification", "accent"))
        first = max(len(t) for t, _ in tasks)
        lines = ["Voice and accent classification test (probe accuracy, %)",
                 f"{'Task':<{first}}  " + "  ".join(f"{c:>{w}}" for c, w in zip(cols, widths))]
        for label, key in tasks:
            lines.append(f"{label:<{first}}  "
                         + "  ".join(cell(self.accuracies[c].get(key), w) for c, w in zip(cols, widths)))
        f = self.floored()
        scen = list(SCENARIOS) + [k for k in f if k not in SCENARIOS]
        name_w = max(len("Method"), len(model_name))
        lines += ["", f"Voice conversion test ({METRIC}, negatives floored at 0)",
                  f"{'Method':<{name_w}}  " + "  ".join(f"{c:>12}" for c in scen),
                  f"{model_name:<{name_w}}  " + "  ".join(f"{f[c]:>12.4f}" for c in scen)]
        if self.metadata:
            lines += [""] + [f"{k}: {v}" for k, v in self.metadata.items()]
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ driver

def round_robin(records, n: int) -> list:
    """Up to ``n`` records taken alternately across speakers, in manifest order."""
    by_spk: dict[str, list] = {}
    for r in records:
        by_spk.setdefault(r.speaker_id, []).append(r)
    queues = [list(v) for v in by_spk.values()]
    out = []
    while len(out) < n and any(queues):
        for q in queues:
            if q and len(out) < n:
                out.append(q.pop(0))
    return out


def _load(records):
    from .dsp import load_waveform
    return [(r, load_waveform(r.path)) for r in records]


@dataclass
class EvalRun:
    report: EvalReport
    voice_study: ConversionStudy
    accent_study: ConversionStudy | None = None


def run_eval(model, cfg, reference_records, held_out_records, accent_records=None,
             accent_held_out=None, metadata=None) -> EvalRun:
    """Probe and similarity evaluation.

    ``reference_records``: original clips that fit the voice probe (speaker
    labels). ``held_out_records``: source clips converted to every reference
    speaker (``cfg.eval.held_out_clips`` of them, balanced across speakers).
    ``accent_records``/``accent_held_out``: parallel-corpus clips for the
    accent probe; held-out sources are converted to each accent voice.
    """
    ev = cfg.eval.validate()
    ref = _load(reference_records)
    ref_x = np.stack([utterance_embedding(w, model, cfg) for _, w in ref])
    ref_y = [r.speaker_id for r, _ in ref]
    targets = sorted(set(ref_y))
    for t in targets:
        model.speakers.index(t)
    sources = [(r.speaker_id, w) for r, w in _load(round_robin(held_out_records, ev.held_out_clips))]
    originals = {t: ref_x[[i for i, y in enumerate(ref_y) if y == t]] for t in targets}
    study = run_conversions(sources, targets, model, cfg, target_originals=originals)
    voice_probe = fit_probe(ref_x, ref_y, ev.probe_c)
    conv_x, conv_y = study.conversions()
    accuracies = {
        "original clips (cross-validated)": {
            "voice_id": probe_accuracy(ref_x, ref_y, ev.probe_folds, ev.seed, ev.probe_c), "accent": None},
        "converted clips (probe fit on originals)": {
            "voice_id": probe_transfer_accuracy(voice_probe, conv_x, conv_y), "accent": None},
    }
    accent_study = None
    if accent_records:
        acc = _load(accent_records)
        acc_x = np.stack([utterance_embedding(w, model, cfg) for _, w in acc])
        acc_y = [r.accent for r, _ in acc]
        voice_accent = {r.speaker_id: r.accent for r, _ in acc}
        accent_targets = sorted(voice_accent)
        held = accent_held_out if accent_held_out else accent_records
        accent_sources = [(r.speaker_id, w) for r, w in _load(held)]
        accent_study = run_conversions(accent_sources, accent_targets, model, cfg)
        ax, ay = accent_study.conversions()
        accuracies["original clips (cross-validated)"]["accent"] = probe_accuracy(
            acc_x, acc_y, ev.probe_folds, ev.seed, ev.probe_c)
        accuracies["converted clips (probe fit on originals)"]["accent"] = probe_transfer_accuracy(
            fit_probe(acc_x, acc_y, ev.probe_c), ax, [voice_accent[t] for t in ay])
    meta = {"held_out_sources": len(sources), "targets": ",".join(targets), "metric": METRIC}
    meta.update(metadata or {})
    report = EvalReport(accuracies, conversion_matrix(study), meta)
    return EvalRun(report, study, accent_study)
