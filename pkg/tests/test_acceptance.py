"""End-to-end acceptance suite. Each test prints one pass/fail line (see the
"acceptance criteria" section of the pytest summary).

Criteria 5, 6 and 8 share one toy training run, which takes several minutes
on one CPU; the seeded rerun doubles that.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
import torch

from conftest import record_criterion, sawtooth, sine
from vcshift.checkpoint import load_checkpoint, save_checkpoint
from vcshift.cli import main
from vcshift.config import load_config
from vcshift.corpus import build_nonparallel_corpus, build_parallel_corpus, read_manifest
from vcshift.dsp import DESK_DSP, LOG_FLOOR, Waveform, load_waveform, mel_center_frequencies, mel_spectrogram
from vcshift.errors import ConfigError
from vcshift.evaluation import run_eval
from vcshift.gradcheck import TOLERANCE, run_gradient_checks
from vcshift.model import build_discriminators_for, build_model
from vcshift.pipeline import convert
from vcshift.pitch import F0Contour, estimate_f0, read_f0_csv, shift_scale_f0
from vcshift.training import (
    adversarial_loss_literal,
    adversarial_losses,
    pitch_consistency_loss,
    read_history,
    reconstruction_loss,
    run_training,
)

pytestmark = pytest.mark.slow


# ----------------------------------------------------------- 1: DSP oracles

def test_criterion_1_dsp():
    start = time.perf_counter()
    p = DESK_DSP
    rng = np.random.default_rng(0)
    lengths = rng.integers(p.win_length, 20000, 200)
    frames_ok = all(len(mel_spectrogram(Waveform(np.zeros(n), p.sample_rate), p)) == 1 + (n - p.win_length) // p.hop_length
                    for n in lengths)
    mel = mel_spectrogram(sine(440, 0.5), p)
    want = int(np.argmin(np.abs(mel_center_frequencies(p) - 440.0)))
    argmax_ok = bool(np.all(mel.frames.argmax(axis=1) == want))
    w = Waveform(rng.normal(0, 0.1, 8000), p.sample_rate)
    a, b = mel_spectrogram(w, p).frames, mel_spectrogram(Waveform(2 * w.samples, p.sample_rate), p).frames
    live = a > math.log(LOG_FLOOR)
    dev = float(np.max(np.abs(b[live] - a[live] - math.log(4))))
    secs = time.perf_counter() - start
    ok = frames_ok and argmax_ok and dev <= 1e-6 and secs < 10
    record_criterion(1, ok, f"frame count exact for 200 lengths={frames_ok}; 440 Hz argmax bin {want} in every "
                            f"frame={argmax_ok}; log-4 deviation {dev:.1e} (<= 1e-6); {secs:.1f} s (< 10 s)")
    assert ok


# ------------------------------------------------------------ 2: pitch suite

def test_criterion_2_pitch():
    start = time.perf_counter()
    good = total = 0
    for k in range(25):
        f = 110.0 * 2 ** (k / 12 * 36 / 24)  # 25 steps spanning 110-880 Hz
        c = estimate_f0(sine(f, 0.5), hop=64, frame_length=256)
        v = c.f0_hz[c.voiced]
        good += int(np.sum(np.abs(v - f) <= 0.01 * f))
        total += v.size
    sine_frac = good / total
    c = estimate_f0(sawtooth(110, 1.0))
    v = c.f0_hz[c.voiced]
    octave_rate = float(np.mean(np.abs(np.log2(v / 110.0)) > 0.5))
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        a, b = rng.uniform(-6, 6, 2)
        base = F0Contour(rng.uniform(150, 400, 16), np.ones(16, bool), 64, 16000)
        two = shift_scale_f0(shift_scale_f0(base, a), b).f0_hz
        one = shift_scale_f0(base, a + b).f0_hz
        worst = max(worst, float(np.max(np.abs(two - one) / one)))
    secs = time.perf_counter() - start
    ok = sine_frac >= 0.95 and octave_rate < 0.05 and worst <= 1e-9 and secs < 30
    record_criterion(2, ok, f"sines within 1%: {100 * sine_frac:.1f}% (>= 95%); sawtooth octave errors "
                            f"{100 * octave_rate:.1f}% (< 5%); group action max rel err {worst:.1e} (<= 1e-9); "
                            f"{secs:.1f} s (< 30 s)")
    assert ok


# ---------------------------------------------------------- 3: gradient gate

def test_criterion_3_gradients():
    start = time.perf_counter()
    results = run_gradient_checks(max_coords=None)
    secs = time.perf_counter() - start
    worst = max(results, key=lambda r: r.rel_error)
    ok = all(r.passed for r in results) and secs < 120
    record_criterion(3, ok, f"{sum(r.passed for r in results)}/{len(results)} cases below {TOLERANCE:g}; worst "
                            f"{worst.name} {worst.rel_error:.1e}; {secs:.1f} s (< 120 s)")
    assert ok


# ---------------------------------------------------------- 4: loss identities

def test_criterion_4_losses():
    start = time.perf_counter()
    x = torch.randn(5, 4, dtype=torch.float64)
    c = F0Contour([220.0, 330.0], [True, True], 64, 16000)
    real, fake = [torch.tensor([0.9], dtype=torch.float64)], [torch.tensor([0.3], dtype=torch.float64)]
    checks = {
        "recon identical": float(reconstruction_loss(x, x)) == 0.0,
        "recon 7.5": float(reconstruction_loss(torch.tensor([[1.0, 2.0], [3.0, 4.0]]), torch.zeros(2, 2))) == 7.5,
        "pitch identical": pitch_consistency_loss(c, c) == 0.0,
        "pitch 10": pitch_consistency_loss(c, F0Contour([210.0, 340.0], [True, True], 64, 16000)) == 10.0,
        "literal 1.30": abs(float(adversarial_loss_literal(real, fake)) - 1.30) < 1e-12,
        "lsgan 0.49/0.10": [round(float(v), 12) for v in
                            adversarial_losses(real, fake)] == [0.49, 0.1],
    }
    secs = time.perf_counter() - start
    ok = all(checks.values()) and secs < 1
    record_criterion(4, ok, "; ".join(f"{k}={v}" for k, v in checks.items()) + f"; {secs:.2f} s (< 1 s)")
    assert ok


# ------------------------------------------------------- 5-8: toy training run

@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    cfg = load_config()  # desk preset: batch 4, 2000 steps
    manifest = build_nonparallel_corpus(root / "corpus", 3, 60.0, seed=cfg.corpus.seed)
    held = build_nonparallel_corpus(root / "held", 3, 40.0, seed=cfg.corpus.seed + 101)
    start = time.perf_counter()
    result = run_training(1, manifest, cfg, out_dir=root / "run")
    secs = time.perf_counter() - start
    return {"root": root, "cfg": cfg, "manifest": manifest, "held": held, "result": result,
            "ckpt": root / "run" / "checkpoint_stage1.vckp", "seconds": secs}


def test_criterion_5_training(toy, tmp_path):
    cfg, hist = toy["cfg"], toy["result"].history
    recon = [r["L_recon"] for r in hist]
    early = float(np.mean(recon[:10]))
    final = recon[-1]
    finite = all(math.isfinite(v) for r in hist for k, v in r.items() if k != "step")
    rerun = run_training(1, toy["manifest"], cfg, out_dir=tmp_path)
    same_hist = (tmp_path / "loss_history.csv").read_bytes() == (toy["root"] / "run" / "loss_history.csv").read_bytes()
    same_ckpt = (tmp_path / "checkpoint_stage1.vckp").read_bytes() == toy["ckpt"].read_bytes()
    ok = (final <= 0.5 * early and finite and same_hist and same_ckpt and len(hist) <= 2000
          and cfg.training.batch_size == 4 and toy["seconds"] <= 1800)
    record_criterion(5, ok, f"{len(hist)} steps, batch {cfg.training.batch_size}, {toy['seconds']:.0f} s (<= 1800 s); "
                            f"final recon {final:.3f} vs steps 1-10 mean {early:.3f} (ratio {final / early:.3f}, "
                            f"<= 0.5); all losses finite={finite}; rerun history identical={same_hist}, "
                            f"checkpoint identical={same_ckpt}")
    assert ok


@pytest.fixture(scope="module")
def stage1_eval(toy):
    state = load_checkpoint(toy["ckpt"])
    run = run_eval(state.model, state.config, read_manifest(toy["manifest"]), read_manifest(toy["held"]))
    (toy["root"] / "eval_report.txt").write_text(run.report.to_text())
    return state, run


def test_criterion_6_conversion(stage1_eval):
    _, run = stage1_eval
    acc = run.report.accuracies["converted clips (probe fit on originals)"]["voice_id"]
    m = run.report.matrix
    n_sources, n_targets = run.voice_study.converted.shape[:2]
    ok = n_sources == 20 and n_targets == 3 and acc > 60.0 and m["C2C"] > m["cross_target"]
    record_criterion(6, ok, f"{n_sources} held-out sources x {n_targets} targets; probe picks intended target "
                            f"{acc:.1f}% (> 60%, chance 33.3%); C2C {m['C2C']:.4f} vs cross-speaker-pair "
                            f"{m['cross_target']:.4f}")
    assert ok


def test_criterion_7_f0_control(toy, tmp_path):
    src = read_manifest(toy["held"])[0].path
    ck = str(toy["ckpt"])
    state = load_checkpoint(toy["ckpt"])
    source_median = convert(load_waveform(src), "spk0", state.model, state.config).source_f0.median()
    assert main(["convert", "--checkpoint", ck, "--source", str(src), "--target-speaker", "spk0",
                 "--f0-shift", "+12", "--out", str(tmp_path / "up.wav"), "--f0-csv", str(tmp_path / "up.csv")]) == 0
    shifted = read_f0_csv(tmp_path / "up.csv").median()
    ratio = shifted / source_median
    assert main(["convert", "--checkpoint", ck, "--source", str(src), "--target-speaker", "spk1",
                 "--f0-auto-match", "--out", str(tmp_path / "am.wav"), "--f0-csv", str(tmp_path / "am.csv")]) == 0
    target_median = math.exp(state.model.speaker_log_f0["spk1"])
    matched = read_f0_csv(tmp_path / "am.csv").median() / target_median
    ok = abs(ratio - 2.0) <= 0.1 and abs(matched - 1.0) <= 0.05
    record_criterion(7, ok, f"+12 semitones: fused/source median {ratio:.4f} (2 +/- 5%); auto-match: fused median "
                            f"/ target median {matched:.4f} (1 +/- 5%)")
    assert ok


def test_criterion_8_stage2(toy):
    root = toy["root"]
    par = build_parallel_corpus(root / "parallel", toy["cfg"].corpus.accent_tags, 10, seed=0)
    par_held = build_parallel_corpus(root / "parallel_held", toy["cfg"].corpus.accent_tags, 10, seed=1)
    state = load_checkpoint(toy["ckpt"])
    cfg = replace(state.config, training=replace(state.config.training, steps=500))
    res = run_training(2, par, cfg, resume=state, out_dir=root / "stage2")
    recon = [r["L_recon"] for r in read_history(root / "stage2" / "loss_history.csv")]
    initial, final = float(np.mean(recon[:10])), float(np.mean(recon[-10:]))
    run = run_eval(res.model, cfg, read_manifest(toy["manifest"]), read_manifest(toy["held"]),
                   accent_records=read_manifest(par), accent_held_out=read_manifest(par_held))
    acc = run.report.accuracies["converted clips (probe fit on originals)"]["accent"]
    chance = 100.0 / len(run.accent_study.targets)
    ok = len(recon) == 500 and final <= 0.8 * initial and acc >= chance + 10
    record_criterion(8, ok, f"{len(recon)} steps from the stage-1 checkpoint; recon mean of last 10 {final:.3f} vs "
                            f"first 10 {initial:.3f} (ratio {final / initial:.3f}, <= 0.8); accent probe on "
                            f"converted outputs {acc:.1f}% (>= chance {chance:.0f}% + 10)")
    assert ok


# ---------------------------------------------------------- 9: persistence

INVALID = [
    "dsp.hop_length=128", "dsp.win_length=1024", "dsp.fmax=9000", "pitch.f_ceiling=9000",
    "pitch.yin_threshold=1.5", "encoder.head_count=5", "fusion.target_mode=telepathy",
    "training.batch_size=0", "training.w_recon=-1", "vocoder.upsample_kernel=2",
]
NAMED = ["dsp.hop_length", "dsp.win_length", "dsp.fmax", "pitch.f_ceiling", "pitch.yin_threshold",
         "encoder.hidden_size", "fusion.target_mode", "training.batch_size", "training.w_recon",
         "vocoder.upsample_kernel"]


def test_criterion_9_persistence(tmp_path):
    cfg = load_config()
    model = build_model(cfg, ["spk0", "spk1", "spk2"], seed=3)
    disc = build_discriminators_for(cfg, seed=4)
    path = save_checkpoint(tmp_path / "init.vckp", model, disc, cfg)
    state = load_checkpoint(path)
    pairs = [(a, b) for a, b in zip(list(model.state_dict().values()) + list(disc.state_dict().values()),
                                    list(state.model.state_dict().values()) + list(state.discriminators.state_dict().values()))]
    exact = all(torch.equal(a, b) for a, b in pairs)
    rejected = 0
    for override, key in zip(INVALID, NAMED):
        try:
            load_config(overrides=[override])
        except ConfigError as exc:
            rejected += key in str(exc)
    ok = exact and rejected == len(INVALID)
    record_criterion(9, ok, f"{len(pairs)} tensors bit-exact after round trip={exact}; invalid configs rejected "
                            f"with their key named: {rejected}/{len(INVALID)}")
    assert ok


# --------------------------------------------------------- 10: throughput

def test_criterion_10_bench(capsys, tmp_path):
    assert main(["bench-vocoder", "--frames", "250", "--repeats", "3", "--out", str(tmp_path / "bench.csv")]) == 0
    head, row = capsys.readouterr().out.strip().splitlines()
    stats = dict(zip(head.split(","), map(float, row.split(","))))
    ok = all(math.isfinite(v) for v in stats.values()) and stats["real_time_factor"] > 0
    record_criterion(10, ok, f"bench-vocoder: {stats['samples']:.0f} samples in {stats['seconds']:.4f} s, "
                             f"real-time factor {stats['real_time_factor']:.1f}x (report only)")
    assert ok
