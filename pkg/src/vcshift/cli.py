"""Command-line interface. Every command is a thin wrapper over library calls.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure,
5 checkpoint error. Diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import traceback
from dataclasses import replace
from pathlib import Path

log = logging.getLogger("vcshift")


def _config(args):
    from .config import load_config

    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides += [f"training.seed={args.seed}", f"corpus.seed={args.seed}", f"eval.seed={args.seed}"]
    return load_config(args.config, overrides, preset=args.preset)


def _load_model(args, cfg):
    from .checkpoint import load_checkpoint

    state = load_checkpoint(args.checkpoint, cfg if args.config or args.set else None, force=args.force)
    return state


# ------------------------------------------------------------------- commands

def cmd_synth_corpus(args) -> int:
    from .corpus import build_nonparallel_corpus, build_parallel_corpus

    cfg = _config(args)
    c = cfg.corpus
    if args.kind == "parallel":
        manifest = build_parallel_corpus(args.out, c.accent_tags, c.parallel_utterances, seed=c.seed,
                                         sample_rate=cfg.dsp.sample_rate)
    else:
        manifest = build_nonparallel_corpus(args.out, c.speakers, c.seconds_per_speaker, seed=c.seed,
                                            sample_rate=cfg.dsp.sample_rate, clip_seconds=c.clip_seconds,
                                            singing_fraction=c.singing_fraction)
    print(manifest)
    return 0


def cmd_preprocess(args) -> int:
    from .corpus import read_manifest
    from .dsp import load_waveform, mel_spectrogram, standardize, write_mel_csv, write_mel_pgm
    from .pitch import estimate_f0, write_f0_csv

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for r in read_manifest(args.manifest):
        w = standardize(load_waveform(r.path), cfg.dsp)
        mel = mel_spectrogram(w, cfg.dsp)
        write_mel_csv(mel, out / f"{r.utterance_id}.mel.csv")
        if args.pgm:
            write_mel_pgm(mel, out / f"{r.utterance_id}.mel.pgm")
        f0 = estimate_f0(w, cfg.pitch, cfg.dsp.hop_length, frame_length=cfg.dsp.win_length)
        write_f0_csv(f0, out / f"{r.utterance_id}.f0.csv")
        log.info("%s: %d frames", r.utterance_id, len(mel))
    return 0


def cmd_train(args) -> int:
    from .checkpoint import load_checkpoint
    from .plotting import loss_curves
    from .training import run_training

    cfg = _config(args)
    if args.steps is not None:
        cfg = replace(cfg, training=replace(cfg.training, steps=args.steps)).validate()
    resume = load_checkpoint(args.resume, cfg, force=args.force) if args.resume else None

    def progress(step, row):
        if step % args.log_every == 0:
            log.info("step %d  recon %.4f  adv_g %.4f  adv_d %.4f  pitch %.2f  fm %.4f",
                     step, row["L_recon"], row["L_adv_gen"], row["L_adv_disc"], row["L_pitch"], row["L_fm"])

    result = run_training(args.stage, args.manifest, cfg, resume=resume, out_dir=args.out, progress=progress)
    loss_curves(result.history, Path(args.out) / "loss_curves.png")
    print(result.checkpoints[-1])
    return 0


def cmd_convert(args) -> int:
    from .dsp import load_waveform
    from .pipeline import convert, write_outputs

    cfg = _config(args)
    state = _load_model(args, cfg)
    if (args.target_speaker is None) == (args.target_audio is None):
        from .errors import ConfigError
        raise ConfigError("give exactly one of --target-speaker or --target-audio")
    target = args.target_speaker if args.target_speaker is not None else load_waveform(args.target_audio)
    result = convert(load_waveform(args.source), target, state.model, state.config,
                     semitones=args.f0_shift, scale=args.f0_scale, auto_match=args.f0_auto_match)
    write_outputs(result, args.out, mel_pgm=args.mel_pgm, f0_csv=args.f0_csv)
    if args.f0_plot:
        from .plotting import f0_contours
        f0_contours({"source": result.source_f0, "fused": result.fused_f0}, args.f0_plot,
                    state.config.dsp.hop_length / state.config.dsp.sample_rate)
    src_med, out_med = result.source_f0.median(), result.fused_f0.median()
    log.info("source median f0 %.2f Hz, fused median f0 %.2f Hz", src_med, out_med)
    print(args.out)
    return 0


def cmd_eval(args) -> int:
    from .corpus import read_manifest
    from .evaluation import run_eval
    from .plotting import accuracy_bars, similarity_bars

    cfg = _config(args)
    state = _load_model(args, cfg)
    out = Path(args.out)
    run = run_eval(
        state.model, state.config, read_manifest(args.manifest), read_manifest(args.held_out),
        accent_records=read_manifest(args.parallel_manifest) if args.parallel_manifest else None,
        accent_held_out=read_manifest(args.parallel_held_out) if args.parallel_held_out else None,
        metadata={"checkpoint": str(args.checkpoint), "step": state.step, "corpus_seed": state.config.corpus.seed},
    )
    report = run.report
    report.write_csv(out / "eval_report.csv")
    (out / "eval_report.txt").write_text(report.to_text())
    voices = len(run.voice_study.targets)
    chance = {"voice_id": 100.0 / voices, "accent": 100.0 / len(run.accent_study.targets) if run.accent_study else None}
    accuracy_bars(report.accuracies, out / "probe_accuracy.png", chance)
    similarity_bars(report.floored(), out / "similarity.png", "conversion similarity")
    sys.stdout.write(report.to_text())
    return 0


def cmd_bench_vocoder(args) -> int:
    from .model import build_model
    from .vocoder import benchmark

    cfg = _config(args)
    if args.checkpoint:
        state = _load_model(args, cfg)
        generator, cfg = state.model.generator, state.config
    else:
        generator = build_model(cfg, ["bench"], seed=cfg.training.seed).generator
    generator.eval()
    stats = benchmark(generator, frames=args.frames, repeats=args.repeats, sample_rate=cfg.dsp.sample_rate,
                      seed=cfg.training.seed)
    if not all(math.isfinite(v) for v in stats.values()):
        from .errors import NumericError
        raise NumericError(f"non-finite benchmark result: {stats}")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(list(stats))
    w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in stats.values()])
    if args.out:
        with open(args.out, "w", newline="") as fh:
            cw = csv.writer(fh, lineterminator="\n")
            cw.writerow(list(stats))
            cw.writerow(list(stats.values()))
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import TOLERANCE, run_gradient_checks

    results = run_gradient_checks(seed=args.seed or 0, max_coords=args.max_coords or None)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["case", "max_rel_error", "tolerance", "passed", "seconds"])
    for r in results:
        w.writerow([r.name, f"{r.rel_error:.3e}", TOLERANCE, r.passed, f"{r.seconds:.3f}"])
    if not all(r.passed for r in results):
        from .errors import NumericError
        raise NumericError("gradient check failed: " + ", ".join(r.name for r in results if not r.passed))
    return 0


# ------------------------------------------------------------------- parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
    common.add_argument("--preset", choices=("desk", "paper"))
    common.add_argument("--seed", type=int, help="overrides training/corpus/eval seeds")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="vcshift", description="Desk-scale voice and accent conversion toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-corpus", parents=[common], help="render a synthetic corpus and manifest")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--kind", choices=("nonparallel", "parallel"), default="nonparallel")
    s.set_defaults(func=cmd_synth_corpus)

    s = sub.add_parser("preprocess", parents=[common], help="write mel and f0 features for a manifest")
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--pgm", action="store_true", help="also write mel PGM images")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", parents=[common], help="stage 1 or stage 2 training")
    s.add_argument("--stage", type=int, choices=(1, 2), required=True)
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--resume", type=Path, help="checkpoint to start from (required for stage 2)")
    s.add_argument("--steps", type=int)
    s.add_argument("--log-every", type=int, default=50)
    s.add_argument("--force", action="store_true", help="ignore config fingerprint mismatch")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("convert", parents=[common], help="convert one clip")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--source", type=Path, required=True)
    s.add_argument("--target-speaker")
    s.add_argument("--target-audio", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--f0-shift", type=float, default=0.0, help="semitones")
    s.add_argument("--f0-scale", type=float, default=1.0)
    s.add_argument("--f0-auto-match", action="store_true", help="map source median f0 to the target's")
    s.add_argument("--mel-pgm", type=Path)
    s.add_argument("--f0-csv", type=Path)
    s.add_argument("--f0-plot", type=Path, help="PNG of the source and fused f0 contours")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("eval", parents=[common], help="probe accuracies and similarity matrix")
    s.add_argument("--checkpoint", type=Path, required=True)
    s.add_argument("--manifest", type=Path, required=True, help="original clips for the voice probe")
    s.add_argument("--held-out", type=Path, required=True, help="source clips to convert")
    s.add_argument("--parallel-manifest", type=Path)
    s.add_argument("--parallel-held-out", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench-vocoder", parents=[common], help="generator throughput")
    s.add_argument("--checkpoint", type=Path)
    s.add_argument("--frames", type=int, default=250)
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--out", type=Path)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_bench_vocoder)

    s = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient gate")
    s.add_argument("--max-coords", type=int, default=64, help="coordinates per tensor (0 = all)")
    s.set_defaults(func=cmd_grad_check)
    return p


def _origin(exc: BaseException) -> str:
    """Name of the innermost package module the exception passed through."""
    name = "vcshift"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("vcshift.") and mod != "vcshift.cli":
            name = mod
    return name


def main(argv=None) -> int:
    from .errors import VCError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VCError as exc:
        print(f"error [{_origin(exc)}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, ValueError) as exc:
        print(f"error [{_origin(exc)}]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
