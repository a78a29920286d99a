"""``sspitch`` command line.

    sspitch gen-corpus --preset demo --seed 7 --out corpus/
    sspitch cqt --in corpus/ --out features/
    sspitch train --features features/ --out run/
    sspitch train-voicing --features features/ --weights run/weights.csv --out run/voicing.plck
    sspitch infer --model run/model.plck --voicing run/voicing.plck --features features/ --out est/
    sspitch eval --est est/ --ref corpus/ --split heldout
    sspitch resynth --audio clip.wav --track est/clip.csv --out fit.wav --curve fit.csv
    sspitch export --run run/ --features features/ --tracks est/ --out figures/

Failures print one ``error: <key or path>: <message>`` line to stderr and exit
nonzero (2 for configuration and input errors, 1 for runtime failures).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("sspitch")

MANIFEST = "manifest.csv"
MANIFEST_HEADER = ["name", "split", "profile", "seconds"]
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class CliError(Exception):
    def __init__(self, key, message, code=2):
        super().__init__(f"{key}: {message}")
        self.code = code


# --- helpers -----------------------------------------------------------------

def _need_dir(path, key):
    p = Path(path)
    if not p.is_dir():
        raise CliError(key, f"{path}: directory not found")
    return p


def _need_file(path, key):
    p = Path(path)
    if not p.is_file():
        raise CliError(key, f"{path}: file not found")
    return p


def _read_manifest(directory: Path) -> dict:
    path = directory / MANIFEST
    if not path.is_file():
        return {}
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {r["name"]: r for r in rows}


def _write_manifest(directory: Path, rows):
    with open(directory / MANIFEST, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MANIFEST_HEADER)
        wr.writerows(rows)


def _select(names, manifest, split):
    if split in (None, "all"):
        return names
    if not manifest:
        raise CliError("--split", f"no {MANIFEST} found to resolve split {split!r}")
    return [n for n in names if manifest.get(n, {}).get("split") == split]


def _features(directory: Path, split=None):
    """``[(name, CqtSpectrogram)]`` for the ``*.cqt`` files in ``directory``."""
    from .cqt import read_spectrogram

    names = sorted(p.stem for p in directory.glob("*.cqt"))
    names = _select(names, _read_manifest(directory), split)
    if not names:
        raise CliError("--features", f"{directory}: no matching .cqt files")
    out = []
    for n in names:
        try:
            out.append((n, read_spectrogram(directory / f"{n}.cqt")))
        except ValueError as exc:
            raise CliError(str(directory / f"{n}.cqt"), str(exc)) from None
    return out


def _run_config(args, overrides):
    from .config import ConfigError, load_config

    try:
        cfg = load_config(getattr(args, "config", None), overrides)
    except ConfigError as exc:
        raise CliError(exc.key, str(exc).split(": ", 1)[-1]) from None
    return cfg


# --- commands ------------------------------------------------------------------

def cmd_gen_corpus(args):
    from .corpus import demo_corpus, write_annotation, write_wav

    cfg = _run_config(args, {"corpus.preset": args.preset, "corpus.seed": args.seed})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for item in demo_corpus(cfg["corpus.seed"]):
        write_wav(out / f"{item.name}.wav", item.clip)
        write_annotation(out / f"{item.name}.csv", item.track)
        profile = "clean" if item.split == "heldout" else "realistic"
        rows.append([item.name, item.split, profile, f"{item.clip.duration:.3f}"])
    _write_manifest(out, rows)
    print(f"wrote {len(rows)} clips to {out}")


def cmd_cqt(args):
    from .corpus import WavFormatError, read_wav
    from .cqt import compute_cqt, write_spectrogram

    src = Path(args.inp)
    if src.is_dir():
        wavs = sorted(src.glob("*.wav"))
        manifest = _read_manifest(src)
    else:
        wavs = [_need_file(src, "--in")]
        manifest = {}
    if not wavs:
        raise CliError("--in", f"{src}: no .wav files")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for wav in wavs:
        try:
            clip = read_wav(wav)
        except WavFormatError as exc:
            raise CliError(str(wav), str(exc)) from None
        write_spectrogram(out / f"{wav.stem}.cqt", compute_cqt(clip))
        log.info("cqt %s", wav.name)
    if manifest:
        _write_manifest(out, [[r[k] for k in MANIFEST_HEADER] for r in manifest.values()])
    print(f"wrote {len(wavs)} spectrograms to {out}")


def cmd_train(args):
    import json

    from .trainer import FrameDataset, TrainConfig, config_dict, train

    cfg = _run_config(args, {f"train.{k}": getattr(args, k) for k in
                             ("seed", "k_epochs", "epochs", "batch_size", "lr", "delta_max",
                              "checkpoint_every")})
    feats = _features(_need_dir(args.features, "--features"), args.split)
    dataset = FrameDataset.from_spectrograms(feats)
    tcfg = TrainConfig(**cfg.section("train"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config_dict(tcfg), indent=2) + "\n")
    model, table, records = train(dataset, tcfg, out_dir=out / "checkpoints",
                                  log_path=out / "train_log.jsonl",
                                  progress=lambda r: log.info("epoch %d loss %.4f", r["epoch"], r["loss"]))
    model.save(out / "model.plck")
    table.write_csv(out / "weights.csv")
    print(f"trained on {len(dataset)} frames; model at {out / 'model.plck'}")


def cmd_train_voicing(args):
    import numpy as np

    from .trainer import SampleWeightTable
    from .voicing import ClassBalanceError, VoicingConfig, pseudo_labels, train_voicing

    cfg = _run_config(args, {"voicing.theta": args.theta, "voicing.epochs": args.epochs,
                             "voicing.lr": args.lr})
    feats = dict(_features(_need_dir(args.features, "--features")))
    try:
        table = SampleWeightTable.read_csv(_need_file(args.weights, "--weights"))
    except ValueError as exc:
        raise CliError(args.weights, str(exc)) from None
    labels = pseudo_labels(table, cfg["voicing.theta"])
    rows = []
    for clip, frame in zip(table.clips, table.frames):
        if clip not in feats:
            raise CliError("--features", f"no spectrogram for clip {clip!r}")
        rows.append(feats[clip].values[int(frame)])
    vcfg = VoicingConfig(epochs=cfg["voicing.epochs"], lr=cfg["voicing.lr"])
    try:
        clf = train_voicing(np.asarray(rows), labels, vcfg)
    except ClassBalanceError as exc:
        raise CliError("--weights", str(exc)) from None
    clf.save(args.out)
    print(f"pseudo-labels {labels.counts}; classifier at {args.out}")


def cmd_infer(args):
    import numpy as np

    from .corpus import F0Track, write_annotation
    from .model import ConfigError, decode_pitch, load_model, softmax_rows
    from .voicing import VoicingClassifier, predict_voicing

    try:
        model = load_model(_need_file(args.model, "--model"))
    except (ConfigError, ValueError) as exc:
        raise CliError(args.model, str(exc)) from None
    clf = None
    if not args.pitch_only:
        if args.voicing is None:
            raise CliError("--voicing", "required unless --pitch-only is given")
        clf = VoicingClassifier.load(_need_file(args.voicing, "--voicing"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    feats = _features(_need_dir(args.features, "--features"), args.split)
    for name, spec in feats:
        est = decode_pitch(softmax_rows(model.predict(spec.values)))
        voiced = np.ones(len(est.f0_hz), dtype=np.int64) if clf is None \
            else predict_voicing(clf, spec.values)[1].astype(np.int64)
        f0 = np.where(voiced == 1, est.f0_hz, 0.0)
        write_annotation(out / f"{name}.csv", F0Track(np.arange(len(f0)), f0, voiced, spec.hop))
    print(f"wrote {len(feats)} tracks to {out}")


def cmd_eval(args):
    from .corpus import AnnotationError, read_annotation
    from .evaluation import UndefinedMetricError, pooled_rpa_rca

    est_p, ref_p = Path(args.est), Path(args.ref)
    if est_p.is_dir():
        ref_dir = _need_dir(ref_p, "--ref")
        names = sorted(p.stem for p in est_p.glob("*.csv"))
        names = _select(names, _read_manifest(ref_dir), args.split)
        pairs = [(est_p / f"{n}.csv", ref_dir / f"{n}.csv") for n in names]
    else:
        pairs = [(_need_file(est_p, "--est"), _need_file(ref_p, "--ref"))]
    if not pairs:
        raise CliError("--est", f"{est_p}: no tracks to evaluate")
    tracks = []
    for e, r in pairs:
        try:
            tracks.append((read_annotation(e), read_annotation(_need_file(r, "--ref"))))
        except AnnotationError as exc:
            raise CliError(str(e), str(exc)) from None
    try:
        m = pooled_rpa_rca(tracks, args.threshold)
    except (UndefinedMetricError, ValueError) as exc:
        raise CliError("--ref", str(exc)) from None
    print(f"rpa={m.rpa:.2f} rca={m.rca:.2f}")
    if args.json:
        Path(args.json).write_text(m.to_json() + "\n")


def cmd_resynth(args):
    from .corpus import AudioClip, read_annotation, read_wav, write_wav
    from .synth import FitConfig, fit_synth

    cfg = _run_config(args, {"synth.n_harmonics": args.harmonics,
                             "synth.lambda_smooth": args.lambda_smooth,
                             "synth.epochs": args.epochs, "synth.lr": args.lr})
    clip = read_wav(_need_file(args.audio, "--audio"))
    track = read_annotation(_need_file(args.track, "--track"))
    s = cfg.section("synth")
    fit = fit_synth(clip, track, FitConfig(epochs=s["epochs"], lr=s["lr"],
                                           lambda_smooth=s["lambda_smooth"],
                                           n_harmonics=s["n_harmonics"]))
    peak = max(1.0, float(abs(fit.audio).max(initial=0.0)))
    write_wav(args.out, AudioClip(fit.audio / peak))
    curve = args.curve or str(Path(args.out).with_suffix(".csv"))
    with open(curve, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["epoch", "total", "mrstft", "tv"])
        for e, t, m, tv in fit.curve:
            wr.writerow([e, f"{t:.9g}", f"{m:.9g}", f"{tv:.9g}"])
    status = " (stopped early: non-finite loss)" if fit.aborted else ""
    print(f"final loss {fit.curve[-1][1]:.6f}{status}; audio at {args.out}")
    if fit.aborted:
        raise CliError("resynth", "fit aborted on a non-finite loss", code=1)


def cmd_export(args):
    import shutil

    import numpy as np

    from .corpus import read_annotation
    from .evaluation import export_overlay, weight_histogram
    from .trainer import SampleWeightTable

    run = _need_dir(args.run, "--run")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = SampleWeightTable.read_csv(_need_file(run / "weights.csv", "--run"))
    hist = weight_histogram(table)
    with open(out / "weight_histogram.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            wr.writerow([f"{lo:.2f}", f"{hi:.2f}", int(c)])
    log_src = run / "train_log.jsonl"
    if log_src.is_file():
        shutil.copyfile(log_src, out / "train_log.jsonl")
    n_img = 0
    if args.features and args.tracks:
        tracks_dir = _need_dir(args.tracks, "--tracks")
        by_key = {(c, int(f)): w for c, f, w in zip(table.clips, table.frames, table.weights)}
        for name, spec in _features(_need_dir(args.features, "--features")):
            tp = tracks_dir / f"{name}.csv"
            if not tp.is_file():
                continue
            est = read_annotation(tp)
            w = np.array([by_key.get((name, i), np.nan) for i in range(spec.n_frames)])
            export_overlay(out / f"{name}.pgm", out / f"{name}_overlay.csv", spec, est,
                           None if np.all(np.isnan(w)) else w, est.voiced)
            n_img += 1
    print(f"bimodality={hist.bimodality:.3f}; {n_img} overlays in {out}")


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sspitch", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                   help="pin BLAS/OpenMP to one thread (default on)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="write the synthetic demo corpus")
    g.add_argument("--preset", default=None, help="corpus preset (demo)")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_corpus)

    c = sub.add_parser("cqt", help="compute log-CQT features for WAV files")
    c.add_argument("--in", dest="inp", required=True, help="WAV file or directory")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cqt)

    t = sub.add_parser("train", help="self-supervised pitch training with EM reweighting")
    t.add_argument("--features", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--split", default="train", help="manifest split to train on, or 'all'")
    for name, typ in (("seed", int), ("k_epochs", int), ("epochs", int), ("batch_size", int),
                      ("lr", float), ("delta_max", int), ("checkpoint_every", int)):
        t.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("train-voicing", help="fit the linear voicing classifier on pseudo-labels")
    v.add_argument("--features", required=True)
    v.add_argument("--weights", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--theta", type=float, default=None)
    v.add_argument("--epochs", type=int, default=None)
    v.add_argument("--lr", type=float, default=None)
    v.set_defaults(func=cmd_train_voicing)

    i = sub.add_parser("infer", help="write F0/voicing tracks")
    i.add_argument("--model", required=True)
    i.add_argument("--voicing")
    i.add_argument("--features", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--split", default="all")
    i.add_argument("--pitch-only", action="store_true",
                   help="mark every frame voiced (ungated pitch for RPA/RCA)")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="RPA/RCA of estimated against reference tracks")
    e.add_argument("--est", required=True, help="track CSV or directory")
    e.add_argument("--ref", required=True, help="track CSV or directory")
    e.add_argument("--split", default="all")
    e.add_argument("--threshold", type=float, default=50.0, help="cents")
    e.add_argument("--json", help="also write metrics JSON here")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("resynth", help="fit the harmonic synthesizer to a clip")
    r.add_argument("--audio", required=True)
    r.add_argument("--track", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--curve", help="loss-curve CSV (default: next to --out)")
    r.add_argument("--harmonics", type=int, default=None)
    r.add_argument("--lambda-smooth", dest="lambda_smooth", type=float, default=None)
    r.add_argument("--epochs", type=int, default=None)
    r.add_argument("--lr", type=float, default=None)
    r.set_defaults(func=cmd_resynth)

    x = sub.add_parser("export", help="weight histogram, training log and CQT overlays")
    x.add_argument("--run", required=True, help="directory written by 'train'")
    x.add_argument("--features")
    x.add_argument("--tracks")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.deterministic:
        for var in THREAD_VARS:
            os.environ[var] = "1"
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
