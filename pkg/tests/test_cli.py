import csv
import json
import shutil

import numpy as np
import pytest

from sspitch.cli import main
from sspitch.corpus import F0Track, read_annotation, write_annotation


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["gen-corpus", "--preset", "demo", "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def features(corpus, tmp_path_factory):
    # two training clips and one held-out clip keep the module fast
    small = tmp_path_factory.mktemp("small")
    for name in ("train_00", "train_01", "heldout_19"):
        shutil.copy(corpus / f"{name}.wav", small)
    shutil.copy(corpus / "manifest.csv", small)
    out = tmp_path_factory.mktemp("features")
    assert main(["cqt", "--in", str(small), "--out", str(out)]) == 0
    return out


def test_gen_corpus_is_byte_identical(corpus, tmp_path):
    assert main(["gen-corpus", "--preset", "demo", "--seed", "7", "--out", str(tmp_path)]) == 0
    assert _tree(tmp_path) == _tree(corpus)


def test_gen_corpus_manifest(corpus):
    with open(corpus / "manifest.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20
    assert sum(r["split"] == "heldout" for r in rows) == 5
    assert {r["profile"] for r in rows if r["split"] == "train"} == {"realistic"}
    assert {r["profile"] for r in rows if r["split"] == "heldout"} == {"clean"}
    assert sum(float(r["seconds"]) for r in rows) == pytest.approx(60.0)


def test_gen_corpus_bad_preset(tmp_path, capsys):
    assert main(["gen-corpus", "--preset", "full", "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error: corpus.preset:")


def test_cqt_outputs(features):
    assert sorted(p.name for p in features.glob("*.cqt")) == [
        "heldout_19.cqt", "train_00.cqt", "train_01.cqt"]
    assert (features / "manifest.csv").is_file()


def test_cqt_missing_input(tmp_path, capsys):
    assert main(["cqt", "--in", str(tmp_path / "none.wav"), "--out", str(tmp_path)]) == 2
    assert "none.wav" in capsys.readouterr().err


def test_cqt_rejects_stereo(tmp_path, capsys):
    import wave
    p = tmp_path / "st.wav"
    with wave.open(str(p), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(b"\0" * 400)
    assert main(["cqt", "--in", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "channels" in capsys.readouterr().err


def test_eval_identical_is_perfect(corpus, capsys):
    ref = corpus / "heldout_19.csv"
    assert main(["eval", "--est", str(ref), "--ref", str(ref)]) == 0
    assert capsys.readouterr().out.strip() == "rpa=100.00 rca=100.00"


def test_eval_directory_split_and_json(corpus, tmp_path, capsys):
    est = tmp_path / "est"
    est.mkdir()
    for name in ("heldout_18", "heldout_19", "train_00"):
        shutil.copy(corpus / f"{name}.csv", est)
    out = tmp_path / "m.json"
    assert main(["eval", "--est", str(est), "--ref", str(corpus), "--split", "heldout",
                 "--json", str(out)]) == 0
    assert capsys.readouterr().out.strip() == "rpa=100.00 rca=100.00"
    ref_frames = sum(int(read_annotation(corpus / f"heldout_{i}.csv").voiced.sum())
                     for i in (18, 19))
    assert json.loads(out.read_text())["frames"] == ref_frames


def test_eval_octave_error(corpus, tmp_path, capsys):
    ref = read_annotation(corpus / "heldout_19.csv")
    est = F0Track(ref.frames, ref.f0_hz * 2, ref.voiced)
    write_annotation(tmp_path / "e.csv", est)
    assert main(["eval", "--est", str(tmp_path / "e.csv"),
                 "--ref", str(corpus / "heldout_19.csv")]) == 0
    assert capsys.readouterr().out.strip() == "rpa=0.00 rca=100.00"


def test_eval_malformed_track(corpus, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("frame,f0_hz,voiced\n0,0.0,1\n")
    assert main(["eval", "--est", str(bad), "--ref", str(corpus / "heldout_19.csv")]) == 2
    assert "bad.csv" in capsys.readouterr().err


@pytest.fixture(scope="module")
def run_dir(features, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    argv = ["train", "--features", str(features), "--out", str(out), "--epochs", "2",
            "--k-epochs", "1", "--batch-size", "64", "--checkpoint-every", "1"]
    assert main(argv) == 0
    return out


def test_train_artifacts(run_dir, features):
    names = {p.name for p in run_dir.iterdir()}
    assert {"config.json", "model.plck", "weights.csv", "train_log.jsonl",
            "checkpoints"} <= names
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["epochs"] == 2 and cfg["k_epochs"] == 1
    lines = (run_dir / "train_log.jsonl").read_text().splitlines()
    assert [json.loads(s).get("epoch") for s in lines[:2]] == [0, 1]
    assert "calibration_offset" in json.loads(lines[-1])
    with open(run_dir / "weights.csv", newline="") as fh:
        clips = {r["clip"] for r in csv.DictReader(fh)}
    assert clips == {"train_00", "train_01"}


def test_train_bad_override(features, tmp_path, capsys):
    argv = ["train", "--features", str(features), "--out", str(tmp_path), "--epochs", "7"]
    assert main(argv) == 2
    assert "train.epochs" in capsys.readouterr().err


def test_train_voicing_single_class(run_dir, features, tmp_path, capsys):
    # after one E-step at a tiny lambda every weight is still above theta
    argv = ["train-voicing", "--features", str(features), "--weights",
            str(run_dir / "weights.csv"), "--out", str(tmp_path / "v.plck")]
    assert main(argv) == 2
    assert "need both classes" in capsys.readouterr().err


def test_train_voicing_and_infer(run_dir, features, tmp_path):
    from sspitch.trainer import SampleWeightTable

    table = SampleWeightTable.read_csv(run_dir / "weights.csv")
    table.weights = np.where(np.arange(len(table)) % 2, 0.9, 0.1)
    table.write_csv(tmp_path / "w.csv")
    vpath = tmp_path / "v.plck"
    assert main(["train-voicing", "--features", str(features), "--weights",
                 str(tmp_path / "w.csv"), "--out", str(vpath), "--epochs", "5"]) == 0
    est = tmp_path / "est"
    assert main(["infer", "--model", str(run_dir / "model.plck"), "--voicing", str(vpath),
                 "--features", str(features), "--out", str(est), "--split", "heldout"]) == 0
    assert [p.name for p in est.iterdir()] == ["heldout_19.csv"]
    track = read_annotation(est / "heldout_19.csv")
    assert np.all((track.voiced == 1) == (track.f0_hz > 0))


def test_infer_pitch_only(run_dir, features, tmp_path):
    est = tmp_path / "est"
    assert main(["infer", "--model", str(run_dir / "model.plck"), "--features", str(features),
                 "--out", str(est), "--pitch-only"]) == 0
    track = read_annotation(est / "train_00.csv")
    assert np.all(track.voiced == 1)


def test_infer_needs_voicing(run_dir, features, tmp_path, capsys):
    assert main(["infer", "--model", str(run_dir / "model.plck"), "--features", str(features),
                 "--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error: --voicing:")


def test_infer_rejects_non_checkpoint(features, tmp_path, capsys):
    bad = tmp_path / "m.plck"
    bad.write_bytes(b"not a checkpoint")
    assert main(["infer", "--model", str(bad), "--features", str(features),
                 "--out", str(tmp_path), "--pitch-only"]) != 0
    assert "m.plck" in capsys.readouterr().err


def test_export(run_dir, features, tmp_path, capsys):
    est = tmp_path / "est"
    main(["infer", "--model", str(run_dir / "model.plck"), "--features", str(features),
          "--out", str(est), "--pitch-only"])
    out = tmp_path / "fig"
    assert main(["export", "--run", str(run_dir), "--features", str(features),
                 "--tracks", str(est), "--out", str(out)]) == 0
    assert "bimodality=" in capsys.readouterr().out
    rows = (out / "weight_histogram.csv").read_text().splitlines()
    assert rows[0] == "bin_lo,bin_hi,count" and len(rows) == 21
    assert (out / "train_log.jsonl").read_bytes() == (run_dir / "train_log.jsonl").read_bytes()
    assert {p.name for p in out.glob("*.pgm")} == {"train_00.pgm", "train_01.pgm",
                                                   "heldout_19.pgm"}


def test_resynth(corpus, tmp_path, capsys):
    from sspitch.corpus import AudioClip, read_wav, write_wav

    clip = read_wav(corpus / "heldout_19.wav")
    track = read_annotation(corpus / "heldout_19.csv")
    n = 60
    write_wav(tmp_path / "a.wav", AudioClip(clip.samples[:n * 160]))
    write_annotation(tmp_path / "t.csv", F0Track(track.frames[:n], track.f0_hz[:n],
                                                 track.voiced[:n]))
    argv = ["resynth", "--audio", str(tmp_path / "a.wav"), "--track", str(tmp_path / "t.csv"),
            "--out", str(tmp_path / "fit.wav"), "--epochs", "3", "--harmonics", "4"]
    assert main(argv) == 0
    assert len(read_wav(tmp_path / "fit.wav")) == n * 160
    rows = (tmp_path / "fit.csv").read_text().splitlines()
    assert rows[0] == "epoch,total,mrstft,tv" and len(rows) == 5


def test_inputs_not_mutated(corpus, features, run_dir):
    before = _tree(features)
    main(["infer", "--model", str(run_dir / "model.plck"), "--features", str(features),
          "--out", str(run_dir.parent / "est_check"), "--pitch-only"])
    assert _tree(features) == before
