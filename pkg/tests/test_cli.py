import json

import pytest

from asca.cli import run
from asca.manifest import DatasetManifest


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["synth", "--seed", "1", "--out", str(d / "train.wav"), "--sessions", "10"]) == 0
    assert run(["synth", "--seed", "2", "--out", str(d / "test.wav"), "--sessions", "4",
                "--set", "pin_length=5"]) == 0
    for cmd, name in (("train-detector", "det.model"), ("train-classifier", "clf.model")):
        assert run([cmd, "--seed", "0", "--manifest", str(d / "train.jsonl"),
                    "--out", str(d / name)]) == 0
    return d


def test_synth_is_byte_identical(tmp_path):
    for sub in ("a", "b"):
        (tmp_path / sub).mkdir()
        assert run(["synth", "--seed", "7", "--out", str(tmp_path / sub / "s.wav"),
                    "--set", "keys=2580", "--set", "sync_chirp=true"]) == 0
    for name in ("s.wav", "s.jsonl", "s.events.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    m = DatasetManifest.read(tmp_path / "a" / "s.jsonl")
    assert [k for _, k in m.entries[0].taps] == list("2580")


def test_training_is_deterministic(work, tmp_path):
    out = tmp_path / "again.model"
    assert run(["train-classifier", "--seed", "0", "--manifest", str(work / "train.jsonl"),
                "--out", str(out)]) == 0
    assert out.read_bytes() == (work / "clf.model").read_bytes()


def test_detect_classify_and_eval_detection(work, capsys):
    wav = str(work / "test_000.wav")
    cands = work / "cands.jsonl"
    assert run(["detect", "--wav", wav, "--model", str(work / "det.model"),
                "--out", str(cands)]) == 0
    recs = [json.loads(x) for x in cands.read_text().splitlines()]
    assert recs and all(0 <= r["p_tap"] <= 1 for r in recs)
    post = work / "post.jsonl"
    assert run(["classify", "--wav", wav, "--candidates", str(cands),
                "--model", str(work / "clf.model"), "--out", str(post)]) == 0
    rows = [json.loads(x) for x in post.read_text().splitlines()]
    assert len(rows) == len(recs)
    assert all(abs(sum(r["posterior"].values()) - 1) < 1e-9 for r in rows)
    assert all(len(r["top3"]) == 3 for r in rows)


def test_eval_detection_on_truth_is_perfect(work, capsys):
    m = DatasetManifest.read(work / "test.jsonl")
    perfect = work / "perfect.jsonl"
    lines = [json.dumps({"wav": e.wav, "time": f / 48000.0}) for e in m.entries for f, _ in e.taps]
    perfect.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert run(["eval", "--task", "detection", "--manifest", str(work / "test.jsonl"),
                "--candidates", str(perfect)]) == 0
    out = dict(line.split("\t") for line in capsys.readouterr().out.splitlines())
    assert out["precision"] == "1.000000" and out["recall"] == "1.000000"


def test_guess_pin_curve(work):
    args = ["guess-pin", "--manifest", str(work / "test.jsonl"), "--model",
            str(work / "clf.model"), "--detector", str(work / "det.model"), "--budget", "200"]
    a, b, ranks = work / "curve_a.tsv", work / "curve_b.tsv", work / "ranks.tsv"
    assert run(args + ["--out", str(a), "--ranks", str(ranks)]) == 0
    assert run(args + ["--out", str(b), "--parallel"]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = [line.split("\t") for line in a.read_text().splitlines()[1:]]
    frac = [float(f) for _, f in rows]
    assert len(frac) == 200 and all(y >= x for x, y in zip(frac, frac[1:]))
    assert len(ranks.read_text().splitlines()) == 5


def test_eval_classification_and_doa_and_snr(work, capsys):
    capsys.readouterr()
    assert run(["eval", "--task", "classification", "--manifest", str(work / "test.jsonl"),
                "--model", str(work / "clf.model")]) == 0
    out = capsys.readouterr().out
    top = {line.split("\t")[0]: float(line.split("\t")[1])
           for line in out.splitlines()[:3]}
    assert top["top1"] <= top["top2"] <= top["top3"]
    assert run(["doa", "--manifest", str(work / "test.jsonl")]) == 0
    assert "modal_center" in capsys.readouterr().out
    assert run(["snr", "--manifest", str(work / "test.jsonl")]) == 0
    assert len(capsys.readouterr().out.splitlines()) == 7


def test_label_command(tmp_path, capsys):
    assert run(["synth", "--seed", "3", "--out", str(tmp_path / "s.wav"),
                "--set", "sync_chirp=true", "--set", "keys=13579"]) == 0
    capsys.readouterr()
    assert run(["label", "--wav", str(tmp_path / "s.wav"), "--events",
                str(tmp_path / "s.events.txt"), "--out", str(tmp_path / "lab.jsonl")]) == 0
    assert "matched_fraction\t1.000000" in capsys.readouterr().out
    m = DatasetManifest.read(tmp_path / "lab.jsonl")
    assert [k for _, k in m.entries[0].taps] == list("13579")
    assert m.entries[0].label_source == "auto"
    # without the chirp labelling fails with exit 1
    assert run(["synth", "--seed", "3", "--out", str(tmp_path / "n.wav"),
                "--set", "keys=13579"]) == 0
    (tmp_path / "n.events.txt").write_text((tmp_path / "s.events.txt").read_text())
    assert run(["label", "--wav", str(tmp_path / "n.wav"), "--events",
                str(tmp_path / "n.events.txt")]) == 1


def test_exit_codes(tmp_path, capsys):
    assert run([]) == 2
    assert run(["synth", "--out", str(tmp_path / "x.wav")]) == 2
    assert run(["eval", "--sweep", "distance"]) == 2
    assert run(["detect", "--wav", str(tmp_path / "nope.wav")]) == 1
    assert run(["detect", "--wav", "x.wav", "--mics", "3"]) == 2
    assert run(["synth", "--seed", "1", "--out", str(tmp_path / "x.wav"),
                "--set", "bogus=1"]) == 1
    assert run(["eval", "--manifest", "x"]) == 1
    assert run(["selftest", "--seed", "0"]) == 0


def test_version(capsys):
    assert run(["--version"]) == 0
    assert "asca" in capsys.readouterr().out
