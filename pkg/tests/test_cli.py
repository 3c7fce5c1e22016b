import json
import subprocess
import sys

import numpy as np
import pytest

from refsteg import Corpus, load_bundle, random_model, save_model
from refsteg.cli import main
from refsteg.fixtures import SECOND_MESSAGE


@pytest.fixture
def knife(tmp_path):
    p = tmp_path / "msg.txt"
    p.write_bytes(b"knife")
    return p


def test_hide_extract_experiment1(tmp_path, exp1_files, knife, capsys):
    carrier, model = exp1_files
    bundle = tmp_path / "b.json"
    assert main(["hide", "--message", str(knife), "--carrier", str(carrier), "--model", str(model), "-o", str(bundle)]) == 0
    out = capsys.readouterr().out
    assert "sets=1 chunks=1 verification_m=5" in out
    d = json.loads(bundle.read_text())
    assert d["sets"][0]["difference"] == [-5, -1, -11, 58, 69]
    rec = tmp_path / "out.txt"
    assert main(["extract", "--bundle", str(bundle), "-o", str(rec)]) == 0
    assert rec.read_bytes() == b"knife"
    assert "set 0 passed verification" in capsys.readouterr().out


def test_cli_matches_library(tmp_path, exp1_files, knife, exp1):
    from refsteg import hide
    from refsteg.carrier import CarrierResolver, file_location

    carrier, model = exp1_files
    bundle = tmp_path / "b.json"
    main(["hide", "--message", str(knife), "--carrier", str(carrier), "--model", str(model), "-o", str(bundle)])
    lib = hide(b"knife", CarrierResolver().resolve(file_location(carrier)), exp1[1])
    assert load_bundle(bundle).sets[0] == lib


def test_missing_model_flag_is_usage_error(tmp_path, knife, capsys):
    assert_exit(["hide", "--message", str(knife), "--carrier", "x", "-o", str(tmp_path / "b")], 1)
    assert "usage" in capsys.readouterr().err


def assert_exit(argv, code):
    try:
        rc = main(argv)
    except SystemExit as exc:
        rc = exc.code
    assert rc == code


def test_all_mutated_carriers_exit_2(tmp_path, rng, capsys):
    msg = tmp_path / "m"
    msg.write_bytes(b"meet me by the old oak")
    args = ["hide", "--message", str(msg), "--redundancy", "3", "-o", str(tmp_path / "b.json")]
    for i in range(3):
        c = tmp_path / f"c{i}"
        c.write_bytes(rng.integers(0, 256, 2000, dtype=np.uint8).tobytes())
        mp = tmp_path / f"m{i}.bshm"
        save_model(random_model(rng, 64), mp)
        args += ["--carrier", str(c), "--model", str(mp)]
    assert main(args) == 0
    for i in range(3):
        (tmp_path / f"c{i}").write_bytes(rng.integers(0, 256, 2000, dtype=np.uint8).tobytes())
    assert main(["extract", "--bundle", str(tmp_path / "b.json"), "-o", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert all(f"set {i}:" in err for i in range(3))


def test_missing_carrier_exit_3(tmp_path, exp1_files, knife):
    carrier, model = exp1_files
    bundle = tmp_path / "b.json"
    main(["hide", "--message", str(knife), "--carrier", str(carrier), "--model", str(model), "-o", str(bundle)])
    carrier.unlink()
    assert main(["extract", "--bundle", str(bundle), "-o", str(tmp_path / "o")]) == 3
    assert main(["hide", "--message", str(knife), "--carrier", str(carrier), "--model", str(model),
                 "-o", str(bundle)]) == 3


def test_package_and_extract_from_channels(tmp_path, exp1_files, knife, capsys):
    carrier, model = exp1_files
    bundle = tmp_path / "b.json"
    main(["hide", "--message", str(knife), "--carrier", str(carrier), "--model", str(model), "-o", str(bundle)])
    out_dir = tmp_path / "ch"
    assert main(["package", "--bundle", str(bundle), "--out-dir", str(out_dir)]) == 0
    files = {n: str(out_dir / f"{n}.json") for n in ("locations", "differences", "models")}
    rec = tmp_path / "r"
    assert main(["extract", "--locations", files["locations"], "--differences", files["differences"],
                 "--models", files["models"], "-o", str(rec)]) == 0
    assert rec.read_bytes() == b"knife"
    assert main(["extract", "--locations", files["locations"], "--differences", files["differences"],
                 "-o", str(rec)]) == 1
    assert main(["package", "--bundle", str(tmp_path / "nope.json"), "--out-dir", str(out_dir)]) == 1


def test_corpus_commands(tmp_path, capsys):
    f = tmp_path / "x.bin"
    f.write_bytes(b"abc" * 100)
    corpus = str(tmp_path / "corpus")
    main(["corpus", "--corpus", corpus, "add", str(f)])
    main(["corpus", "--corpus", corpus, "add", str(f)])
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split()[0] == lines[1].split()[0]
    main(["corpus", "--corpus", corpus, "list"])
    assert len(capsys.readouterr().out.splitlines()) == 1


def test_auto_select_parallel_roundtrip(tmp_path, rng):
    corpus = Corpus(tmp_path / "corpus")
    for _ in range(3):
        corpus.add(rng.integers(0, 256, 8000, dtype=np.uint8).tobytes())
    msg = tmp_path / "m"
    msg.write_text(SECOND_MESSAGE)
    mp = tmp_path / "model.bshm"
    save_model(random_model(rng, 32), mp)
    bundle = tmp_path / "b.json"
    assert main(["hide", "--message", str(msg), "--auto-select", "--corpus", str(corpus.root),
                 "--block-size", "512", "--seed", "1", "--model", str(mp), "--workers", "4",
                 "-o", str(bundle)]) == 0
    assert load_bundle(bundle).plan.P == 3
    out = tmp_path / "o"
    assert main(["extract", "--bundle", str(bundle), "--corpus", str(corpus.root), "--workers", "4",
                 "-o", str(out)]) == 0
    assert out.read_text() == SECOND_MESSAGE


def test_reference_model(tmp_path, exp1_files, knife):
    carrier, model = exp1_files
    bundle = tmp_path / "b.json"
    assert main(["hide", "--message", str(knife), "--carrier", str(carrier), "--model", str(model),
                 "--reference-model", "-o", str(bundle)]) == 0
    assert "embedded" not in bundle.read_text()
    assert main(["extract", "--bundle", str(bundle), "-o", str(tmp_path / "o")]) == 0


def _dataset(root, rng, n=8, out_len=4):
    root.mkdir()
    for i in range(n):
        (root / f"s{i}.in").write_bytes(rng.integers(0, 256, 500, dtype=np.uint8).tobytes())
        (root / f"s{i}.out").write_bytes(rng.integers(0, 256, out_len, dtype=np.uint8).tobytes())


def test_train_commands(tmp_path, rng, capsys):
    ds = tmp_path / "ds"
    _dataset(ds, rng)
    m0 = tmp_path / "m0.bshm"
    assert main(["train", "--dataset", str(ds), "--epochs", "0", "-o", str(m0)]) == 0
    assert m0.read_bytes()[:4] == b"BSHM"
    capsys.readouterr()
    assert main(["train", "--dataset", str(ds), "--epochs", "100", "--hidden", "8", "-o", str(tmp_path / "m.bshm")]) == 0
    out = capsys.readouterr().out
    init, final = (float(tok.split("=")[1]) for tok in out.split()[:2])
    assert final < init
    (tmp_path / "empty").mkdir()
    assert main(["train", "--dataset", str(tmp_path / "empty"), "-o", str(tmp_path / "x")]) == 1


def test_train_label_head(tmp_path, rng):
    ds = tmp_path / "ds"
    ds.mkdir()
    labels = ["oak", "pine"]
    for i in range(4):
        (ds / f"s{i}.in").write_bytes(rng.integers(0, 256, 300, dtype=np.uint8).tobytes())
        (ds / f"s{i}.out").write_text(labels[i % 2] + "\n")
    (tmp_path / "labels.txt").write_text("\n".join(labels))
    assert main(["train", "--dataset", str(ds), "--labels", str(tmp_path / "labels.txt"),
                 "--epochs", "5", "-o", str(tmp_path / "m.bshm")]) == 0


def test_module_entry_point(tmp_path, exp1_files, knife):
    carrier, model = exp1_files
    bundle = tmp_path / "b.json"
    run = lambda *a: subprocess.run([sys.executable, "-m", "refsteg", *a], capture_output=True, text=True)
    r = run("-v", "hide", "--message", str(knife), "--carrier", str(carrier), "--model", str(model), "-o", str(bundle))
    assert r.returncode == 0, r.stderr
    assert "hide took" in r.stderr
    r = run("extract", "--bundle", str(bundle), "-o", str(tmp_path / "o"))
    assert r.returncode == 0 and (tmp_path / "o").read_bytes() == b"knife"
    assert run("bogus").returncode == 1
