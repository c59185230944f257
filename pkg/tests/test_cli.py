import csv
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from spcdkit.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from spcdkit.imaging import load_image
from spcdkit.pipeline import load_manifest, sha256_file
from spcdkit.synthetic import generate_corpus

HEADER = "image_id,image_path,roi_x,roi_y,roi_w,roi_h,ischaemia,infection\n"

SMALL = {
    "magnification": {"factors": [1.25, 2.0], "output_size": 48},
    "spcd": {"k": 16},
    "transforms": [{"kind": "mirror"}, {"kind": "gaussian_noise"}],
    "model_params": {"n_trees": 5, "epochs": 5},
}


@pytest.fixture
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    generate_corpus(d, n_images=12, seed=1, size=96)
    return d / "manifest.csv"


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(SMALL))
    return p


def write_png(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


def write_manifest(d, rows):
    (d / "m.csv").write_text(HEADER + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return d / "m.csv"


def test_ingest_summary(tmp_path, capsys):
    write_png(tmp_path / "a.png", np.zeros((20, 20, 3)))
    write_png(tmp_path / "b.png", np.zeros((20, 20, 3)))
    m = write_manifest(tmp_path, [
        ("a", "a.png", 0, 0, 5, 5, 1, 0), ("a", "a.png", 5, 5, 5, 5, 1, 1),
        ("b", "b.png", 0, 0, 5, 5, 0, 0), ("b", "b.png", 2, 2, 5, 5, 0, 1),
    ])
    assert main(["ingest", str(m), "--json", str(tmp_path / "s.json")]) == EXIT_OK
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["ischaemia"]["present"] == {"cases": 1, "patches": 2}
    assert s["infection"]["present"] == {"cases": 2, "patches": 2}
    assert s["total"] == {"cases": 2, "patches": 4}
    assert "ischaemia" in capsys.readouterr().out


def test_ingest_roi_out_of_bounds_cites_row(tmp_path, capsys):
    write_png(tmp_path / "a.png", np.zeros((20, 20, 3)))
    m = write_manifest(tmp_path, [
        ("a", "a.png", 0, 0, 5, 5, 1, 0), ("a", "a.png", 5, 5, 5, 5, 0, 0),
        ("a", "a.png", 18, 0, 5, 5, 0, 0),
    ])
    assert main(["ingest", str(m)]) == EXIT_DATA
    assert "row 3" in capsys.readouterr().err


def test_ingest_duplicates_warn_and_dedupe(tmp_path, capsys):
    write_png(tmp_path / "a.png", np.zeros((20, 20, 3)))
    m = write_manifest(tmp_path, [
        ("a", "a.png", 0, 0, 5, 5, 1, 0), ("a", "a.png", 0, 0, 5, 5, 1, 0),
    ])
    assert main(["ingest", str(m)]) == EXIT_OK
    assert "duplicate" in capsys.readouterr().err
    assert len(load_manifest(m).records) == 1


def test_ingest_bad_label_and_missing_image(tmp_path):
    write_png(tmp_path / "a.png", np.zeros((20, 20, 3)))
    assert main(["ingest", str(write_manifest(tmp_path, [("a", "a.png", 0, 0, 5, 5, 2, 0)]))]) == EXIT_DATA
    assert main(["ingest", str(write_manifest(tmp_path, [("a", "x.png", 0, 0, 5, 5, 1, 0)]))]) == EXIT_DATA
    assert main(["ingest", str(tmp_path / "nope.csv")]) == EXIT_DATA


def test_augment_empty_manifest(tmp_path):
    m = tmp_path / "m.csv"
    m.write_text(HEADER)
    assert main(["augment", str(m), "--out", str(tmp_path / "out")]) == EXIT_DATA


def _checksums(d):
    return {p.name: sha256_file(p) for p in sorted(Path(d).glob("*.png"))}


def test_augment_replay_is_byte_identical(corpus, small_config, tmp_path):
    args = ["augment", str(corpus), "--config", str(small_config), "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert _checksums(tmp_path / "a") == _checksums(tmp_path / "b")
    for name in ("provenance.csv", "run_augment.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "run.log").exists()
    assert not (tmp_path / "a" / ".lock").exists()
    doc = json.loads((tmp_path / "a" / "run_augment.json").read_text())
    assert doc["seed"] == 3 and list(doc["inputs"].values()) == [sha256_file(corpus)]


def test_augment_seed_changes_stochastic_patches(corpus, small_config, tmp_path):
    base = ["augment", str(corpus), "--config", str(small_config)]
    main(base + ["--seed", "1", "--out", str(tmp_path / "a")])
    main(base + ["--seed", "2", "--out", str(tmp_path / "b")])
    a, b = _checksums(tmp_path / "a"), _checksums(tmp_path / "b")
    noisy = [n for n in a if "gaussian_noise" in n and n in b]
    assert noisy and any(a[n] != b[n] for n in noisy)


def test_augment_balances_two_vs_fourteen(tmp_path, capsys):
    rng = np.random.default_rng(0)
    rows = []
    for i in range(16):
        write_png(tmp_path / f"i{i}.png", rng.integers(0, 256, (40, 40, 3)))
        rows.append((f"i{i}", f"i{i}.png", 10, 10, 12, 12, int(i < 2), 0))
    m = write_manifest(tmp_path, rows)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"magnification": {"output_size": 32}}))
    assert main(["augment", str(m), "--out", str(tmp_path / "out"), "--config", str(cfg)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "ischaemia=0: 48 patches" in out and "ischaemia=1: 48 patches" in out
    with open(tmp_path / "out" / "provenance.csv") as fh:
        prov = list(csv.DictReader(fh))
    assert len(prov) == 96
    assert {r["source_id"] for r in prov} == {f"i{i}" for i in range(16)}


def test_locked_output_is_refused(corpus, tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / ".lock").write_text("123")
    assert main(["augment", str(corpus), "--out", str(out)]) == EXIT_DATA


def test_full_pipeline(corpus, small_config, tmp_path, capsys):
    patches = tmp_path / "patches"
    cfg = ["--config", str(small_config)]
    assert main(["augment", str(corpus), "--out", str(patches), "--balance", "none"] + cfg) == EXIT_OK
    assert main(["extract", str(patches), "--features", "spcd,color"] + cfg) == EXIT_OK
    feats = patches / "features.csv"
    header = feats.read_text().splitlines()[0].split(",")
    assert header[:2] == ["patch_id", "label"] and len(header) == 2 + 10 + 12
    assert main(["train", str(feats), "--out", str(tmp_path / "models"), "--model", "nb,rf"] + cfg) == EXIT_OK
    assert (tmp_path / "models" / "nb.spcdmodel").exists()
    assert (tmp_path / "models" / "rf.spcdmodel").exists()
    for run in ("r1", "r2"):
        assert main(["evaluate", str(feats), "--out", str(tmp_path / run), "--model", "nb,rf,mlp",
                     "--folds", "3"] + cfg) == EXIT_OK
    agg = (tmp_path / "r1" / "aggregate.csv").read_text().splitlines()
    assert len(agg) == 1 + 3 * 7
    for name in ("metrics.csv", "aggregate.csv", "roc.csv", "summary.txt", "run_evaluate.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_unknown_model_is_usage_error(tmp_path, capsys):
    f = tmp_path / "features.csv"
    f.write_text("patch_id,label,x\n")
    assert main(["evaluate", str(f), "--out", str(tmp_path / "o"), "--model", "svm"]) == EXIT_USAGE
    assert "svm" in capsys.readouterr().err


def test_unknown_model_in_config_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"models": ["nb", "bayesnet"]}))
    f = tmp_path / "features.csv"
    f.write_text("patch_id,label,x\n")
    assert main(["train", str(f), "--out", str(tmp_path / "o"), "--config", str(cfg)]) == EXIT_USAGE


def test_missing_features_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "features.csv"
    assert main(["train", str(missing), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert str(missing) in capsys.readouterr().err


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["augment"])
    assert exc.value.code == EXIT_USAGE


def test_debug_superpixels_half_red_black(tmp_path, capsys):
    px = np.zeros((64, 64, 3), dtype=np.uint8)
    px[:, :32, 0] = 230
    px[:, :32, 1:] = 13
    px[:, 32:] = 13
    write_png(tmp_path / "h.png", px)
    prefix = tmp_path / "dbg" / "h"
    assert main(["debug-superpixels", str(tmp_path / "h.png"), "--out", str(prefix), "--k", "16"]) == EXIT_OK
    mask = load_image(str(prefix) + "_mask.png").pixels
    assert np.all(mask[:, :32] == (1.0, 0.0, 0.0))
    assert np.all(mask[:, 32:] == (0.0, 0.0, 1.0))
    for suffix in ("_painted.png", "_boundaries.png"):
        assert Path(str(prefix) + suffix).exists()


def test_debug_superpixels_k1_is_uniform(tmp_path):
    write_png(tmp_path / "r.png", np.random.default_rng(0).integers(0, 256, (24, 24, 3)))
    prefix = tmp_path / "r"
    assert main(["debug-superpixels", str(tmp_path / "r.png"), "--out", str(prefix), "--k", "1"]) == EXIT_OK
    painted = load_image(str(prefix) + "_painted.png").pixels
    assert np.all(painted == painted[0, 0])


def test_debug_superpixels_missing_image(tmp_path):
    assert main(["debug-superpixels", str(tmp_path / "no.png"), "--out", str(tmp_path / "x")]) == EXIT_DATA


def test_augment_explicit_balance_target(tmp_path, capsys):
    rng = np.random.default_rng(0)
    rows = []
    for i in range(16):
        write_png(tmp_path / f"i{i}.png", rng.integers(0, 256, (40, 40, 3)))
        rows.append((f"i{i}", f"i{i}.png", 10, 10, 12, 12, int(i < 2), 0))
    m = write_manifest(tmp_path, rows)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"magnification": {"output_size": 32}, "balance_target": 16,
                               "transforms": [{"kind": "mirror"}, {"kind": "contrast"}]}))
    assert main(["augment", str(m), "--out", str(tmp_path / "out"), "--config", str(cfg)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "ischaemia=0: 16 patches" in out and "ischaemia=1: 16 patches" in out
    cfg.write_text(json.dumps({"balance_target": 10 ** 6}))
    assert main(["augment", str(m), "--out", str(tmp_path / "o2"), "--config", str(cfg)]) == EXIT_DATA
