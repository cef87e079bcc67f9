import json

import numpy as np
import pytest

from grainpipe import cli
from grainpipe.gridfind import GridModel
from grainpipe.kernelproc import Spectrum
from grainpipe.pixcodec import ImageCube, read_cube, write_cube
from conftest import tree_digest


@pytest.fixture(scope="module")
def data(synth_manifest):
    return synth_manifest.parent


def test_run_twice_is_byte_identical(synth_manifest, tmp_path):
    assert cli.main(["run", str(synth_manifest), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", str(synth_manifest), "--out", str(tmp_path / "b")]) == 0
    a, b = tree_digest(tmp_path / "a"), tree_digest(tmp_path / "b")
    assert a == b
    assert "dish01/day1/grid_hsi.json" in a
    assert sum(k.startswith("dish01/day0/spectra/") and k.endswith(".csv") for k in a) == 25
    cfg = json.loads((tmp_path / "a" / "config.json").read_text())
    assert cfg["seed"] == 0


def test_failed_dish_is_quarantined(synth_manifest, tmp_path):
    doc = json.loads(synth_manifest.read_text())
    blank = write_cube(ImageCube(np.full((300, 400, 3), 60, np.uint8)), tmp_path / "blank")
    doc["dishes"].append({"dish_id": "broken", "reference": {"rgb_frame": str(blank)}, "days": []})
    doc["dishes"] = doc["dishes"][::-1]
    for d in doc["dishes"][1]["days"]:
        for k in ("rgb_frame", "hsi_frame", "dark_frame"):
            d[k] = str(synth_manifest.parent / d[k])
    doc["dishes"][1]["reference"]["rgb_frame"] = str(synth_manifest.parent / doc["dishes"][1]["reference"]["rgb_frame"])
    doc["dishes"][1]["days"] = doc["dishes"][1]["days"][:1]
    man = tmp_path / "m.json"
    man.write_text(json.dumps(doc))
    assert cli.main(["run", str(man), "--out", str(tmp_path / "o")]) == 1
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["failed_dishes"] == ["broken"]
    assert [r["status"] for r in report["dishes"]] == ["failed", "ok"]
    assert (tmp_path / "o" / "dish01" / "day0" / "grid_rgb.json").exists()


def test_single_verbs_chain(data, tmp_path):
    grid = tmp_path / "grid.json"
    assert cli.main(["detect-grid", str(data / "dish01/reference_rgb.cube.json"), "--out", str(grid),
                     "--dish-id", "dish01", "--set", "grid.rho_tol=9"]) == 0
    g = GridModel.load(grid)
    assert g.dish_id == "dish01" and g.meta["config"]["grid"]["rho_tol"] == 9
    assert cli.main(["localize", "--grid", str(grid), "--rgb", str(data / "dish01/day1_rgb"),
                     "--hsi", str(data / "dish01/day1_hsi"), "--dark", str(data / "dish01/day1_dark"),
                     "--out", str(tmp_path / "loc")]) == 0
    assert (tmp_path / "loc/grid_hsi.json").exists()
    assert cli.main(["extract", "--grid", str(tmp_path / "loc/grid_hsi.json"), "--frame", str(data / "dish01/day1_hsi"),
                     "--dark", str(data / "dish01/day1_dark"), "--day", "1", "--out", str(tmp_path / "cells")]) == 0
    cells = sorted(str(p) for p in (tmp_path / "cells").glob("*.cube.json"))
    assert len(cells) == 25
    assert cli.main(["segment", *cells, "--out", str(tmp_path / "masks")]) == 0
    assert cli.main(["spectra", *cells, "--masks", str(tmp_path / "masks"), "--dish", "dish01", "--day", "1",
                     "--out", str(tmp_path / "spectra")]) == 0
    s = Spectrum.from_csv(tmp_path / "spectra/cell_2_2.csv")
    assert len(s.values) == 10 and np.isfinite(s.values).all()


def test_convert(tmp_path):
    data = np.random.default_rng(0).integers(0, 4096, (3, 4, 5)).astype(np.uint16)
    write_cube(ImageCube(data, "HSI", 12), tmp_path / "a")
    assert cli.main(["convert", "--to", "u16", str(tmp_path / "a"), str(tmp_path / "b")]) == 0
    np.testing.assert_array_equal(read_cube(tmp_path / "b").data, data)


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GRAINPIPE_SEED", "23")
    assert cli.main(["synth", "--out", str(tmp_path), "--channels", "24"]) == 0
    assert json.loads((tmp_path / "spec.json").read_text())["seed"] == 23


def test_usage_errors(tmp_path, capsys):
    assert cli.main(["detect-grid", str(tmp_path / "nope"), "--out", str(tmp_path / "g.json")]) == 2
    assert cli.main(["convert", "--to", "u16", "a", "b", "--set", "grid.nope=1"]) == 2
    assert cli.main(["validate-dataset", str(tmp_path / "missing")]) == 2
    (tmp_path / "bad.json").write_text("{")
    assert cli.main(["run", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["frobnicate"])
    assert info.value.code == 2
    assert "no such file" in capsys.readouterr().err


def test_pipeline_error_exit_code(tmp_path):
    write_cube(ImageCube(np.full((200, 300, 3), 60, np.uint8)), tmp_path / "flat")
    assert cli.main(["detect-grid", str(tmp_path / "flat"), "--out", str(tmp_path / "g.json")]) == 1


def test_validate_dataset_exit_codes(tmp_path):
    kdir = tmp_path / "V" / "d0" / "k0"
    kdir.mkdir(parents=True)
    for s in range(6):
        for m in ("rgb", "hsi"):
            (kdir / f"day{s}_{m}.raw").write_text("")
    (tmp_path / "exp.json").write_text(json.dumps({"kernels": 1, "dishes": 1}))
    assert cli.main(["validate-dataset", str(tmp_path), "--expected", str(tmp_path / "exp.json"),
                     "--report", str(tmp_path / "r.json")]) == 0
    assert json.loads((tmp_path / "r.json").read_text())["ok"] is True
    assert cli.main(["validate-dataset", str(tmp_path)]) == 1
