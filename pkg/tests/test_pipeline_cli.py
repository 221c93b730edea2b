import json
import shutil
from importlib import resources
from pathlib import Path

import numpy as np
import pytest
import yaml

from mmpoint import __version__
from mmpoint.cli import main
from mmpoint.errors import SchemaError
from mmpoint.io import read_pgm, sha256_file, write_pgm
from mmpoint.metrics import Region2D, rasterize
from mmpoint.pipeline import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, load_run_config, max_workers, run_pipeline

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden_manifest.sha256"

SCENE = {
    "frame_interval_s": 0.05,
    "n_frames": 2,
    "scatterers": [{"pos": [1.0, 15.0, 0.5], "vel": [0.0, -3.0, 0.0], "rcs": 2.0, "label": "pedestrian"}],
    "distributed": [
        {"center": [-1.0, 25.0, 0.6], "extent": [1.8, 4.5, 1.4], "label": "car", "rcs_total": 20, "vel": [0, -6, 0]},
        {"center": [-5.0, 20.0, 0.1], "extent": [0.3, 16.0, 0.2], "label": "roadside", "rcs_total": 16, "n_points": 32},
    ],
}
RADAR = {"n_chirps": 16, "ta": 16 * 12 * 6.4e-6}


def make_config(tmp_path, **overrides):
    (tmp_path / "scene.yaml").write_text(yaml.safe_dump(overrides.pop("scene", SCENE)))
    doc = {"scene": "scene.yaml", "layout": "default", "seed": 3, "noise_power": 1e-6, "radar": RADAR,
           "output_dir": str(tmp_path / "out"), "products": ["rdm", "ram", "cloud", "ply", "clusters", "metrics"],
           "overlay_window": 2, "clustering": {"min_pts_spatial": 3, "tag_mode": True}}
    doc.update(overrides)
    doc = {k: v for k, v in doc.items() if v is not None}
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    result = run_pipeline(load_run_config(make_config(tmp)))
    return tmp, result


def test_products_and_manifest(small_run):
    tmp, result = small_run
    assert result.status == EXIT_OK
    m = json.loads(result.manifest_path.read_text())
    assert m["version"] == __version__ and m["status"] == "ok"
    names = [o["path"] for o in m["outputs"]]
    assert names == sorted(names)
    for want in ("cloud.csv", "cloud.ply", "clusters.jsonl", "metrics.json", "rdm_0000.pgm", "ram_xy_0001.pgm.json"):
        assert want in names
    for o in m["outputs"]:
        assert sha256_file(tmp / "out" / o["path"]) == o["sha256"]
    assert set(p.name for p in (tmp / "out").iterdir()) == set(names) | {"manifest.json"}
    assert m["config"]["seed"] == 3 and "scene_sha256" in m["config"]
    assert str(tmp) not in result.manifest_path.read_text()


def test_metrics_report(small_run):
    tmp, _ = small_run
    report = json.loads((tmp / "out" / "metrics.json").read_text())
    assert len(report["points_per_frame"]) == 2 and min(report["points_per_frame"]) > 0
    assert report["n_clusters"] == len(report["cluster_sizes"]) >= 1
    (road,) = report["roadside_iou"]
    assert road["iou"] >= 0.9


def test_rerun_is_byte_identical(small_run, tmp_path):
    tmp, first = small_run
    cfg = load_run_config(tmp / "run.yaml", output_dir=tmp_path / "again")
    again = run_pipeline(cfg)
    assert (tmp_path / "again" / "cloud.csv").read_bytes() == (tmp / "out" / "cloud.csv").read_bytes()
    assert again.manifest_sha256 == first.manifest_sha256


def test_thread_cap_does_not_change_outputs(small_run, tmp_path, monkeypatch):
    tmp, first = small_run
    monkeypatch.setenv("MMPOINT_THREADS", "1")
    assert max_workers() == 1
    again = run_pipeline(load_run_config(tmp / "run.yaml", output_dir=tmp_path / "serial"))
    assert again.manifest_sha256 == first.manifest_sha256


def test_manifest_only(tmp_path):
    result = run_pipeline(load_run_config(make_config(tmp_path, products=[])))
    assert result.status == EXIT_OK and result.manifest["outputs"] == []
    assert [p.name for p in (tmp_path / "out").iterdir()] == ["manifest.json"]


def test_stage_failure_cleans_up(tmp_path):
    far = dict(SCENE, scatterers=SCENE["scatterers"] + [{"pos": [0, 400, 0], "rcs": 1}])
    result = run_pipeline(load_run_config(make_config(tmp_path, scene=far)))
    assert result.status == EXIT_STAGE
    assert result.manifest["failed_stage"] == "frame" and "beat frequency" in result.manifest["error"]
    assert [p.name for p in (tmp_path / "out").iterdir()] == ["manifest.json"]


def test_config_errors(tmp_path):
    with pytest.raises(SchemaError, match="seed"):
        load_run_config(make_config(tmp_path, seed=None))
    with pytest.raises(SchemaError, match="unknown key"):
        load_run_config(make_config(tmp_path, colour="red"))
    with pytest.raises(SchemaError, match="products"):
        load_run_config(make_config(tmp_path, products=["pictures"]))
    with pytest.raises(SchemaError, match="layout"):
        load_run_config(make_config(tmp_path, layout="missing.yaml"))
    with pytest.raises(SchemaError, match="rcs"):
        load_run_config(make_config(tmp_path, scene={"frame_interval_s": 0.1, "n_frames": 1,
                                                      "scatterers": [{"pos": [0, 5, 0], "rcs": -1}]}))


def test_overrides(tmp_path):
    cfg = load_run_config(make_config(tmp_path), seed=11, output_dir=tmp_path / "x", products="cloud, metrics")
    assert cfg.seed == 11 and cfg.output_dir == tmp_path / "x" and cfg.products == ("cloud", "metrics")


def test_cli_run_and_exit_codes(tmp_path, capsys):
    path = make_config(tmp_path, products=["cloud"])
    assert main(["run", str(path), "--out", str(tmp_path / "cli")]) == EXIT_OK
    assert "sha256=" in capsys.readouterr().out
    assert (tmp_path / "cli" / "cloud.csv").exists()
    assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
    assert main(["run", str(make_config(tmp_path, seed=None))]) == EXIT_CONFIG
    assert main(["run", str(path), "--seed", "4", "--products", ""]) == EXIT_OK
    far = dict(SCENE, scatterers=[{"pos": [0, 400, 0], "rcs": 1}])
    assert main(["run", str(make_config(tmp_path, scene=far))]) == EXIT_STAGE


def test_cli_version(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0 and __version__ in capsys.readouterr().out


def test_cli_afm(tmp_path, capsys):
    layout = resources.files("mmpoint.data").joinpath("default_layout.yaml")
    assert main(["afm", str(layout), "--out", str(tmp_path / "afm.pgm")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["elements"] == 192 and 0.7 <= report["az_res_deg"] <= 1.3 and 3.5 <= report["el_res_deg"] <= 6.5
    values, meta = read_pgm(tmp_path / "afm.pgm")
    assert values.max() == pytest.approx(1.0, abs=1e-4) and len(meta["axes"]["az_rad"]) == values.shape[1]
    (tmp_path / "bad.yaml").write_text("tx: [[0, 0]]\n")
    assert main(["afm", str(tmp_path / "bad.yaml")]) == EXIT_CONFIG
    # two elements: the mainlobe overflows the analysis cuts
    (tmp_path / "tiny.yaml").write_text("tx: [[0, 0]]\nrx: [[0, 0], [1, 0]]\n")
    assert main(["afm", str(tmp_path / "tiny.yaml")]) == EXIT_STAGE


def _mask_files(tmp_path, ram_xy):
    _, meta = read_pgm(ram_xy)
    x, y = np.array(meta["axes"]["x_m"]), np.array(meta["axes"]["y_m"])
    region = Region2D.box(-5.15, 12.0, -4.85, 28.0)
    truth = rasterize(region, x, y).values
    write_pgm(tmp_path / "truth.pgm", truth)
    shifted = rasterize(Region2D.box(-5.15, 16.0, -4.85, 32.0), x, y).values
    write_pgm(tmp_path / "shifted.pgm", shifted)
    (tmp_path / "regions.yaml").write_text(yaml.safe_dump({"regions": [{"name": "curb", "box": [-5.15, 12.0, -4.85, 28.0]}]}))
    return truth, shifted


def test_eval_masks(small_run, tmp_path, capsys):
    tmp, _ = small_run
    ram = tmp / "out" / "ram_xy_0000.pgm"
    truth, shifted = _mask_files(tmp_path, ram)
    assert main(["eval-masks", str(ram), str(tmp_path / "truth.pgm"), str(tmp_path / "truth.pgm")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["overall_iou"] == 1.0
    assert main(["eval-masks", str(ram), str(tmp_path / "shifted.pgm"), str(tmp_path / "truth.pgm"),
                 "--out", str(tmp_path / "r.json")]) == EXIT_OK
    got = json.loads((tmp_path / "r.json").read_text())["overall_iou"]
    inter = np.count_nonzero((truth > 0.5) & (shifted > 0.5))
    union = np.count_nonzero((truth > 0.5) | (shifted > 0.5))
    assert got == inter / union
    assert got == pytest.approx(12.0 / 20.0, abs=0.02)  # 16 m boxes overlapping by 12 m
    capsys.readouterr()
    assert main(["eval-masks", str(ram), str(tmp_path / "truth.pgm"), str(tmp_path / "regions.yaml")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["overall_iou"] == 1.0 and report["regions"][0]["iou"] == 1.0


def test_eval_masks_errors(small_run, tmp_path):
    tmp, _ = small_run
    ram = tmp / "out" / "ram_xy_0000.pgm"
    write_pgm(tmp_path / "small.pgm", np.ones((3, 3)))
    assert main(["eval-masks", str(ram), str(tmp_path / "small.pgm"), str(tmp_path / "small.pgm")]) == EXIT_STAGE
    assert main(["eval-masks", str(ram), str(tmp_path / "missing.pgm"), str(tmp_path / "small.pgm")]) == EXIT_CONFIG


def test_demo_matches_golden(tmp_path):
    config = Path(str(resources.files("mmpoint.data").joinpath("demo_run.yaml")))
    result = run_pipeline(load_run_config(config, output_dir=tmp_path / "demo"))
    assert result.status == EXIT_OK
    assert result.manifest_sha256 == GOLDEN.read_text().split()[0]
