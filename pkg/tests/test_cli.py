import json

import numpy as np
import pytest

from sarannot.cli import main
from sarannot.fileio import read_mask, write_mask_pgm

SMALL = ["--set", "tomosim.density_ground=0.2", "--set", "tomosim.density_roof=0.5",
         "--set", "tomosim.density_facade=0.3"]


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path / "out")])


def meta(tmp_path):
    return json.loads((tmp_path / "out" / "run_meta.json").read_text())


def test_identical_masks_evaluate_perfectly(tmp_path):
    m = np.zeros((10, 12), bool)
    m[2:6, 3:9] = True
    write_mask_pgm(tmp_path / "a.pgm", m)
    assert run(tmp_path, "evaluate", "--pred", str(tmp_path / "a.pgm"), "--ref", str(tmp_path / "a.pgm")) == 0
    rep = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert rep["pa"] == 100.0 and rep["far"] == 0.0 and rep["tp"] == 24


def test_counts_mode(tmp_path):
    assert run(tmp_path, "evaluate", "--counts", "5614059,1191211,1573086,12408130") == 0
    rep = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert abs(rep["precision"] - 82.49) <= 0.01 and abs(rep["recall"] - 78.11) <= 0.01
    assert "precision" in (tmp_path / "out" / "metrics.txt").read_text()


def test_error_exit_codes(tmp_path, capsys):
    assert run(tmp_path, "evaluate", "--pred", "nope.pgm", "--ref", "nope.pgm") == 1
    assert "stage 'config'" in capsys.readouterr().err
    assert run(tmp_path, "simulate") == 1
    assert "seed" in capsys.readouterr().err
    assert run(tmp_path, "simulate", "--seed", "1", "--set", "bogus.key=1") == 1
    assert run(tmp_path, "evaluate", "--counts", "1,2,3") == 1
    assert not (tmp_path / "out" / "run_meta.json").exists()


def test_simulate_label_evaluate_pipeline(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--seed", "3", "--out", str(sim)]) == 0
    lab = tmp_path / "lab"
    assert main(["label", "--cloud", str(sim / "cloud.csv"), "--footprints", str(sim / "footprints.geojson"),
                 "--geometry", str(sim / "geometry.json"), "--out", str(lab)]) == 0
    mask, oracle = read_mask(lab / "mask.pgm"), read_mask(sim / "roof_oracle.pgm")
    assert mask.shape == oracle.shape
    ev = tmp_path / "ev"
    assert main(["evaluate", "--pred", str(lab / "mask.pgm"), "--ref", str(sim / "roof_oracle.pgm"),
                 "--out", str(ev)]) == 0
    rep = json.loads((ev / "metrics.json").read_text())
    iu = 100.0 * rep["tp"] / (rep["tp"] + rep["fp"] + rep["fn"])
    assert iu >= 90.0
    m = json.loads((lab / "run_meta.json").read_text())
    assert m["command"] == "label" and len(m["inputs"]) == 3


def test_run_meta_contents(tmp_path):
    assert run(tmp_path, "simulate", "--seed", "7", *SMALL, "--threads", "2") == 0
    m = meta(tmp_path)
    assert m["seed"] == 7 and m["config"]["run"]["seed"] == 7
    assert m["config"]["tomosim"]["density_roof"] == 0.5
    assert len(m["config_hash"]) == 64
    assert "cloud.csv" in m["outputs"] and "threads" not in json.dumps(m)
    assert set(m["versions"]) == {"sarannot", "numpy", "scipy", "python"}


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("run.seed = 4\ntomosim.density_roof = 0.4  # sparse\n")
    assert run(tmp_path, "simulate", "--config", str(cfg), "--seed", "9", *SMALL[:2]) == 0
    m = meta(tmp_path)
    assert m["seed"] == 9 and m["config"]["tomosim"]["density_roof"] == 0.4


def test_coregister_command(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--seed", "2", *SMALL, "--out", str(sim)]) == 0
    assert main(["coregister", "--tomo", str(sim / "cloud.csv"), "--optical", str(sim / "cloud.csv"),
                 "--out", str(tmp_path / "out")]) == 0
    t = json.loads((tmp_path / "out" / "transform.json").read_text())
    assert np.allclose(np.asarray(t["rotation"]), np.eye(3), atol=1e-6)
    assert np.allclose(t["translation"], 0.0, atol=1e-6)


@pytest.mark.parametrize("bad", ["0", "-2"])
def test_thread_count_must_be_positive(tmp_path, bad):
    assert run(tmp_path, "evaluate", "--counts", "1,2,3,4", "--threads", bad) == 1
