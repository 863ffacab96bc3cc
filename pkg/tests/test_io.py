import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarannot import parallel
from sarannot.cloud import PointClass, PointCloud, format_csv, parse_csv, read_csv, write_csv
from sarannot.config import ConfigError, RunConfig, parse_value
from sarannot.fileio import (GridFrame, atomic_write_bytes, decode_pgm, decode_unary, dumps_json, encode_pgm,
                             encode_unary, format_georef, parse_georef, read_image, read_label_raster, read_mask,
                             unary_from_probabilities, write_mask_pgm, write_pgm)


def test_csv_round_trip(tmp_path, rng):
    c = PointCloud(rng.uniform(-1e3, 1e3, (20, 3)).round(6), rng.uniform(0, 5, 20).round(6),
                   rng.integers(0, 5, 20))
    write_csv(tmp_path / "c.csv", c)
    back = read_csv(tmp_path / "c.csv")
    assert np.array_equal(back.xyz, c.xyz) and np.array_equal(back.amplitude, c.amplitude)
    assert np.array_equal(back.cls, c.cls)
    assert format_csv(PointCloud([[1, 2, 3]])) == "easting,northing,height\n1.000000,2.000000,3.000000\n"
    assert parse_csv("easting,northing,height,class\n0,0,0,roof\n0,0,0,2\n").cls.tolist() == [
        PointClass.ROOF, PointClass(2)]
    for bad in ("", "x,y,z\n", "easting,northing,height\n1,2\n"):
        with pytest.raises(ValueError):
            parse_csv(bad)


def test_cloud_validation():
    with pytest.raises(ValueError):
        PointCloud([[0, 0, np.nan]])
    with pytest.raises(ValueError):
        PointCloud(np.zeros((2, 3)), cls=[1])
    assert len(PointCloud.concatenate([PointCloud.empty(), PointCloud([[1, 2, 3]])])) == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 10**6))
def test_pgm_round_trip(h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (h, w))
    assert np.array_equal(decode_pgm(encode_pgm(img)), img)


def test_pgm_details(tmp_path):
    with_comment = b"P5\n# made by hand\n2 1\n255\n" + bytes([7, 9])
    assert decode_pgm(with_comment).tolist() == [[7, 9]]
    for bad in (b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\x00"):
        with pytest.raises(ValueError):
            decode_pgm(bad)
    with pytest.raises(ValueError):
        encode_pgm(np.array([[300]]))
    write_mask_pgm(tmp_path / "m.pgm", np.array([[0, 3], [1, 0]]))
    assert read_image(tmp_path / "m.pgm").tolist() == [[0, 255], [255, 0]]
    assert read_mask(tmp_path / "m.pgm").tolist() == [[0, 1], [1, 0]]


def test_png_reader(tmp_path):
    from PIL import Image

    arr = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    Image.fromarray(arr).save(tmp_path / "a.png")
    assert np.array_equal(read_image(tmp_path / "a.png"), arr)


def test_georef_round_trip_and_label_raster(tmp_path):
    f = GridFrame(123.5, 456.25, 0.5, 3, 4)
    assert parse_georef(format_georef(f)) == f
    assert parse_georef("123.5 456.25\n0.5 3 4\n") == f
    with pytest.raises(ValueError):
        parse_georef("cell_size = 1\n")
    write_pgm(tmp_path / "l.pgm", np.zeros((3, 4), int))
    (tmp_path / "l.pgm.georef").write_text(format_georef(f))
    img, frame = read_label_raster(tmp_path / "l.pgm")
    assert img.shape == (3, 4) and frame == f
    (tmp_path / "l.pgm.georef").write_text(format_georef(GridFrame(0, 0, 1, 2, 2)))
    with pytest.raises(ValueError):
        read_label_raster(tmp_path / "l.pgm")


def test_grid_frame_cells(rng):
    xy = rng.uniform(-50, 50, (200, 2))
    f = GridFrame.covering(xy, 2.0, pad=1)
    r, c, inside = f.cell_index(xy)
    assert inside.all() and r.min() >= 1 and c.min() >= 1
    e, n = f.cell_centers()
    rr, cc, ok = f.cell_index(np.column_stack([e.ravel(), n.ravel()]))
    assert ok.all() and np.array_equal(rr.reshape(f.shape), np.repeat(np.arange(f.rows)[:, None], f.cols, 1))
    assert f.shifted(1, 2).origin_e == f.origin_e + 1
    with pytest.raises(ValueError):
        GridFrame(0, 0, 0, 1, 1)


def test_unary_round_trip_and_probabilities(rng):
    u = rng.normal(size=(3, 5, 2)).astype(np.float32)
    assert np.array_equal(decode_unary(encode_unary(u)), u.astype(np.float64))
    with pytest.raises(ValueError):
        decode_unary(b"5 3 2\n" + b"\x00" * 8)
    p = np.array([[0, 255, 128]])
    un = unary_from_probabilities([p])
    assert un.shape == (1, 3, 2)
    assert np.allclose(np.exp(-un).sum(-1), 1.0)
    assert np.all(np.argmin(un, -1) == [[0, 1, 1]])


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write_bytes(tmp_path / "sub" / "x.bin", b"abc")
    assert (tmp_path / "sub" / "x.bin").read_bytes() == b"abc"
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "sub" / "y.pgm", np.zeros((2, 2, 2)))
    assert os.listdir(tmp_path / "sub") == ["x.bin"]
    assert dumps_json({"b": 1, "a": [1.5]}) == '{\n  "a": [\n    1.5\n  ],\n  "b": 1\n}\n'
    with pytest.raises(ValueError):
        dumps_json({"x": float("nan")})


def test_config_values():
    assert parse_value("true") is True and parse_value("none") is None
    assert parse_value("3") == 3 and parse_value("-2.5e1") == -25.0
    assert parse_value("[1, a, 2.0]") == [1, "a", 2.0] and parse_value("[]") == []
    assert parse_value("'x # y'") == "x # y" and parse_value("hello") == "hello"


def test_config_parse_override_and_hash():
    cfg = RunConfig.parse("# comment\nrun.seed = 3\ncoreg.cell_size = 2.0  # metres\nio.cloud = 'a#b.csv'\n")
    assert cfg.get("run", "seed") == 3 and cfg["coreg"]["cell_size"] == 2.0 and cfg.get("io", "cloud") == "a#b.csv"
    h = cfg.hash()
    cfg.override(["coreg.cell_size=4"])
    assert cfg["coreg"]["cell_size"] == 4 and cfg.hash() != h
    assert RunConfig.parse(cfg.dumps()).to_dict() == cfg.to_dict()
    assert RunConfig.parse(cfg.dumps()).hash() == cfg.hash()
    assert RunConfig().hash() == RunConfig().hash()
    with pytest.raises(ConfigError):
        RunConfig.parse("nosuch.key = 1")
    with pytest.raises(ConfigError):
        RunConfig.parse("not a line")
    with pytest.raises(ConfigError):
        cfg.override(["seed=1"])
    with pytest.raises(ConfigError):
        RunConfig.load("/nonexistent/run.cfg")


def test_chunking_and_thread_independence():
    assert parallel.chunk_slices(7, 3) == [slice(0, 3), slice(3, 6), slice(6, 7)]
    assert parallel.chunk_slices(0, 3) == []
    x = np.random.default_rng(0).normal(size=(1000, 50))
    fn = lambda sl: x[sl] @ x[sl].T.sum(axis=1)
    with parallel.threads(1):
        a = parallel.map_chunks(fn, len(x), 64)
    with parallel.threads(4):
        b = parallel.map_chunks(fn, len(x), 64)
        assert parallel.get_threads() == 4
    assert parallel.get_threads() == 1
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
    with pytest.raises(ValueError):
        parallel.set_threads(0)
