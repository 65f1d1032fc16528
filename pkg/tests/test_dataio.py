import json

import numpy as np
import pytest

from irisrcnn.dataio import AnnotationRecord, load_dataset, read_index, read_pgm, write_index, write_pgm
from irisrcnn.geometry import Circle, DoubleCircle


def test_pgm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (1, 7, 11)) / 255.0
    write_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_header(tmp_path):
    write_pgm(tmp_path / "a.pgm", np.ones((3, 5)))
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n5 3\n255\n")
    assert raw[-15:] == b"\xff" * 15


def test_pgm_comment_and_errors(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    np.testing.assert_array_equal(read_pgm(p), [[[0.0, 1.0]]])
    p.write_bytes(b"P2\n2 1\n255\n0 255")
    with pytest.raises(ValueError):
        read_pgm(p)
    p.write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(ValueError):
        read_pgm(p)
    p.write_bytes(b"P5\n2 1\n65535\n\x00\x00\x00\x00")
    with pytest.raises(ValueError):
        read_pgm(p)
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", np.zeros((2, 3, 3)))


def test_index_roundtrip(tmp_path):
    dc = DoubleCircle(Circle(10.5, 20.25, 30.0), Circle(11.0, 19.0, 8.0))
    recs = [AnnotationRecord("images/a.pgm", "masks/a.pgm", 4, dc)]
    write_index(tmp_path / "index.json", recs, {"train": [0]})
    back, splits = read_index(tmp_path / "index.json")
    assert back == recs and splits == {"train": [0]}
    doc = json.loads((tmp_path / "index.json").read_text())
    assert doc["records"][0]["iris"] == {"cx": 10.5, "cy": 20.25, "r": 30.0}


def test_index_errors(tmp_path):
    (tmp_path / "index.json").write_text("[]")
    with pytest.raises(ValueError):
        read_index(tmp_path / "index.json")


def test_missing_files_detected(tmp_path):
    dc = DoubleCircle(Circle(10, 10, 8), Circle(10, 10, 3))
    write_index(tmp_path / "index.json", [AnnotationRecord("images/none.pgm", "masks/none.pgm", 0, dc)])
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)


def test_dataset_without_splits(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    write_pgm(tmp_path / "images/a.pgm", np.full((1, 4, 4), 0.5))
    write_pgm(tmp_path / "masks/a.pgm", np.ones((1, 4, 4)))
    dc = DoubleCircle(Circle(2, 2, 2), Circle(2, 2, 1))
    write_index(tmp_path / "index.json", [AnnotationRecord("images/a.pgm", "masks/a.pgm", 0, dc)])
    ds = load_dataset(tmp_path)
    assert len(ds) == 1 and ds.splits == {"all": [0]}
    assert ds.split("all").circles == [dc]
    with pytest.raises(KeyError):
        ds.split("test")
