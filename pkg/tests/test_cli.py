import csv
import json

import numpy as np
import pytest

from irisrcnn import cli
from irisrcnn.dataio import load_dataset, write_pgm
from irisrcnn.nnet.weights import load_weights


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    """A four-image dataset and a one-epoch model trained on it."""
    root = tmp_path_factory.mktemp("cli")
    data, weights = root / "data", root / "w.dcsw"
    args = ["synth", "--out", str(data), "--train", "4", "--test", "4", "--identities", "2", "--seed", "1"]
    assert cli.main(args) == 0
    assert cli.main(["train", "--data", str(data), "--out", str(weights), "--epochs", "1", "--lr", "0.003"]) == 0
    return root, data, weights


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestSynth:
    def test_writes_index_and_splits(self, small):
        _, data, _ = small
        ds = load_dataset(data)
        assert len(ds) == 8
        assert sorted(ds.splits) == ["test", "train"]
        assert len(ds.splits["train"]) == len(ds.splits["test"]) == 4

    @pytest.mark.parametrize("bad", [["--train", "0"], ["--identities", "-1"], ["--seed", "x"]])
    def test_bad_counts_are_usage_errors(self, tmp_path, capsys, bad):
        argv = ["synth", "--out", str(tmp_path), "--train", "2", "--test", "1", "--identities", "1", "--seed", "0"]
        flag = bad[0]
        i = argv.index(flag)
        argv[i + 1] = bad[1]
        code, _, err = run(argv, capsys)
        assert code == 2 and "usage" in err

    def test_unknown_params_file_key(self, tmp_path, capsys):
        params = tmp_path / "p.json"
        params.write_text(json.dumps({"wings": 2}))
        argv = ["synth", "--out", str(tmp_path / "d"), "--train", "1", "--test", "1",
                "--identities", "1", "--seed", "0", "--params", str(params)]
        code, _, err = run(argv, capsys)
        assert code == 1 and "wings" in err

    def test_params_file_overrides(self, tmp_path, capsys):
        params = tmp_path / "p.json"
        params.write_text(json.dumps({"height": 96, "width": 96, "iris_radius": [20, 30]}))
        argv = ["synth", "--out", str(tmp_path / "d"), "--train", "1", "--test", "1",
                "--identities", "1", "--seed", "0", "--params", str(params)]
        assert run(argv, capsys)[0] == 0
        assert load_dataset(tmp_path / "d").images[0].shape == (1, 96, 96)


class TestTrain:
    def test_outputs(self, small):
        _, _, weights = small
        tensors = load_weights(weights)
        assert tensors["rpn.cls.weight"].shape[0] == 30
        assert tensors["rpn.reg.weight"].shape[0] == 90
        with open(cli.loss_log_path(weights), newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["epoch", "rpn_cls", "rpn_reg", "crn_cls", "crn_reg", "mask"]
        assert len(rows) == 2 and rows[1][0] == "1"

    def test_missing_data_dir(self, tmp_path, capsys):
        code, _, err = run(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "w")], capsys)
        assert code == 1 and err

    def test_toy_and_paper_scale_are_exclusive(self, tmp_path, capsys):
        argv = ["train", "--data", str(tmp_path), "--out", str(tmp_path / "w"), "--toy", "--paper-scale"]
        assert run(argv, capsys)[0] == 2

    def test_zero_epochs_rejected(self, tmp_path, capsys):
        argv = ["train", "--data", str(tmp_path), "--out", str(tmp_path / "w"), "--epochs", "0"]
        assert run(argv, capsys)[0] == 2


class TestSegment:
    def test_writes_circles_and_maps(self, small, capsys):
        root, data, weights = small
        prefix = root / "seg"
        image = "images/test_00000.pgm"
        code, out, _ = run(
            ["segment", "--weights", str(weights), "--image", str(data / image), "--out-prefix", str(prefix)],
            capsys,
        )
        assert code == 0
        doc = json.loads((root / "seg.circles.json").read_text())
        if doc["detection"] is None:
            assert "no detection" in out
        else:
            assert len(doc["circles"]) == 6
            assert (root / "seg.norm.pgm").exists() and (root / "seg.mask.pgm").exists()

    def test_blank_image_writes_marker_or_result(self, small, tmp_path, capsys):
        _, _, weights = small
        img = tmp_path / "blank.pgm"
        write_pgm(img, np.zeros((128, 128)))
        code, _, _ = run(
            ["segment", "--weights", str(weights), "--image", str(img), "--out-prefix", str(tmp_path / "b")],
            capsys,
        )
        assert code == 0
        assert "detection" in json.loads((tmp_path / "b.circles.json").read_text())

    def test_corrupt_weights(self, small, tmp_path, capsys):
        _, data, _ = small
        bad = tmp_path / "bad.dcsw"
        bad.write_bytes(b"NOPE" + bytes(20))
        image = data / "images/test_00000.pgm"
        code, _, err = run(
            ["segment", "--weights", str(bad), "--image", str(image), "--out-prefix", str(tmp_path / "x")],
            capsys,
        )
        assert code == 1 and err

    def test_missing_image(self, small, tmp_path, capsys):
        _, _, weights = small
        argv = ["segment", "--weights", str(weights), "--image", str(tmp_path / "none.pgm"),
                "--out-prefix", str(tmp_path / "x")]
        assert run(argv, capsys)[0] == 1


class TestEvalSeg:
    def test_report_layout(self, small, capsys):
        root, data, weights = small
        report = root / "seg.csv"
        code, out, _ = run(["eval-seg", "--weights", str(weights), "--data", str(data), "--report", str(report)], capsys)
        assert code == 0 and "IoU_SEG" in out
        with open(report, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["index", "iou_seg", "err_seg", "detected"]
        assert [r[0] for r in rows[-2:]] == ["mean", "std"]
        per_image = rows[1:-2]
        assert len(per_image) == 4
        for _, iou, err, det in per_image:
            assert 0 <= float(iou) <= 1 and 0 <= float(err) <= 1 and det in ("0", "1")
        assert float(rows[-2][1]) == pytest.approx(np.mean([float(r[1]) for r in per_image]))


class TestMatch:
    def test_report_counts(self, small, capsys):
        root, data, weights = small
        report = root / "match.csv"
        code, out, _ = run(
            ["match", "--weights", str(weights), "--data", str(data), "--report", str(report)], capsys
        )
        assert code == 0 and "EER" in out
        with open(report, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["kind", "a", "b", "c"]
        eer = rows[1]
        # 4 test images of 2 identities: 2 genuine pairs, 4 imposter pairs
        assert eer[0] == "eer" and (eer[2], eer[3]) == ("2", "4")
        assert sum(r[0] == "distance" for r in rows) == 6

    @pytest.mark.parametrize("shift", ["512", "-1"])
    def test_shift_out_of_range(self, small, tmp_path, capsys, shift):
        _, data, weights = small
        argv = ["match", "--weights", str(weights), "--data", str(data), "--max-shift", shift,
                "--report", str(tmp_path / "r.csv")]
        assert run(argv, capsys)[0] == 2


class TestAnchors:
    def test_grid_json(self, capsys):
        code, out, _ = run(
            ["anchors", "--image-size", "64x96", "--stride", "4", "--radii", "8,12,16,20,24",
             "--ratios", "0.25,0.35,0.45"],
            capsys,
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["feature_size"] == [16, 24]
        anchors = np.array(doc["anchors"])
        assert anchors.shape == (16 * 24 * 15, 6)
        np.testing.assert_allclose(anchors[0], [2, 2, 2, 2, 8, 2])

    @pytest.mark.parametrize(
        "extra",
        [["--ratios", "0.5,1.5"], ["--radii", "8,4"], ["--radii", "a,b"], ["--image-size", "64"]],
    )
    def test_invalid_arguments(self, capsys, extra):
        argv = ["anchors", "--image-size", "64x64", "--stride", "4", "--radii", "8,16", "--ratios", "0.3"]
        i = argv.index(extra[0])
        argv[i + 1] = extra[1]
        code, _, err = run(argv, capsys)
        assert code == 2 and "usage" in err


def test_no_command_is_usage_error(capsys):
    assert run([], capsys)[0] == 2
