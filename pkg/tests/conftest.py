"""Shared fixtures: the end-to-end training run used by the acceptance tests."""

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from irisrcnn import cli

# End-to-end configuration: 200 training and 50 test images, default synthesis
# parameters, seed 42, toy head widths; 20 epochs at learning rate 0.003 so the
# run fits the time budget on one core.
E2E_SYNTH = ["--train", "200", "--test", "50", "--identities", "20", "--seed", "42"]
E2E_TRAIN = ["--seed", "42", "--toy", "--epochs", "20", "--lr", "0.003"]


@dataclass
class AcceptanceRun:
    data: Path
    weights: Path
    report: Path
    loss_log: list
    iou_seg: float
    err_seg: float
    train_eval_seconds: float


def read_loss_log(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], [(int(r[0]), *map(float, r[1:])) for r in rows[1:]]


def read_eval_report(path):
    with open(path, newline="") as f:
        rows = {r[0]: r for r in csv.reader(f)}
    return float(rows["mean"][1]), float(rows["mean"][2])


@pytest.fixture(scope="session")
def acceptance_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("e2e")
    data, weights, report = root / "data", root / "model.dcsw", root / "seg.csv"
    assert cli.main(["synth", "--out", str(data), *E2E_SYNTH]) == 0
    start = time.perf_counter()
    assert cli.main(["train", "--data", str(data), "--out", str(weights), *E2E_TRAIN]) == 0
    assert cli.main(["eval-seg", "--weights", str(weights), "--data", str(data), "--report", str(report)]) == 0
    seconds = time.perf_counter() - start
    _, log = read_loss_log(cli.loss_log_path(weights))
    iou, err = read_eval_report(report)
    return AcceptanceRun(data, weights, report, log, iou, err, seconds)
