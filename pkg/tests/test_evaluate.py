import numpy as np
import pytest

from compseg.evaluate import evaluate, iou, render_table, write_report_csv
from compseg.tensors import Box, LabelGrid


class FakeRecord:
    def __init__(self, labels, fg=0, bg=0):
        self.labels = LabelGrid(np.array(labels, dtype=np.int8))
        self.fg_level = fg
        self.bg_level = bg


def grid(arr):
    return LabelGrid(np.array(arr, dtype=np.int8))


def test_iou_basic():
    a = {(0, 0), (0, 1)}
    assert iou(a, a) == 1.0
    assert iou(a, {(5, 5)}) == 0.0
    assert iou(set(), set()) == 1.0
    # 2x4 rectangle against itself shifted to half overlap: 4 / 12
    r1 = {(r, c) for r in range(2) for c in range(4)}
    r2 = {(r, c + 2) for r in range(2) for c in range(4)}
    assert iou(r1, r2) == pytest.approx(1.0 / 3.0)


def test_evaluate_perfect_predictions():
    records = [
        FakeRecord([[1, 0], [-1, 0]], fg=1, bg=1),
        FakeRecord([[0, 1], [1, 1]], fg=0, bg=0),
    ]
    preds = {i: rec.labels for i, rec in enumerate(records)}
    report = evaluate(preds, records)
    assert report.grand_mean("amodal") == 1.0
    assert report.grand_mean("modal") == 1.0
    assert report.grand_mean("occluded") == 1.0
    assert report.total == 2 and not report.missing


def test_evaluate_empty_predictions_zero():
    records = [FakeRecord([[1, 1], [1, -1]], fg=1, bg=1)]
    preds = {0: grid([[0, 0], [0, 0]])}
    report = evaluate(preds, records)
    assert report.grand_mean("amodal") == 0.0
    assert report.grand_mean("modal") == 0.0


def test_evaluate_both_empty_occluded_is_one():
    records = [FakeRecord([[1, 0]], fg=0, bg=0)]  # no occlusion in GT
    preds = {0: grid([[1, 0]])}
    report = evaluate(preds, records)
    assert report.grand_mean("occluded") == 1.0


def test_evaluate_mean_arithmetic():
    # three records engineered to amodal IoUs 1, 0.5, 0
    records = [
        FakeRecord([[1, 1, 0, 0]]),
        FakeRecord([[1, 1, 0, 0]]),
        FakeRecord([[1, 1, 0, 0]]),
    ]
    preds = {
        0: grid([[1, 1, 0, 0]]),
        1: grid([[1, 0, 0, 0]]),  # inter 1, union 2
        2: grid([[0, 0, 1, 1]]),  # disjoint
    }
    report = evaluate(preds, records)
    assert report.grand_mean("amodal") == pytest.approx(0.5)


def test_evaluate_permutation_invariant():
    rng = np.random.default_rng(0)
    records = [
        FakeRecord(rng.choice([-1, 0, 1], size=(4, 4)), fg=int(rng.integers(4)))
        for _ in range(10)
    ]
    preds = {i: grid(rng.choice([-1, 0, 1], size=(4, 4))) for i in range(10)}
    r1 = evaluate(preds, records)
    order = rng.permutation(10)
    r2 = evaluate({j: preds[int(k)] for j, k in enumerate(order)}, [records[k] for k in order])
    assert r1.grand_mean("amodal") == pytest.approx(r2.grand_mean("amodal"), abs=1e-15)


def test_grand_mean_is_count_weighted():
    records = [FakeRecord([[1]], fg=0)] * 3 + [FakeRecord([[1]], fg=1, bg=1)]
    preds = {0: grid([[1]]), 1: grid([[1]]), 2: grid([[0]]), 3: grid([[0]])}
    report = evaluate(preds, records)
    weighted = sum(
        report.level_mean(k, "amodal") * report.levels[k].count
        for k in report.levels
    ) / report.total
    assert report.grand_mean("amodal") == pytest.approx(weighted, abs=1e-12)


def test_missing_predictions_listed_and_excluded():
    records = [FakeRecord([[1]]), FakeRecord([[1]])]
    report = evaluate({0: grid([[1]])}, records)
    assert report.missing == [1]
    assert report.total == 1


def test_render_table_and_csv(tmp_path):
    records = [FakeRecord([[1, -1]], fg=1, bg=2)]
    report = evaluate({0: grid([[1, -1]])}, records)
    table = render_table(report)
    assert "1/2" in table and "100.0" in table
    path = tmp_path / "report.csv"
    write_report_csv(report, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("fg_level,bg_level,count")
    assert len(lines) == 3  # header, one level, grand row
