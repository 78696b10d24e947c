"""The default synthetic benchmark run end to end through the CLI.

One seeded run at the default sizes: 50 references plus 50 destructors, 100
queries at noise 0.02, a 32x32 feature AE trained for 200 epochs, Y=10 and a
k=10 baseline ensemble.
"""

import json
from pathlib import Path

import pytest

from lcd_icd.__main__ import main
from lcd_icd.cli import load_hypotheses
from lcd_icd.evaluation import lcd_recall, load_annotations


def run(*argv) -> None:
    assert main([str(a) for a in argv]) == 0, argv


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("benchmark")
    data, plain = root / "data", root / "plain"
    run("synth", "--seed", 0, "--detections", "--out", data)
    run("synth", "--seed", 0, "--out", plain)
    run("train-ae", "--input", data / "refs.jsonl", "--seed", 0, "--out", root / "model.bin")
    run("build-map", "--manifest", data / "refs.jsonl", "--model", root / "model.bin", "--out", root / "map.jsonl")
    run("build-map", "--manifest", plain / "refs.jsonl", "--model", root / "model.bin", "--out", root / "plain.jsonl")
    run("detect", "--map", root / "map.jsonl", "--model", root / "model.bin", "--query", data / "queries.jsonl",
        "--Y", 10, "--threads", 4, "--out", root / "loc")
    run("localize", "--map", root / "plain.jsonl", "--model", root / "model.bin", "--query", plain / "queries.jsonl",
        "--Y", 10, "--threads", 4, "--out", root / "plain_hyps.jsonl")
    run("baseline", "--refs", data / "refs.jsonl", "--queries", data / "queries.jsonl", "--model", root / "model.bin",
        "--hypotheses", root / "loc" / "hypotheses.jsonl", "--seed", 0, "--out", root / "ae")
    run("evaluate", "--loc-dir", f"lcd={root / 'loc'}", "--loc-dir", f"ae={root / 'ae'}",
        "--annotations", data / "annotations.jsonl", "--hypotheses", root / "loc" / "hypotheses.jsonl",
        "--out", root / "report")
    return root


@pytest.fixture(scope="module")
def report(benchmark) -> dict:
    return json.loads((benchmark / "report" / "report.json").read_text())


def test_detections_do_not_change_pixels(benchmark):
    for subdir in ("refs", "queries"):
        for pgm in sorted((benchmark / "data" / subdir).glob("*.pgm")):
            assert pgm.read_bytes() == (benchmark / "plain" / subdir / pgm.name).read_bytes()


def test_top1_recall_with_detector_boxes(report):
    assert report["lcd_recall"]["1"] >= 0.9


def test_top1_recall_with_six_entry_bolf(benchmark):
    """Full image plus the five fixed proposals is enough to find the true reference."""
    annotations = load_annotations(benchmark / "plain" / "annotations.jsonl")
    recall = lcd_recall(load_hypotheses(benchmark / "plain_hyps.jsonl"), annotations, [1])
    assert recall[1] >= 0.9


def test_loc_peak_inside_changed_box(report):
    assert report["peak_in_box"]["lcd"] >= 0.85


def test_lcd_beats_ae_baseline_at_top_20_percent(report):
    coverage = report["accuracy"]["coverage"]
    assert coverage["lcd"]["0.5"]["20.0"] > coverage["ae"]["0.5"]["20.0"]
