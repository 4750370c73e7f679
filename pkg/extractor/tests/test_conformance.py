"""End-to-end conformance: packs written here must be accepted downstream.

The detection tooling is exercised only through its command line, never
imported, so this suite proves the two packages agree on nothing but the pack
directory layout.
"""

import json
import os
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from packextract.cli import main as packextract_main

TASKS = {"object": ["person", "car", "tree", "cart"], "action": ["walking", "standing"]}


def run_anorec(*args):
    env = dict(os.environ)
    env.pop("ANOREC_MODEL_DIR", None)
    return subprocess.run(
        [sys.executable, "-m", "anorec", *args],
        capture_output=True,
        text=True,
        env=env,
        timeout=300,
    )


def read_jsonl(path):
    with open(path, "r", encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A five-frame toy video, grid regions over it, and the extracted pack."""
    root = tmp_path_factory.mktemp("conformance")
    frames = root / "frames" / "toy0"
    frames.mkdir(parents=True)
    rng = np.random.Generator(np.random.PCG64(2024))
    for index in range(5):
        pixels = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        Image.fromarray(pixels).save(frames / f"{index}.png")

    regions = root / "regions.jsonl"
    rc = packextract_main(
        ["synth-regions", "--frames", str(root / "frames"), "--grid", "2", "--out", str(regions)]
    )
    assert rc == 0

    config = root / "config.json"
    config.write_text(json.dumps({"tasks": TASKS, "seed": 0, "batch_size": 8}))

    pack = root / "pack"
    rc = packextract_main(
        [
            "extract",
            "--frames", str(root / "frames"),
            "--regions", str(regions),
            "--config", str(config),
            "--out", str(pack),
        ]
    )
    assert rc == 0
    return root


def test_toy_pack_validates_with_zero_warnings(workspace):
    result = run_anorec("validate", "--pack", str(workspace / "pack"))
    assert result.returncode == 0, result.stderr
    report = json.loads(result.stdout)
    assert report["ok"] is True
    assert report["records"] == 5 * 4
    assert report["warnings"] == 0
    assert result.stderr.strip() == ""


def test_toy_pack_feeds_train_detect_recount(workspace):
    pack = str(workspace / "pack")
    model = str(workspace / "model")

    result = run_anorec(
        "train",
        "--pack", pack,
        "--out", model,
        "--grid", "1x1",
        "--detector", "nn",
        "--preprocessing", "none",
        "--seed", "0",
    )
    assert result.returncode == 0, result.stderr
    report = json.loads(result.stdout)
    assert report["trained_cells"] == 1

    detections = str(workspace / "detections.jsonl")
    result = run_anorec("detect", "--pack", pack, "--model", model, "--out", detections)
    assert result.returncode == 0, result.stderr
    rows = read_jsonl(detections)
    assert len(rows) == 20
    assert all(not row["untrained_cell"] for row in rows)
    assert all(np.isfinite(row["score"]) for row in rows)

    recounts = str(workspace / "recounts.jsonl")
    result = run_anorec(
        "recount", "--pack", pack, "--model", model, "--multi", "--out", recounts
    )
    assert result.returncode == 0, result.stderr
    rows = read_jsonl(recounts)
    assert len(rows) == 20
    for row in rows:
        assert set(row["tasks"]) == set(TASKS)
        for name, entry in row["tasks"].items():
            assert entry["category"] in TASKS[name]
            assert "anomaly_score" in entry and "cls_score" in entry
            assert isinstance(entry["candidates"], list)
