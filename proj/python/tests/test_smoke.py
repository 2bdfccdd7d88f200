import math
import os
from pathlib import Path

import pytest

import driftlab


def test_split_softmax_example():
    out = driftlab.split_softmax([0.4, 0.1, 0.3, 0.2], 0.5, 2)
    assert out == pytest.approx([0.565685, 0.141421, 0.175736, 0.117157], abs=1e-6)
    assert sum(out) == pytest.approx(1.0, abs=1e-12)
    assert driftlab.system_mass(out, 2) == pytest.approx(math.sqrt(0.5), abs=1e-12)


def test_cfg_example():
    p = driftlab.cfg_combine([math.log(0.8), math.log(0.2)], [math.log(0.5), math.log(0.5)], 2.0)
    assert p == pytest.approx([0.941176, 0.058824], abs=1e-6)


def test_geometry():
    assert driftlab.wendel_probability(1, 3) == pytest.approx(0.75)
    assert driftlab.wendel_probability(2, 4) == pytest.approx(0.875)
    assert driftlab.epsilon_tilde(0.1, math.pi / 4) == pytest.approx(0.140720, abs=1e-6)
    assert abs(driftlab.hemisphere_rate(1, 3, 20000, seed=3) - 0.75) < 0.02


def test_errors_map_to_value_error():
    with pytest.raises(ValueError):
        driftlab.split_softmax([0.5, 0.5], 1.5, 1)
    with pytest.raises(driftlab.ConfigError):
        driftlab.score("no-such-entry", "text")


def test_dataset_and_scoring():
    entries = driftlab.load_dataset()
    assert len(entries) == 25
    assert {e["category"] for e in entries} == {"multi_choice", "character", "format", "memorization", "language"}
    assert driftlab.score("char-pirate", "Arr, matey!") == 1.0
    assert driftlab.score("char-pirate", "Good morning.") == 0.0


def test_simulate_is_reproducible():
    a = driftlab.simulate(rounds=3, seed=4, max_new_tokens=24)
    b = driftlab.simulate(rounds=3, seed=4, max_new_tokens=24)
    assert a == b
    assert len(a["stability"]) == 3
    assert len(a["pi"]) == 3
    assert all(0.0 <= s <= 1.0 for s in a["stability"])
    assert [u["speaker"] for u in a["utterances"]] == ["user", "agent"] * 3


def test_sweep_writes_reports(tmp_path):
    config = Path(os.environ.get("DRIFT_CONFIG_DIR", Path(__file__).resolve().parents[2] / "configs")) / "quick.json"
    written = driftlab.sweep(config, tmp_path, seed=2, rounds=2)
    names = {Path(p).name for p in written}
    assert {"summary.csv", "bundle.json", "per_round.jsonl", "transcripts.jsonl"} <= names
    header = (tmp_path / "summary.csv").read_text().splitlines()[0]
    assert header.startswith("pair,method,value,conversations")
