import math
import os
from pathlib import Path

import pytest

w2slab = pytest.importorskip("w2slab")

ROOT = Path(os.environ.get("W2S_SOURCE_DIR", Path(__file__).resolve().parents[2]))
SMALL = ROOT / "configs" / "small.conf"


def test_stage_seeds_are_xor_tags():
    seeds = w2slab.stage_seeds(1)
    assert seeds["split"] == 1 ^ 0x5100000000000001
    assert seeds["mi"] == 1 ^ 0x510000000000000B
    assert len(set(seeds.values())) == 11


def test_mutual_information_matches_formula():
    assert w2slab.plugin_mutual_information([[7, 0], [0, 7]]) == pytest.approx(math.log(2))
    assert w2slab.plugin_mutual_information([[10, 20], [5, 10]]) == pytest.approx(0.0, abs=1e-12)


def test_insert_trigger_positions():
    assert w2slab.insert_trigger("a good film") == ["a", "good", "film", "mn"]
    start = w2slab.insert_trigger("a good film", kind="sentence", position="start")
    assert start[:5] == ["i", "watched", "this", "3d", "movie"]


def test_config_errors_carry_exit_code(tmp_path):
    bad = tmp_path / "bad.conf"
    bad.write_text('[data]\ncorpus = "x.tsv"\n')
    with pytest.raises(w2slab.Error) as info:
        w2slab.config_snapshot(bad)
    assert info.value.exit_code == 2


def test_run_is_deterministic(tmp_path):
    a = w2slab.run(SMALL, tmp_path / "a", seed=5)
    b = w2slab.run(SMALL, tmp_path / "b", seed=5)
    assert a["run_id"] == b["run_id"]
    assert a["report"] == b["report"]
    assert "report.txt" in a["files"]
    for name in ("w2s.ckpt", "peft.trace.csv"):
        assert (Path(a["dir"]) / name).read_bytes() == (Path(b["dir"]) / name).read_bytes()
    assert "w2s.asr=" in a["report"]


def test_evaluate_arms_keys():
    arms = w2slab.evaluate_arms(SMALL, seed=2)
    assert {"full", "peft", "w2s", "clean", "teacher"} <= set(arms)
    for stats in arms.values():
        assert 0.0 <= stats["ca"] <= 1.0
        assert stats["asr"] == stats["asr_hits"] / stats["n_triggered"]
