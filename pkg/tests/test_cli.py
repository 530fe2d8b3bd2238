"""
End-to-end tests for the command-line workflows (mock backend, no network)
"""

import json
from pathlib import Path
from unittest.mock import AsyncMock, patch

import pandas as pd
import pytest

from main import EXIT_CODES, main

MANIFEST_HEADER = "video_id,video_path,subject_id,impairment_level,hand,native_fps,duration_s,annotation_path\n"


def write_annotation(path: Path, spans):
    """``spans`` is a list of (primitive, frame_count) for the right hand."""
    rows = ["frame_index,primitive,hand"]
    index = 0
    for primitive, frames in spans:
        for _ in range(frames):
            rows.append(f"{index},{primitive},right")
            index += 1
    path.write_text("\n".join(rows) + "\n")


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.yaml"
    path.write_text(f"backend:\n  provider: mock\nextraction:\n  cache_dir: {tmp_path / 'cache'}\n")
    return path


@pytest.fixture
def cycle_manifest(tmp_path):
    write_annotation(tmp_path / "vid01.csv", [("idle", 30), ("reach", 30), ("transport", 30), ("reposition", 30)])
    path = tmp_path / "manifest.csv"
    path.write_text(MANIFEST_HEADER + "vid01,vid01.mp4,S01,Mi,right,30,,vid01.csv\n")
    return path


def run(config_file, *argv):
    return main(["--config", str(config_file), "--log-level", "WARNING", *map(str, argv)])


class TestMetricsCommand:

    @pytest.fixture
    def worked_example(self, tmp_path):
        write_annotation(tmp_path / "ann.csv", [("idle", 10), ("reach", 10), ("transport", 10)])
        manifest = tmp_path / "manifest.csv"
        manifest.write_text(MANIFEST_HEADER + "vid01,vid01.mp4,S01,Mi,right,30,,ann.csv\n")
        previous = tmp_path / "previous"
        (previous / "predictions").mkdir(parents=True)
        (previous / "predictions" / "vid01.json").write_text(
            json.dumps({"video_id": "vid01", "sequence": ["Reach", "Stabilize", "Transport"]})
        )
        return manifest, previous

    def test_worked_example(self, tmp_path, config_file, worked_example):
        manifest, previous = worked_example
        out = tmp_path / "scored"
        assert run(config_file, "--manifest", manifest, "--out", out, "metrics", "--predictions", previous) == 0

        row = pd.read_csv(out / "metrics.csv").iloc[0]
        assert row["edit_score"] == pytest.approx(33.33, abs=0.01)
        assert row["action_error_rate"] == pytest.approx(0.6667, abs=1e-4)
        assert row["relative_counting_error"] == pytest.approx(0.6667, abs=1e-4)

        summary = json.loads((out / "run_summary.json").read_text())
        assert summary["workflow"] == "metrics"
        assert summary["backend"] == {"provider": "mock"}
        assert summary["config"]["backend"]["provider"] == "mock"

    def test_report_groups_by_impairment(self, tmp_path, config_file, worked_example):
        manifest, previous = worked_example
        scored = tmp_path / "scored"
        run(config_file, "--manifest", manifest, "--out", scored, "metrics", "--predictions", previous)

        assert run(config_file, "--out", tmp_path / "report", "report", scored) == 0
        report = pd.read_csv(tmp_path / "report" / "report.csv")
        assert list(report["group"]) == ["all", "Mi"]
        assert report["edit_score_mean"].iloc[0] == pytest.approx(33.33, abs=0.01)


class TestBaselineCommand:

    def test_markov_is_reproducible(self, tmp_path, config_file, cycle_manifest):
        outputs = []
        for name in ("first", "second"):
            out = tmp_path / name
            assert run(config_file, "--manifest", cycle_manifest, "--seed", 7, "--out", out,
                       "baseline", "markov") == 0
            outputs.append(out)
        first, second = outputs
        assert (first / "predictions" / "vid01.json").read_text() == (second / "predictions" / "vid01.json").read_text()
        assert (first / "metrics.csv").read_text() == (second / "metrics.csv").read_text()
        transitions = pd.read_csv(first / "transitions.csv", index_col=0)
        assert transitions.sum(axis=1).to_numpy() == pytest.approx([1.0] * 4)

    def test_omniscient_recovers_segment_aligned_cycle(self, tmp_path, config_file, cycle_manifest):
        out = tmp_path / "omniscient"
        assert run(config_file, "--manifest", cycle_manifest, "--out", out, "baseline", "omniscient") == 0
        prediction = json.loads((out / "predictions" / "vid01.json").read_text())
        assert prediction["sequence"] == ["Idle", "Reach", "Transport", "Reposition"]
        assert pd.read_csv(out / "metrics.csv").iloc[0]["edit_score"] == pytest.approx(100.0)


class TestInferPrimitivesCommand:

    @staticmethod
    async def _fake_ffmpeg(args):
        Path(args[-1]).write_bytes(b"jpeg")
        return 0, b"", ""

    def test_all_no_is_one_idle(self, tmp_path, config_file):
        (tmp_path / "vid01.mp4").write_bytes(b"not really a video")
        write_annotation(tmp_path / "vid01.csv", [("idle", 60)])
        manifest = tmp_path / "manifest.csv"
        manifest.write_text(MANIFEST_HEADER + "vid01,vid01.mp4,S01,C,right,30,2.0,vid01.csv\n")
        out = tmp_path / "run"

        with patch("ingest.video._run", AsyncMock(side_effect=self._fake_ffmpeg)):
            code = run(config_file, "--manifest", manifest, "--out", out, "infer-primitives", "--mode", "decomposed")

        assert code == 0
        prediction = json.loads((out / "predictions" / "vid01.json").read_text())
        assert prediction["sequence"] == ["Idle"]
        assert prediction["grid"] == {"sampling_rate_hz": 15.0, "frames_per_segment": 8}
        assert (out / "tracks" / "vid01.json").exists()
        assert len((out / "transcripts" / "vid01.jsonl").read_text().splitlines()) == 2 * 3
        assert pd.read_csv(out / "metrics.csv").iloc[0]["edit_score"] == pytest.approx(100.0)


class TestExitCodes:

    def test_missing_manifest(self, tmp_path, config_file):
        assert run(config_file, "--manifest", tmp_path / "absent.csv", "--out", tmp_path / "out",
                   "baseline", "markov") == EXIT_CODES["manifest"]

    def test_manifest_flag_required(self, tmp_path, config_file):
        assert run(config_file, "--out", tmp_path / "out", "probe", "cross-hand") == EXIT_CODES["config"]

    def test_bad_config(self, tmp_path, cycle_manifest):
        bad = tmp_path / "bad.yaml"
        bad.write_text("runtime:\n  parallelism: 0\n")
        assert run(bad, "--manifest", cycle_manifest, "baseline", "markov") == 2

    def test_missing_video_is_caught_before_backend(self, tmp_path, config_file, cycle_manifest):
        assert run(config_file, "--manifest", cycle_manifest, "--out", tmp_path / "out", "primrs") == 2
        assert not (tmp_path / "out").exists()
