"""
Tests for nine-class activity identification
"""

import numpy as np
import pytest

from agents.activity_agent import (
    ACTIVITY_LABELS,
    ActivityAgent,
    ActivityResult,
    accuracy_and_matrix,
    majority_baseline,
    results_table,
)
from models.errors import PreconditionError
from models.schemas import ActivityClass
from vlm.backends import MockBackend
from tests.conftest import SyntheticFrameSource, make_client, make_job


def agent_for(backend, app_config, frames=None):
    return ActivityAgent(app_config, make_client(backend, app_config), frames or SyntheticFrameSource())


class TestClassifyActivity:

    @pytest.mark.asyncio
    async def test_final_answer(self, app_config):
        frames = SyntheticFrameSource()
        agent = agent_for(MockBackend(default="Water is poured.\nFINAL_ANSWER: Drinking"), app_config, frames)
        result = await agent.classify_activity(make_job(duration_s=4.0), truth=ActivityClass.DRINKING)

        assert result.prediction is ActivityClass.DRINKING
        assert result.correct
        assert frames.calls[0][1] == (0, 17, 34, 51, 68, 85, 102, 119)

    @pytest.mark.asyncio
    async def test_optimized_prompt_label(self, app_config):
        backend = MockBackend(default="FINAL_ANSWER: Shelf exercise")
        result = await agent_for(backend, app_config).classify_activity(make_job(), prompt_variant="optimized")
        assert result.prediction is ActivityClass.SHELF
        assert "TRANSPARENT shelf" in backend.requests[0].prompt

    @pytest.mark.asyncio
    async def test_direct_variant(self, app_config):
        backend = MockBackend(default="FINAL_ANSWER: Glasses")
        await agent_for(backend, app_config).classify_activity(make_job(), prompt_variant="direct")
        assert backend.requests[0].prompt_id == "activity.direct"

    @pytest.mark.asyncio
    async def test_unparsed_reply(self, app_config):
        agent = agent_for(MockBackend(default="I cannot tell."), app_config)
        job = make_job()
        result = await agent.classify_activity(job, truth=ActivityClass.COMBING)
        assert result.prediction is None
        assert not result.correct
        assert job.transcript.unparseable == 1

    @pytest.mark.asyncio
    async def test_needs_eight_frames(self, app_config):
        agent = agent_for(MockBackend(default="FINAL_ANSWER: Drinking"), app_config)
        with pytest.raises(PreconditionError):
            await agent.classify_activity(make_job(duration_s=0.2))

    @pytest.mark.asyncio
    async def test_ground_truth_echo(self, app_config):
        truth = {f"vid{i}.mp4": c for i, c in enumerate(ActivityClass)}

        def echo(request):
            video = request.frames[0].decode().split(":")[1]
            return f"FINAL_ANSWER: {truth[video].prompt_label}"

        agent = agent_for(MockBackend(responder=echo), app_config)
        results = []
        for video, label in truth.items():
            outcome = await agent.execute_task({"job": make_job(video_id=video[:-4]), "truth": label})
            results.append(outcome["result"])

        summary = accuracy_and_matrix(results)
        assert summary.accuracy == 1.0
        np.testing.assert_allclose(summary.normalized().to_numpy(), np.eye(9))
        np.testing.assert_allclose(summary.normalized().sum(axis=1).to_numpy(), 1.0, atol=1e-9)


def result(truth, prediction, video_id="v"):
    return ActivityResult(video_id=video_id, truth=truth, prediction=prediction)


class TestAccuracyAndMatrix:

    def test_constant_prediction(self):
        results = [result(c, ActivityClass.RTT) for c in ActivityClass]
        summary = accuracy_and_matrix(results)
        normalized = summary.normalized()
        assert summary.accuracy == pytest.approx(1 / 9)
        assert (normalized["RTT"] == 1.0).all()
        assert normalized.drop(columns="RTT").to_numpy().sum() == 0

    def test_unparsed_kept_in_denominator(self):
        results = [
            result(ActivityClass.FEEDING, ActivityClass.FEEDING),
            result(ActivityClass.COMBING, ActivityClass.COMBING),
            result(ActivityClass.GLASSES, None),
        ]
        summary = accuracy_and_matrix(results)
        assert summary.accuracy == pytest.approx(2 / 3)
        assert summary.unparsed == 1
        assert summary.matrix.to_numpy().sum() == 2
        assert summary.normalized().loc["Glasses"].sum() == 0

    def test_matrix_labels(self):
        summary = accuracy_and_matrix([result(ActivityClass.BRUSHING, ActivityClass.DEODORANT)])
        assert list(summary.matrix.index) == ACTIVITY_LABELS
        assert summary.matrix.index.name == "truth"
        assert summary.matrix.loc["Brushing", "Deodorant"] == 1

    def test_accuracy_is_weighted_trace(self):
        results = [
            result(ActivityClass.RTT, ActivityClass.RTT),
            result(ActivityClass.RTT, ActivityClass.SHELF),
            result(ActivityClass.SHELF, ActivityClass.SHELF),
        ]
        summary = accuracy_and_matrix(results)
        normalized = summary.normalized()
        counts = summary.matrix.sum(axis=1)
        weighted = sum(normalized.loc[c, c] * counts[c] for c in ACTIVITY_LABELS) / counts.sum()
        assert weighted == pytest.approx(summary.accuracy)

    def test_empty(self):
        with pytest.raises(PreconditionError):
            accuracy_and_matrix([])

    def test_results_table(self):
        table = results_table([result(ActivityClass.RTT, None, "vid07")])
        assert table.iloc[0].to_dict() == {
            "video_id": "vid07", "truth": "RTT", "prediction": "", "parsed": False, "correct": False,
        }


class TestMajorityBaseline:

    def test_modal_class_share(self):
        others = [c for c in ActivityClass if c is not ActivityClass.DRINKING]
        labels = [ActivityClass.DRINKING] * 67
        for c in others:
            labels += [c] * 54
        labels.append(ActivityClass.RTT)
        assert len(labels) == 500
        assert majority_baseline(labels) == pytest.approx(0.134)

    def test_manifest_labels_used(self):
        summary = accuracy_and_matrix(
            [result(ActivityClass.RTT, ActivityClass.RTT)],
            manifest_labels=[ActivityClass.RTT, ActivityClass.SHELF, ActivityClass.SHELF, ActivityClass.COMBING],
        )
        assert summary.majority_baseline == pytest.approx(0.5)

    def test_empty(self):
        with pytest.raises(PreconditionError):
            majority_baseline([])
