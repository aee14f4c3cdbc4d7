import json
import math

import numpy as np
import pytest
from PIL import Image

from multimask_inpaint.annotate import (
    AnnotationRecord,
    EmptyCaptionError,
    audit_alignment,
    annotate_directory,
    caption_object,
    default_root_extractor,
    ground_image,
    load_records,
    truncate_tokens,
    validate_record,
    Entity,
)
from multimask_inpaint.clients import MockEmbedder, MockGroundedCaptioner, MockObjectCaptioner
from multimask_inpaint.metrics import cosine


class FixtureGrounder:
    """Golden-file style provider response in the normalized schema."""

    kind = "grounded_captioner"

    def __init__(self, response):
        self.response = response

    def ground(self, image):
        return self.response


class ScriptedCaptioner:
    kind = "object_captioner"

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def caption(self, image, prompt, prefix):
        self.calls += 1
        return self.replies.pop(0) if self.replies else ""


def rgb(h, w, seed=0):
    return np.random.default_rng(seed).integers(0, 255, (h, w, 3)).astype(np.uint8)


class TestGroundImage:
    def test_two_grounded_spans(self):
        resp = {"caption": "a boat and a tree",
                "entities": [
                    {"noun_chunk": "a wooden boat", "root": "boat",
                     "bboxes": [[0.1, 0.1, 0.4, 0.4]]},
                    {"noun_chunk": "a tall tree", "root": "tree",
                     "bboxes": [[0.5, 0.5, 0.9, 0.9]]},
                ]}
        out = ground_image(rgb(100, 100), FixtureGrounder(resp))
        assert len(out.entities) == 2
        assert out.entities[0].bboxes == [(10, 10, 40, 40)]
        assert out.caption == "a boat and a tree"

    def test_multi_bbox_entity_stays_single(self):
        resp = {"caption": "birds", "entities": [
            {"noun_chunk": "three white birds", "root": "birds",
             "bboxes": [[0.0, 0.0, 0.2, 0.2], [0.3, 0.3, 0.5, 0.5],
                        [0.6, 0.6, 0.8, 0.8]]}]}
        out = ground_image(rgb(100, 100), FixtureGrounder(resp))
        assert len(out.entities) == 1
        assert len(out.entities[0].bboxes) == 3

    def test_empty_grounding(self):
        out = ground_image(rgb(50, 50), FixtureGrounder({"caption": "", "entities": []}))
        assert out.entities == []

    def test_area_filter_applied(self):
        resp = {"caption": "x", "entities": [
            {"noun_chunk": "tiny dot", "root": "dot",
             "bboxes": [[0.0, 0.0, 0.05, 0.05]]},  # 0.25% -> dropped
            {"noun_chunk": "huge wall", "root": "wall",
             "bboxes": [[0.0, 0.0, 1.0, 0.9]]},  # 90% -> dropped
            {"noun_chunk": "a door", "root": "door",
             "bboxes": [[0.2, 0.2, 0.5, 0.6]]}]}
        out = ground_image(rgb(100, 100), FixtureGrounder(resp))
        assert [e.noun_chunk for e in out.entities] == ["a door"]

    def test_bad_provider_root_replaced(self):
        resp = {"caption": "x", "entities": [
            {"noun_chunk": "an old stone bridge", "root": "not in chunk at all",
             "bboxes": [[0.1, 0.1, 0.6, 0.6]]}]}
        out = ground_image(rgb(100, 100), FixtureGrounder(resp))
        assert out.entities[0].root == "bridge"

    def test_default_root_extractor(self):
        assert default_root_extractor("a wooden boat") == "boat"
        assert default_root_extractor("the Eiffel Tower!") == "tower"


class TestCaptionObject:
    def entity(self, n_boxes):
        boxes = [(10 * i, 10 * i, 10 * i + 20, 10 * i + 20) for i in range(n_boxes)]
        return Entity(noun_chunk="a tall tree", root="tree", bboxes=boxes)

    def test_single_bbox_uses_crop(self):
        cap = ScriptedCaptioner(["The image shows a tall tree in the wind"])
        text, collage_used, pixels = caption_object(rgb(100, 100), self.entity(1), cap)
        assert not collage_used
        assert pixels.shape == (20, 20, 3)
        assert text.startswith("The image shows")

    def test_multi_bbox_uses_collage(self):
        cap = ScriptedCaptioner(["The image shows trees"])
        _, collage_used, pixels = caption_object(rgb(100, 100), self.entity(3), cap)
        assert collage_used
        assert pixels.shape == (40, 40, 3)  # 2x2 grid of 20x20 cells

    def test_long_reply_truncated_to_cap(self):
        long_reply = "word " * 45
        cap = ScriptedCaptioner([long_reply])
        text, _, _ = caption_object(rgb(100, 100), self.entity(1), cap, token_cap=40)
        assert len(text.split()) == 40

    def test_empty_reply_retries_once_then_fails(self):
        cap = ScriptedCaptioner(["", ""])
        with pytest.raises(EmptyCaptionError):
            caption_object(rgb(100, 100), self.entity(1), cap)
        assert cap.calls == 2

    def test_retry_succeeds(self):
        cap = ScriptedCaptioner(["", "The image shows a tree"])
        text, _, _ = caption_object(rgb(100, 100), self.entity(1), cap)
        assert text == "The image shows a tree"

    def test_truncate_preserves_original_text(self):
        text = "The image shows: a boat, a tree."
        assert truncate_tokens(text, 100) == text
        # punctuation counts as a token, so the 4th token is ':'
        assert truncate_tokens(text, 4) == "The image shows:"
        assert truncate_tokens(text, 5) == "The image shows: a"


class TestAnnotateDirectory:
    @pytest.fixture
    def image_dir(self, tmp_path):
        d = tmp_path / "images"
        d.mkdir()
        for i in range(3):
            Image.fromarray(rgb(80, 96, seed=i)).save(d / f"img{i}.png")
        return d

    def test_pipeline_runs_and_is_restartable(self, image_dir, tmp_path):
        out = tmp_path / "out"
        summary = annotate_directory(image_dir, out, MockGroundedCaptioner(),
                                     MockObjectCaptioner(), MockEmbedder(), workers=2)
        assert summary["records_written"] > 0
        records = load_records(out / "records.jsonl")
        for r in records:
            validate_record(r)
            assert r.object_caption.startswith("The image shows")
            assert r.clip_sim is not None

        again = annotate_directory(image_dir, out, MockGroundedCaptioner(),
                                   MockObjectCaptioner(), MockEmbedder(), workers=2)
        assert again["records_written"] == 0  # idempotent rerun
        assert len(load_records(out / "records.jsonl")) == len(records)

    def test_collage_path_iff_multiple_bboxes(self, image_dir, tmp_path):
        summary = annotate_directory(image_dir, tmp_path / "out", MockGroundedCaptioner(),
                                     MockObjectCaptioner(), workers=1)
        records = load_records(tmp_path / "out" / "records.jsonl")
        for r in records:
            assert r.collage_used == (len(r.bboxes) >= 2)

    def test_provider_failure_skips_image(self, image_dir, tmp_path):
        class FlakyGrounder:
            kind = "grounded_captioner"

            def ground(self, image):
                raise TimeoutError("provider down")

        summary = annotate_directory(image_dir, tmp_path / "out", FlakyGrounder(),
                                     MockObjectCaptioner(), workers=1)
        assert summary["records_written"] == 0
        assert summary["images_skipped"] == 3


class TestAudit:
    def test_identical_and_orthogonal(self):
        assert cosine(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == pytest.approx(1.0)
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_fixture_batch_mean(self, tmp_path):
        crops = tmp_path / "crops"
        crops.mkdir()
        embedder = MockEmbedder()
        records, sims = [], []
        for i in range(4):
            pixels = rgb(20, 20, seed=i)
            path = crops / f"c{i}.png"
            Image.fromarray(pixels).save(path)
            caption = f"The image shows object {i}"
            loaded = np.asarray(Image.open(path).convert("RGB"))
            sims.append(cosine(embedder.embed_image(loaded),
                               embedder.embed_text(caption)))
            records.append(AnnotationRecord(
                image_id=f"img{i}", entity_index=0, noun_chunk="object", root="object",
                bboxes=[(0, 0, 10, 10)], object_caption=caption, collage_used=False,
                crop_path=str(path)))
        summary = audit_alignment(records, embedder)
        assert summary["mean_local"] == pytest.approx(float(np.mean(sims)))
        # flagging matches the threshold rule
        assert summary["n_flagged"] == sum(s < 0.28 for s in sims)

    def test_missing_embedder_disables_audit(self):
        assert audit_alignment([], None) == {"enabled": False}
