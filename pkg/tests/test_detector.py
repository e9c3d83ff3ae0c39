"""Detector chain tests: NMS, crop classification, full detect()."""

from __future__ import annotations

import numpy as np
import pytest

from oscdet.backends.synthetic import SyntheticBackend
from oscdet.detector import (
    DetectConfig,
    Detection,
    classify_proposals,
    crop_resized,
    default_tile_sides,
    detect,
    nms,
    response_heatmap,
)
from oscdet.geometry import BoundingBox, iou
from oscdet.proposals import scan_proposals
from oscdet.scenes import Disc, disc_scene


def slow_nms(dets, iou_threshold):
    """Reference greedy suppression, deliberately quadratic and index-based."""
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept = []
    removed = set()
    for i in order:
        if i in removed:
            continue
        kept.append(dets[i])
        for j in order:
            if j == i or j in removed:
                continue
            if iou(dets[i].box, dets[j].box) > iou_threshold:
                removed.add(j)
    return kept


def random_detections(rng, count, span=200.0):
    dets = []
    for _ in range(count):
        x = rng.uniform(0, span)
        y = rng.uniform(0, span)
        w = rng.uniform(5, 60)
        h = rng.uniform(5, 60)
        dets.append(Detection(BoundingBox(x, y, w, h), float(rng.uniform(0, 1))))
    return dets


@pytest.fixture(scope="module")
def backend():
    return SyntheticBackend()


@pytest.fixture(scope="module")
def two_disc_scene():
    discs = [Disc(110.0, 170.0, 52.0), Disc(330.0, 170.0, 48.0)]
    return disc_scene(454, 340, discs, seed=41), discs


class TestDetection:
    def test_fields(self):
        d = Detection(BoundingBox(1, 2, 3, 4), 0.5)
        assert d.box == BoundingBox(1, 2, 3, 4)
        assert d.score == 0.5

    @pytest.mark.parametrize("score", [-0.01, 1.01, 2.0])
    def test_score_out_of_range_rejected(self, score):
        with pytest.raises(ValueError, match="score"):
            Detection(BoundingBox(0, 0, 1, 1), score)

    def test_score_boundaries_allowed(self):
        Detection(BoundingBox(0, 0, 1, 1), 0.0)
        Detection(BoundingBox(0, 0, 1, 1), 1.0)


class TestDetectConfig:
    def test_defaults(self):
        cfg = DetectConfig(osc_channel=57)
        assert cfg.nms_iou == 0.3
        assert cfg.accept_score == 0.5
        assert cfg.window_sides is None
        assert cfg.tile_stride_ratio == 0.5

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.5])
    def test_nms_iou_open_interval(self, bad):
        with pytest.raises(ValueError, match="nms_iou"):
            DetectConfig(osc_channel=0, nms_iou=bad)

    def test_negative_channel_rejected(self):
        with pytest.raises(ValueError, match="osc_channel"):
            DetectConfig(osc_channel=-1)

    @pytest.mark.parametrize("bad", [-0.1, 1.1])
    def test_accept_score_range(self, bad):
        with pytest.raises(ValueError, match="accept_score"):
            DetectConfig(osc_channel=0, accept_score=bad)


class TestDefaultTileSides:
    def test_landscape(self):
        assert default_tile_sides(454, 340) == [340, 170, 85]

    def test_odd_min_dim_rounds_half_down(self):
        # 101 -> halves 50 and 25 (half-down rounding of 50.5 and 25.25)
        assert default_tile_sides(300, 101) == [101, 50, 25]

    def test_tiny_image_drops_degenerate_sides(self):
        assert default_tile_sides(5, 5) == [5, 2]


class TestCropResized:
    def test_output_shape_and_dtype(self):
        rng = np.random.default_rng(3)
        img = rng.integers(0, 256, size=(60, 80, 3), dtype=np.uint8)
        out = crop_resized(img, BoundingBox(10, 5, 30, 40), 227)
        assert out.shape == (227, 227, 3)
        assert out.dtype == np.uint8

    def test_box_clipped_to_image(self):
        img = np.full((50, 50, 3), 128, dtype=np.uint8)
        out = crop_resized(img, BoundingBox(-20, -20, 60, 60), 32)
        assert out.shape == (32, 32, 3)
        np.testing.assert_array_equal(out, 128)

    def test_degenerate_box_rejected(self):
        img = np.zeros((50, 50, 3), dtype=np.uint8)
        with pytest.raises(ValueError, match="croppable"):
            crop_resized(img, BoundingBox(200, 200, 30, 30), 32)


class TestNms:
    def test_empty(self):
        assert nms([], 0.3) == []

    def test_single_detection_is_identity(self):
        d = Detection(BoundingBox(10, 10, 20, 20), 0.7)
        assert nms([d], 0.3) == [d]

    def test_two_identical_boxes_keep_higher_score(self):
        box = BoundingBox(10, 10, 20, 20)
        a = Detection(box, 0.9)
        b = Detection(box, 0.8)
        assert nms([b, a], 0.3) == [a]

    def test_disjoint_boxes_all_survive(self):
        dets = [
            Detection(BoundingBox(0, 0, 10, 10), 0.5),
            Detection(BoundingBox(100, 0, 10, 10), 0.9),
            Detection(BoundingBox(0, 100, 10, 10), 0.7),
        ]
        out = nms(dets, 0.3)
        assert sorted(out, key=lambda d: -d.score) == out
        assert set((d.box.x, d.box.y) for d in out) == {(0, 0), (100, 0), (0, 100)}

    def test_matches_quadratic_reference(self):
        rng = np.random.default_rng(11)
        dets = random_detections(rng, 200)
        assert nms(dets, 0.3) == slow_nms(dets, 0.3)

    @pytest.mark.parametrize("threshold", [0.1, 0.5, 0.9])
    def test_matches_reference_across_thresholds(self, threshold):
        rng = np.random.default_rng(23)
        dets = random_detections(rng, 120)
        assert nms(dets, threshold) == slow_nms(dets, threshold)

    def test_survivors_form_antichain(self):
        rng = np.random.default_rng(5)
        out = nms(random_detections(rng, 150), 0.3)
        for i, a in enumerate(out):
            for b in out[i + 1 :]:
                assert iou(a.box, b.box) <= 0.3

    def test_never_invents_detections(self):
        rng = np.random.default_rng(7)
        dets = random_detections(rng, 80)
        out = nms(dets, 0.4)
        for d in out:
            assert d in dets

    def test_tie_keeps_earlier_input_index(self):
        # two overlapping same-score boxes: the first one listed survives
        a = Detection(BoundingBox(10, 10, 20, 20), 0.6)
        b = Detection(BoundingBox(12, 12, 20, 20), 0.6)
        assert nms([a, b], 0.3) == [a]
        assert nms([b, a], 0.3) == [b]

    def test_output_sorted_by_score_descending(self):
        rng = np.random.default_rng(19)
        out = nms(random_detections(rng, 100), 0.2)
        scores = [d.score for d in out]
        assert scores == sorted(scores, reverse=True)

    def test_boundary_overlap_not_suppressed(self):
        # iou exactly at the threshold survives; suppression needs strict >
        a = Detection(BoundingBox(0, 0, 10, 10), 0.9)
        b = Detection(BoundingBox(5, 0, 10, 10), 0.8)  # iou = 50/150 = 1/3
        assert nms([a, b], 1 / 3) == [a, b]
        assert nms([a, b], 0.33) == [a]


class TestClassifyProposals:
    def test_empty_input(self, backend):
        img = np.zeros((50, 50, 3), dtype=np.uint8)
        assert classify_proposals(backend, img, []) == []

    def test_disc_box_kept_blank_box_dropped(self, backend, two_disc_scene):
        img, discs = two_disc_scene
        disc_box = discs[0].box()
        blank_box = BoundingBox(190.0, 10.0, 80.0, 80.0)
        out = classify_proposals(backend, img, [disc_box, blank_box])
        assert len(out) == 1
        assert out[0].box == disc_box
        assert out[0].score >= 0.5

    def test_box_score_pairing_preserved(self, backend, two_disc_scene):
        img, discs = two_disc_scene
        boxes = [discs[1].box(), discs[0].box()]
        out = classify_proposals(backend, img, boxes, accept_score=0.0)
        assert [d.box for d in out] == boxes

    def test_accept_score_keeps_boundary(self, backend, two_disc_scene):
        img, discs = two_disc_scene
        box = discs[0].box()
        score = classify_proposals(backend, img, [box], accept_score=0.0)[0].score
        assert classify_proposals(backend, img, [box], accept_score=score) != []

    def test_bad_box_error_names_index(self, backend, two_disc_scene):
        img, discs = two_disc_scene
        boxes = [discs[0].box(), BoundingBox(9000.0, 9000.0, 10.0, 10.0)]
        with pytest.raises(ValueError, match="proposal 1"):
            classify_proposals(backend, img, boxes)


class TestResponseHeatmap:
    def test_byte_scale_and_shape(self, backend, two_disc_scene):
        img, _ = two_disc_scene
        heat = response_heatmap(backend, img, DetectConfig(osc_channel=57))
        assert heat.values.shape == img.shape[:2]
        assert heat.values.min() >= 0.0
        assert heat.values.max() == 255.0

    def test_hot_at_discs_cold_at_background(self, backend, two_disc_scene):
        img, discs = two_disc_scene
        heat = response_heatmap(backend, img, DetectConfig(osc_channel=57))
        v = heat.values
        for d in discs:
            assert v[int(d.cy), int(d.cx)] > 150.0
        assert v[10, 220] < 80.0

    def test_non_rgb_rejected(self, backend):
        with pytest.raises(ValueError, match="RGB"):
            response_heatmap(
                backend,
                np.zeros((50, 50), dtype=np.uint8),
                DetectConfig(osc_channel=57),
            )


class TestDetect:
    def test_blank_image_yields_nothing(self, backend):
        img = np.full((160, 160, 3), 25, dtype=np.uint8)
        assert detect(backend, img, DetectConfig(osc_channel=57)) == []

    def test_two_discs_found(self, backend, two_disc_scene):
        img, discs = two_disc_scene
        out = detect(backend, img, DetectConfig(osc_channel=57))
        assert len(out) == 2
        # each disc matched by exactly one detection at IoU > 0.5
        for d in discs:
            matches = [det for det in out if iou(det.box, d.box()) > 0.5]
            assert len(matches) == 1
            assert matches[0].score >= 0.5

    def test_deterministic(self, backend, two_disc_scene):
        img, _ = two_disc_scene
        cfg = DetectConfig(osc_channel=57)
        assert detect(backend, img, cfg) == detect(backend, img, cfg)

    def test_detections_come_from_proposals(self, backend, two_disc_scene):
        img, _ = two_disc_scene
        cfg = DetectConfig(osc_channel=57)
        heat = response_heatmap(backend, img, cfg)
        proposal_boxes = {p for p in scan_proposals(heat, cfg.proposal)}
        for det in detect(backend, img, cfg):
            assert det.box in proposal_boxes

    def test_noise_channel_on_blank_image_yields_nothing(self, backend):
        # a non-planted channel proposes windows all over, but every crop of a
        # blank image still fails the classification stage
        img = np.full((160, 160, 3), 25, dtype=np.uint8)
        out = detect(backend, img, DetectConfig(osc_channel=3))
        assert out == []
