import numpy as np
import pytest

from trackforge.core import BoundingBox, Detection, normalize
from trackforge.errors import ConfigError, InvalidBoxError, LayoutError
from trackforge.postproc import filter_confidence, nms, parse_output, serialize_detections

from oracles import nms_reference_indices


def make_row(x, y, w, h, obj, cls, dim=8):
    row = np.zeros(6 + dim)
    row[:6] = (x, y, w, h, obj, cls)
    row[6] = 1.0  # unit embedding along the first axis
    return row


class TestParseOutput:
    def test_example_row(self):
        raw = np.stack([make_row(10, 20, 30, 40, 0.9, 1.0)])
        (det,) = parse_output(raw, embedding_dim=8)
        assert det.box == BoundingBox(10, 20, 30, 40)
        assert det.objectness == 0.9
        assert det.class_score == 1.0
        assert det.embedding.shape == (8,)
        assert abs(np.linalg.norm(det.embedding.astype(np.float64)) - 1.0) < 1e-6

    def test_empty_matrix(self):
        assert parse_output(np.zeros((0, 14)), embedding_dim=8) == []

    def test_wrong_width(self):
        with pytest.raises(LayoutError):
            parse_output(np.zeros((1, 13)), embedding_dim=8)

    def test_default_width_is_518(self):
        with pytest.raises(LayoutError):
            parse_output(np.zeros((1, 517)))
        raw = np.zeros((1, 518))
        raw[0, 2:4] = 5.0
        raw[0, 6] = 1.0
        (det,) = parse_output(raw)
        assert det.embedding.shape == (512,)

    def test_no_embeddings(self):
        raw = np.array([[1.0, 2.0, 3.0, 4.0, 0.5, 1.0]])
        (det,) = parse_output(raw, embedding_dim=0)
        assert det.embedding is None

    def test_invalid_box_row(self):
        with pytest.raises(InvalidBoxError):
            parse_output(np.stack([make_row(0, 0, -1, 4, 0.5, 1.0)]), embedding_dim=8)

    def test_serialize_round_trip(self):
        rng = np.random.default_rng(3)
        dets = [
            Detection(
                box=BoundingBox(*rng.uniform(1, 50, 4)),
                objectness=float(rng.uniform(0, 1)),
                class_score=float(rng.uniform(0, 1)),
                embedding=normalize(rng.standard_normal(8)),
            )
            for _ in range(5)
        ]
        again = parse_output(serialize_detections(dets, 8), 8)
        for a, b in zip(dets, again):
            assert a.box == b.box
            assert a.objectness == b.objectness
            assert a.class_score == b.class_score
            np.testing.assert_array_equal(a.embedding, b.embedding)


def _det(score, box=None, index=0):
    return Detection(
        box=box or BoundingBox(10.0 * index, 0.0, 5.0, 5.0),
        objectness=score,
        embedding=None,
    )


class TestFilterConfidence:
    def test_keeps_above_threshold(self):
        dets = [_det(0.4, index=0), _det(0.6, index=1)]
        assert filter_confidence(dets, 0.5) == [dets[1]]

    def test_zero_threshold_is_identity(self):
        dets = [_det(0.1, index=i) for i in range(4)]
        assert filter_confidence(dets, 0.0) == dets

    def test_boundary_one(self):
        dets = [_det(1.0, index=0), _det(0.999, index=1)]
        assert filter_confidence(dets, 1.0) == [dets[0]]

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(4)
        dets = [_det(float(rng.uniform(0, 1)), index=i) for i in range(20)]
        previous = len(dets)
        for threshold in np.linspace(0, 1, 11):
            kept = len(filter_confidence(dets, float(threshold)))
            assert kept <= previous
            previous = kept

    def test_invalid_threshold(self):
        with pytest.raises(ConfigError):
            filter_confidence([], 1.5)


def random_detections(rng, count, canvas=100.0):
    dets = []
    for _ in range(count):
        w, h = rng.uniform(5, 30, 2)
        box = BoundingBox(rng.uniform(0, canvas), rng.uniform(0, canvas), w, h)
        dets.append(Detection(box=box, objectness=float(rng.uniform(0, 1)), embedding=None))
    return dets


class TestNms:
    def test_single_detection(self):
        dets = [_det(0.5)]
        assert nms(dets, 0.4) == dets

    def test_identical_boxes_keep_higher_score(self):
        box = BoundingBox(0, 0, 10, 10)
        low, high = _det(0.8, box), _det(0.9, box)
        assert nms([low, high], 0.4) == [high]

    def test_equal_scores_keep_lower_index(self):
        box = BoundingBox(0, 0, 10, 10)
        first, second = _det(0.9, box), _det(0.9, box)
        assert nms([first, second], 0.4) == [first]

    def test_survivor_pairs_below_threshold(self):
        rng = np.random.default_rng(6)
        survivors = nms(random_detections(rng, 40), 0.3)
        from trackforge.core import iou

        for i, a in enumerate(survivors):
            for b in survivors[i + 1 :]:
                assert iou(a.box, b.box) <= 0.3

    def test_idempotent(self):
        rng = np.random.default_rng(7)
        dets = random_detections(rng, 40)
        once = nms(dets, 0.4)
        assert nms(once, 0.4) == once

    def test_matches_reference_on_random_sets(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            dets = random_detections(rng, 50)
            # quantized scores provoke ties
            dets = [
                Detection(box=d.box, objectness=round(d.objectness, 1), embedding=None)
                for d in dets
            ]
            expected = nms_reference_indices(
                [d.box.as_tlwh() for d in dets], [d.objectness for d in dets], 0.4
            )
            assert nms(dets, 0.4) == [dets[i] for i in expected]

    def test_invalid_threshold(self):
        with pytest.raises(ConfigError):
            nms([], 0.0)
        with pytest.raises(ConfigError):
            nms([], 1.0)
