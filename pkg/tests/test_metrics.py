"""
Tests for similarities, AP/AR sweeps, ground-truth substitution and the
per-category statistics.
"""

import csv

import numpy as np
import pytest

from ktnet import body
from ktnet.errors import MetricError
from ktnet.metrics import (
    KAPPA,
    SUBSTITUTION_ROWS,
    CategoryAccumulator,
    ImageMatches,
    SubstitutionFlags,
    compute_ap_ar,
    evaluate_predictions,
    gps,
    gt_predictions,
    load_sigmas,
    match_image,
    oks,
    per_category_scene,
    summarize,
)


def brute_force_ap(images, threshold):
    """Greedy matching and 101-point interpolated AP written out longhand."""
    records = []
    n_pos = 0
    for image in images:
        sim, scores = image.similarity, image.scores
        n_gt, n_pred = sim.shape
        n_pos += n_gt
        taken = set()
        for p in sorted(range(n_pred), key=lambda i: -scores[i]):
            candidates = [g for g in range(n_gt) if g not in taken and sim[g, p] >= threshold]
            if candidates:
                g = max(candidates, key=lambda i: sim[i, p])
                taken.add(g)
                records.append((scores[p], True))
            else:
                records.append((scores[p], False))
    if n_pos == 0:
        return None, None
    records.sort(key=lambda r: -r[0])
    precision, recall = [], []
    tp = fp = 0
    for _, hit in records:
        tp += hit
        fp += not hit
        precision.append(tp / (tp + fp))
        recall.append(tp / n_pos)
    total = 0.0
    for r in np.linspace(0.0, 1.0, 101):
        reachable = [p for p, rc in zip(precision, recall) if rc >= r]
        total += max(reachable) if reachable else 0.0
    return total / 101, (recall[-1] if recall else 0.0)


def random_images(rng):
    images = []
    for _ in range(rng.integers(1, 4)):
        n_gt = int(rng.integers(0, 5))
        n_pred = int(rng.integers(0, 6))
        images.append(
            ImageMatches(
                similarity=rng.random((n_gt, n_pred)),
                scores=rng.random(n_pred),
                gt_areas=np.full(n_gt, 5000.0),
                pred_areas=np.full(n_pred, 5000.0),
            )
        )
    return images


# =============================================================================
# Similarities
# =============================================================================


class TestSimilarity:
    """Point and keypoint similarities."""

    def test_gps_exact_prediction(self):
        points = np.array([[1.5, 2.5, 2, 0.3, 0.4], [3.5, 2.5, 15, 0.9, 0.1]])
        lookup = lambda x, y: (points[:, 2].astype(int), points[:, 3], points[:, 4])  # noqa: E731
        assert gps(points, lookup) == pytest.approx(1.0)

    def test_gps_background_prediction(self):
        points = np.array([[1.5, 2.5, 2, 0.3, 0.4]])
        lookup = lambda x, y: (np.zeros(1, dtype=int), np.zeros(1), np.zeros(1))  # noqa: E731
        expected = np.exp(-(body.GEODESIC_CAP**2) / (2 * KAPPA**2))
        assert gps(points, lookup) == pytest.approx(expected)

    def test_gps_without_points(self):
        assert gps(np.zeros((0, 5)), lambda x, y: (x, x, x)) is None

    def test_oks(self):
        sigmas = load_sigmas()
        gt = np.zeros((body.NUM_KEYPOINTS, 3))
        gt[5] = (10.0, 10.0, 1.0)
        pred = np.zeros((body.NUM_KEYPOINTS, 3))
        pred[5, :2] = (13.0, 14.0)
        expected = np.exp(-25.0 / (2 * 400.0 * (2 * sigmas[5]) ** 2))
        assert oks(gt, pred, 400.0, sigmas) == pytest.approx(expected)
        assert oks(gt, gt, 400.0, sigmas) == pytest.approx(1.0)

    def test_oks_without_visible_joints(self):
        gt = np.zeros((body.NUM_KEYPOINTS, 3))
        assert oks(gt, gt, 100.0) is None

    def test_sigmas(self):
        sigmas = load_sigmas()
        assert sigmas.shape == (17,)
        assert sigmas[0] == pytest.approx(0.026)


# =============================================================================
# Matching and AP/AR
# =============================================================================


class TestMatching:
    """Greedy per-image matching."""

    def test_non_ignored_gt_wins(self):
        image = ImageMatches(
            similarity=np.array([[0.9], [0.6]]),
            scores=np.array([0.8]),
            gt_areas=np.array([100.0, 2000.0]),
            pred_areas=np.array([2000.0]),
        )
        matched, ignored, n_pos = match_image(image, 0.5, (1024.0, 9216.0))
        assert matched.tolist() == [True]
        assert ignored.tolist() == [False]
        assert n_pos == 1

    def test_ties_keep_lower_gt_index(self):
        image = ImageMatches(
            similarity=np.array([[0.7, 0.7], [0.7, 0.2]]),
            scores=np.array([0.9, 0.5]),
            gt_areas=np.array([5000.0, 5000.0]),
            pred_areas=np.array([5000.0, 5000.0]),
        )
        matched, _, _ = match_image(image, 0.5, (0.0, np.inf))
        # prediction 0 takes gt 0, so prediction 1 has only gt 1 at 0.2
        assert matched.tolist() == [True, False]

    def test_unmatched_prediction_outside_range_is_ignored(self):
        image = ImageMatches(
            similarity=np.array([[0.1]]),
            scores=np.array([0.8]),
            gt_areas=np.array([2000.0]),
            pred_areas=np.array([50.0]),
        )
        matched, ignored, _ = match_image(image, 0.5, (1024.0, 9216.0))
        assert not matched[0] and ignored[0]


class TestAP:
    """AP/AR sweeps."""

    def test_against_brute_force(self):
        rng = np.random.default_rng(2024)
        for _ in range(500):
            images = random_images(rng)
            threshold = float(rng.choice([0.3, 0.5, 0.75]))
            expected_ap, expected_ar = brute_force_ap(images, threshold)
            ap, ar = compute_ap_ar(images, (threshold,))
            if expected_ap is None:
                assert ap is None and ar is None
            else:
                assert ap == pytest.approx(expected_ap, abs=1e-12)
                assert ar == pytest.approx(expected_ar, abs=1e-12)

    def test_perfect_predictions(self):
        image = ImageMatches(np.eye(3), np.array([0.9, 0.8, 0.7]), np.full(3, 5000.0), np.full(3, 5000.0))
        assert compute_ap_ar([image]) == (pytest.approx(1.0), pytest.approx(1.0))

    def test_no_ground_truth(self):
        image = ImageMatches(np.zeros((0, 2)), np.array([0.5, 0.4]), np.zeros(0), np.full(2, 10.0))
        assert compute_ap_ar([image]) == (None, None)

    def test_summary_strata(self):
        image = ImageMatches(np.eye(2), np.array([0.9, 0.8]), np.array([2000.0, 3000.0]), np.array([2000.0, 3000.0]))
        summary = summarize([image])
        assert summary.ap == pytest.approx(1.0)
        assert summary.ap_m == pytest.approx(1.0)
        assert summary.ap_l is None
        assert summary.ar_l is None


# =============================================================================
# Substitution and per-category statistics
# =============================================================================


class TestSubstitution:
    """Replacing predicted channels by ground truth."""

    def test_rows(self):
        assert len(SUBSTITUTION_ROWS) == 7
        assert SUBSTITUTION_ROWS[0].label() == "none"
        assert SUBSTITUTION_ROWS[-1].label() == "body+surface+u+v"

    def test_full_substitution_is_perfect(self, scenes):
        preds = [gt_predictions(scene) for scene in scenes]
        report = evaluate_predictions(scenes, preds, flags=SubstitutionFlags.all())
        assert report.densepose.ap == pytest.approx(1.0)
        assert report.densepose.ar == pytest.approx(1.0)

    def test_no_substitution_of_empty_predictions(self, scenes):
        preds = [gt_predictions(scene) for scene in scenes]
        report = evaluate_predictions(scenes, preds)
        assert report.densepose.ap == pytest.approx(0.0)

    def test_per_category_with_truth(self, scenes):
        acc = CategoryAccumulator()
        for scene in scenes:
            acc.merge(per_category_scene(scene, gt_predictions(scene), SubstitutionFlags.all()))
        rows = acc.rows()
        assert [row.part for row in rows] == list(body.STANDARD_PARTS) + ["all"]
        for row in rows:
            if row.points:
                assert row.ar == pytest.approx(100.0)
                assert row.u_mse == pytest.approx(0.0)
                assert row.uv_gd == pytest.approx(0.0)
            else:
                assert row.ar is None
        assert rows[-1].points == sum(row.points for row in rows[:-1])

    def test_length_mismatch(self, scenes):
        with pytest.raises(MetricError):
            evaluate_predictions(scenes, [])


class TestReport:
    """Report files."""

    def test_csv_and_json(self, scenes, tmp_path):
        preds = [gt_predictions(scene) for scene in scenes]
        report = evaluate_predictions(scenes, preds, flags=SubstitutionFlags(body=True))
        report.write_json(tmp_path / "report.json")
        report.write_csv(tmp_path / "report.csv", tmp_path / "per_category.csv")
        assert report.to_dict()["flags"] == "body"
        with open(tmp_path / "report.csv", newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0][:3] == ["task", "ap", "ap50"]
        assert [r[0] for r in rows[1:]] == ["densepose", "keypoints"]
        with open(tmp_path / "per_category.csv", newline="", encoding="utf-8") as f:
            parts = list(csv.DictReader(f))
        assert len(parts) == len(body.STANDARD_PARTS) + 1
        for row in parts:
            if row["points"] == "0":
                assert row["ar"] == ""
