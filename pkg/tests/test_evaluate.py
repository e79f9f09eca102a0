import numpy as np
import pytest

from oracles import binarize_loop, cumulative_loop, dice_enumerated
from conftest import PHANTOM_REP_SLICES, make_slice

import tumorbox.evaluate as ev
from tumorbox.errors import EmptyGroundTruthError, FormatError, ValidationError
from tumorbox.evaluate import (
    ManifestCase,
    binarize_gt,
    cumulative_gt,
    dice_box,
    evaluate_case,
    evaluate_cohort,
    gt_box,
    read_manifest,
)
from tumorbox.mha import write_mha
from tumorbox.pipeline import BBox, ExtractParams
from tumorbox.volume import Slice, Volume


class TestBinarize:
    def test_all_brats_labels(self):
        slc = Slice(data=np.array([[0, 1, 2, 3, 4]], dtype=np.int16), index=1)
        assert binarize_gt(slc).data.tolist() == [[0, 1, 1, 1, 1]]

    def test_all_zero(self):
        assert np.all(binarize_gt(make_slice(np.zeros((3, 3)))).data == 0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(61)
        data = rng.integers(0, 5, size=(9, 9)).astype(np.int16)
        got = binarize_gt(Slice(data=data, index=2))
        assert np.array_equal(got.data, binarize_loop(data))


class TestCumulative:
    def test_single_slice_support(self):
        data = np.zeros((155, 6, 6), dtype=np.int16)
        data[79, 2:4, 1:3] = 2  # tumor only in slice 80
        vol = Volume(data=data, kind="label")
        got = cumulative_gt(vol)
        assert np.array_equal(got.data, binarize_loop(data[79]))

    def test_empty_volume(self):
        vol = Volume(data=np.zeros((5, 4, 4), dtype=np.int16), kind="label")
        assert np.all(cumulative_gt(vol).data == 0)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(62)
        data = (rng.random((8, 7, 7)) < 0.1).astype(np.int16)
        vol = Volume(data=data, kind="label")
        assert np.array_equal(cumulative_gt(vol).data, cumulative_loop(data))

    def test_ball_projects_to_equatorial_disk(self, phantom_cases):
        spec, _, gt = phantom_cases[0]
        got = cumulative_gt(gt).data.astype(bool)
        tx, ty, tz = spec.tumor_center
        r = spec.tumor_radius
        cols = np.arange(gt.width, dtype=np.float64)[None, :]
        rows = np.arange(gt.height, dtype=np.float64)[:, None]
        # voxel (x, y, z) is in the ball iff (x-tx)^2+(y-ty)^2 <= r^2-(z-tz)^2;
        # maximised over the integer z closest to tz
        zs = np.arange(gt.depth, dtype=np.float64)
        best_z = zs[np.argmin(np.abs(zs - tz))]
        disk = (cols - tx) ** 2 + (rows - ty) ** 2 <= r**2 - (best_z - tz) ** 2
        assert np.array_equal(got, disk)

    def test_union_of_binarized_slices(self):
        rng = np.random.default_rng(63)
        data = (rng.random((6, 5, 5)) < 0.2).astype(np.int16) * 3
        vol = Volume(data=data, kind="label")
        union = np.zeros((5, 5), dtype=bool)
        for k in range(1, 7):
            union |= binarize_gt(Slice(data=data[k - 1], index=k)).data.astype(bool)
        assert np.array_equal(cumulative_gt(vol).data.astype(bool), union)


class TestGtBox:
    def test_minimal_box(self):
        data = np.zeros((9, 9), dtype=np.uint8)
        data[2, 3] = data[5, 7] = 1
        box = gt_box(Slice(data=data, index=0))
        assert (box.row_min, box.col_min, box.row_max, box.col_max) == (2, 3, 5, 7)

    def test_empty_raises(self):
        with pytest.raises(EmptyGroundTruthError):
            gt_box(Slice(data=np.zeros((4, 4), dtype=np.uint8), index=0))


class TestDiceBox:
    DIMS = (240, 240)

    def test_identical_boxes_standard_exactly_one(self):
        a = BBox(10, 10, 30, 40)
        assert dice_box(a, a, self.DIMS, "standard") == 1.0

    def test_disjoint_zero_under_both(self):
        a = BBox(0, 0, 4, 4)
        b = BBox(50, 50, 60, 60)
        assert dice_box(a, b, self.DIMS, "standard") == 0.0
        assert dice_box(a, b, self.DIMS, "paper-union") == 0.0

    def test_worked_overlap_case(self):
        a = BBox(0, 0, 9, 9)
        b = BBox(5, 5, 14, 14)
        assert dice_box(a, b, self.DIMS, "standard") == pytest.approx(0.25, abs=1e-12)
        assert dice_box(a, b, self.DIMS, "paper-union") == pytest.approx(50 / 175, abs=1e-12)

    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(64)
        for _ in range(25):
            r0, c0 = rng.integers(0, 180, 2)
            a = BBox(int(r0), int(c0), int(r0 + rng.integers(0, 50)), int(c0 + rng.integers(0, 50)))
            r1, c1 = rng.integers(0, 180, 2)
            b = BBox(int(r1), int(c1), int(r1 + rng.integers(0, 50)), int(c1 + rng.integers(0, 50)))
            for formula in ("standard", "paper-union"):
                assert dice_box(a, b, self.DIMS, formula) == pytest.approx(
                    dice_enumerated(a, b, formula), abs=1e-12
                )

    def test_symmetry_and_translation(self):
        a = BBox(3, 4, 10, 12)
        b = BBox(6, 2, 14, 9)
        for formula in ("standard", "paper-union"):
            assert dice_box(a, b, self.DIMS, formula) == dice_box(b, a, self.DIMS, formula)
            a2 = BBox(a.row_min + 5, a.col_min + 7, a.row_max + 5, a.col_max + 7)
            b2 = BBox(b.row_min + 5, b.col_min + 7, b.row_max + 5, b.col_max + 7)
            assert dice_box(a, b, self.DIMS, formula) == pytest.approx(
                dice_box(a2, b2, self.DIMS, formula), abs=1e-15
            )

    def test_paper_union_geq_standard_when_overlapping(self):
        rng = np.random.default_rng(65)
        for _ in range(25):
            r0, c0 = rng.integers(0, 100, 2)
            a = BBox(int(r0), int(c0), int(r0 + rng.integers(1, 40)), int(c0 + rng.integers(1, 40)))
            r1, c1 = rng.integers(0, 100, 2)
            b = BBox(int(r1), int(c1), int(r1 + rng.integers(1, 40)), int(c1 + rng.integers(1, 40)))
            std = dice_box(a, b, self.DIMS, "standard")
            pu = dice_box(a, b, self.DIMS, "paper-union")
            assert pu >= std - 1e-15

    def test_paper_union_flags_above_one(self, caplog):
        a = BBox(10, 10, 20, 20)
        with caplog.at_level("WARNING"):
            value = dice_box(a, a, self.DIMS, "paper-union")
        assert value == pytest.approx(2.0)
        assert any("exceeds 1" in rec.message for rec in caplog.records)

    def test_box_outside_dims_rejected(self):
        with pytest.raises(ValidationError):
            dice_box(BBox(0, 0, 300, 300), BBox(0, 0, 1, 1), self.DIMS)

    def test_unknown_formula_rejected(self):
        with pytest.raises(ValidationError):
            dice_box(BBox(0, 0, 1, 1), BBox(0, 0, 1, 1), self.DIMS, "jaccard")


class TestEvaluateCase:
    def test_phantom_em_scores_high(self, phantom_cases, phantom_atlases):
        spec, vol, gt = phantom_cases[0]
        params = ExtractParams(representative_slices=PHANTOM_REP_SLICES, radius_margin=1.0)
        result = evaluate_case(vol, gt, phantom_atlases, method="em", params=params)
        assert not result.failed
        assert result.dice >= 0.7

    def test_injected_identical_boxes_score_one(self, monkeypatch, phantom_cases, phantom_atlases):
        spec, vol, gt = phantom_cases[0]
        target = gt_box(cumulative_gt(gt))

        class Fake:
            bbox = target
            report = None

        monkeypatch.setattr(ev, "run_pipeline", lambda *a, **k: Fake())
        params = ExtractParams(representative_slices=PHANTOM_REP_SLICES)
        result = evaluate_case(vol, gt, phantom_atlases, params=params)
        assert result.dice == 1.0

    def test_failed_detection_scores_zero_with_flag(self, phantom_cases, phantom_atlases):
        spec, _, gt = phantom_cases[0]
        zero = Volume(data=np.zeros((64, 128, 128)))
        params = ExtractParams(representative_slices=PHANTOM_REP_SLICES)
        result = evaluate_case(zero, gt, phantom_atlases, params=params)
        assert result.failed
        assert result.dice == 0.0
        assert result.bbox_pred is None


class TestManifest:
    def test_round_trip_and_relative_paths(self, tmp_path):
        man = tmp_path / "manifest.csv"
        man.write_text("intensity_path,gt_path,cohort\ncase_flair.mha,case_gt.mha,HGG\n")
        cases = read_manifest(man)
        assert len(cases) == 1
        assert cases[0].case_id == "case_flair"
        assert cases[0].intensity_path == tmp_path / "case_flair.mha"
        assert cases[0].cohort == "HGG"

    def test_missing_columns_rejected(self, tmp_path):
        man = tmp_path / "bad.csv"
        man.write_text("a,b\n1,2\n")
        with pytest.raises(FormatError):
            read_manifest(man)


def write_phantom_manifest(tmp_path, cases):
    lines = ["intensity_path,gt_path,cohort"]
    for i, (spec, vol, gt) in enumerate(cases):
        write_mha(vol, tmp_path / f"p{i}_flair.mha")
        write_mha(gt, tmp_path / f"p{i}_gt.mha")
        lines.append(f"p{i}_flair.mha,p{i}_gt.mha,Phantom")
    man = tmp_path / "manifest.csv"
    man.write_text("\n".join(lines) + "\n")
    return man


class TestEvaluateCohort:
    def test_single_case_mean(self, tmp_path, phantom_cases, phantom_atlases):
        man = write_phantom_manifest(tmp_path, phantom_cases[:1])
        cases = read_manifest(man)
        params = ExtractParams(representative_slices=PHANTOM_REP_SLICES, radius_margin=1.0)
        result = evaluate_cohort(cases, atlases=phantom_atlases, method="kmeans", params=params)
        assert result.n == 1
        assert result.mean_dice == pytest.approx(result.cases[0].dice)

    def test_unreadable_case_recorded_not_dropped(self, tmp_path, phantom_cases, phantom_atlases):
        man = write_phantom_manifest(tmp_path, phantom_cases[:1])
        text = man.read_text() + "ghost_flair.mha,ghost_gt.mha,Phantom\n"
        man.write_text(text)
        cases = read_manifest(man)
        params = ExtractParams(representative_slices=PHANTOM_REP_SLICES, radius_margin=1.0)
        result = evaluate_cohort(cases, atlases=phantom_atlases, method="kmeans", params=params)
        assert result.n == 1
        assert len(result.errors) == 1
        assert result.errors[0].case_id == "ghost_flair"
        assert result.summary_dict()["n_errors"] == 1

    def test_mean_permutation_invariant(self, tmp_path, phantom_cases, phantom_atlases):
        man = write_phantom_manifest(tmp_path, phantom_cases)
        cases = read_manifest(man)
        params = ExtractParams(representative_slices=PHANTOM_REP_SLICES, radius_margin=1.0)
        fwd = evaluate_cohort(cases, atlases=phantom_atlases, method="kmeans", params=params)
        rev = evaluate_cohort(cases[::-1], atlases=phantom_atlases, method="kmeans", params=params)
        assert fwd.mean_dice == pytest.approx(rev.mean_dice, abs=1e-12)

    def test_loo_excludes_own_ground_truth(self, tmp_path, phantom_cases):
        man = write_phantom_manifest(tmp_path, phantom_cases)
        cases = read_manifest(man)
        params = ExtractParams(representative_slices=PHANTOM_REP_SLICES, radius_margin=1.0)
        result = evaluate_cohort(cases, method="kmeans", params=params, loo=True)
        assert result.n == len(phantom_cases)
        assert all(not c.failed for c in result.cases)

    def test_loo_needs_two_cases(self, tmp_path, phantom_cases):
        man = write_phantom_manifest(tmp_path, phantom_cases[:1])
        cases = read_manifest(man)
        with pytest.raises(ValidationError):
            evaluate_cohort(cases, method="kmeans", loo=True)

    def test_mixed_cohorts_rejected(self):
        cases = [
            ManifestCase("a", "a.mha", "ag.mha", "HGG"),
            ManifestCase("b", "b.mha", "bg.mha", "LGG"),
        ]
        with pytest.raises(ValidationError):
            evaluate_cohort(cases, atlases={})

    def test_manifest_grouped_per_cohort(self, tmp_path, phantom_cases, phantom_atlases):
        from tumorbox.evaluate import evaluate_manifest

        lines = ["intensity_path,gt_path,cohort"]
        for i, (spec, vol, gt) in enumerate(phantom_cases[:2]):
            write_mha(vol, tmp_path / f"m{i}_flair.mha")
            write_mha(gt, tmp_path / f"m{i}_gt.mha")
        lines.append("m0_flair.mha,m0_gt.mha,HGG")
        lines.append("m1_flair.mha,m1_gt.mha,LGG")
        man = tmp_path / "mixed.csv"
        man.write_text("\n".join(lines) + "\n")
        params = ExtractParams(representative_slices=PHANTOM_REP_SLICES, radius_margin=1.0)
        results = evaluate_manifest(
            read_manifest(man), atlases=phantom_atlases, method="kmeans", params=params
        )
        assert [r.cohort for r in results] == ["HGG", "LGG"]
        assert all(r.n == 1 for r in results)
