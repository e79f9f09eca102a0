"""Evaluation protocol: cumulative ground-truth boxes and box Dice scores.

The ground truth for one case is the minimal rectangle around the
projection of its tumor labels over all slices. Predicted boxes from the
pipeline are scored against it with the Dice measure, aggregated per cohort
(HGG / LGG / Phantom).
"""

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClusterConfig
from .errors import (
    EmptyGroundTruthError,
    FormatError,
    NoTumorDetectedError,
    TumorBoxError,
    ValidationError,
)
from .mha import read_mha
from .pipeline import BBox, ExtractParams, PipelineReport, mask_bbox, run_pipeline
from .preprocess import Atlas, EnhanceParams, build_atlas
from .volume import KIND_LABEL, Slice, Volume, extract_slice

log = logging.getLogger(__name__)

FORMULA_STANDARD = "standard"
FORMULA_PAPER_UNION = "paper-union"


def binarize_gt(gt_slice: Slice) -> Slice:
    """Binary tumor-presence slice: 1 wherever the label is non-zero."""
    return Slice(data=(gt_slice.data != 0).astype(np.uint8), index=gt_slice.index)


def cumulative_gt(gt_volume: Volume) -> Slice:
    """Project tumor presence over all slices onto one binary plane."""
    present = (gt_volume.data != 0).any(axis=0)
    return Slice(data=present.astype(np.uint8), index=0)


def gt_box(cumulative: Slice) -> BBox:
    """Minimal rectangle around the cumulative ground truth."""
    mask = cumulative.data != 0
    if not mask.any():
        raise EmptyGroundTruthError("ground truth marks no tumor pixels")
    return mask_bbox(mask, margin=0)


def _box_pixels(box: BBox) -> int:
    return box.area


def _intersection(a: BBox, b: BBox) -> int:
    rows = min(a.row_max, b.row_max) - max(a.row_min, b.row_min) + 1
    cols = min(a.col_max, b.col_max) - max(a.col_min, b.col_min) + 1
    if rows <= 0 or cols <= 0:
        return 0
    return rows * cols


def dice_box(a: BBox, b: BBox, dims: tuple[int, int], formula: str = FORMULA_STANDARD) -> float:
    """Dice overlap of two axis-aligned boxes, in closed form.

    ``dims`` is (width, height) of the underlying image. "standard" is
    2|A∩B| / (|A| + |B|); "paper-union" divides by |A∪B| instead, which
    exceeds 1 for nested boxes and is reported unclamped with a warning.
    """
    if formula not in (FORMULA_STANDARD, FORMULA_PAPER_UNION):
        raise ValidationError(f"unknown dice formula: {formula!r}")
    width, height = dims
    for box in (a, b):
        if box.row_max >= height or box.col_max >= width:
            raise ValidationError(f"box {box} exceeds image dims {dims}")
    inter = _intersection(a, b)
    size_a = _box_pixels(a)
    size_b = _box_pixels(b)
    if formula == FORMULA_STANDARD:
        return 2.0 * inter / (size_a + size_b)
    union = size_a + size_b - inter
    value = 2.0 * inter / union
    if value > 1.0:
        log.warning("paper-union dice %.4f exceeds 1 (boxes overlap heavily)", value)
    return value


@dataclass
class CaseResult:
    case_id: str
    cohort: str
    dice: float
    failed: bool
    bbox_pred: BBox | None
    bbox_gt: BBox
    report: PipelineReport | None = None
    wall_ms: float = 0.0


@dataclass
class ErrorRecord:
    case_id: str
    cohort: str
    message: str


@dataclass
class CohortResult:
    """Scores for one cohort under one method and formula.

    Failed detections are scored 0 and stay in the mean; unreadable cases
    are recorded as errors and excluded from it, but never silently dropped.
    """

    cohort: str
    method: str
    dice_formula: str
    cases: list[CaseResult] = field(default_factory=list)
    errors: list[ErrorRecord] = field(default_factory=list)

    @property
    def dice(self) -> list[float]:
        return [c.dice for c in self.cases]

    @property
    def mean_dice(self) -> float:
        return float(np.mean(self.dice)) if self.cases else 0.0

    @property
    def n(self) -> int:
        return len(self.cases)

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.cases if c.failed)

    def summary_dict(self) -> dict:
        return {
            "cohort": self.cohort,
            "method": self.method,
            "formula": self.dice_formula,
            "mean_dice": round(self.mean_dice, 6),
            "n": self.n,
            "n_failed": self.n_failed,
            "n_errors": len(self.errors),
        }


def evaluate_case(
    volume: Volume,
    gt_volume: Volume,
    atlases,
    method: str = "em",
    cluster_cfg: ClusterConfig | None = None,
    params: ExtractParams | None = None,
    enhance: EnhanceParams | None = None,
    formula: str = FORMULA_STANDARD,
    case_id: str = "",
    cohort: str = "Phantom",
) -> CaseResult:
    """Score one (volume, ground truth) pair.

    A pipeline that detects nothing scores 0 with the failure flag set;
    excluding such cases would inflate cohort means invisibly.
    """
    start = time.perf_counter()
    box_gt = gt_box(cumulative_gt(gt_volume))
    dims = (volume.width, volume.height)
    try:
        result = run_pipeline(
            volume,
            atlases,
            method=method,
            cluster_cfg=cluster_cfg,
            params=params,
            enhance=enhance,
        )
        score = dice_box(result.bbox, box_gt, dims, formula)
        return CaseResult(
            case_id=case_id,
            cohort=cohort,
            dice=score,
            failed=False,
            bbox_pred=result.bbox,
            bbox_gt=box_gt,
            report=result.report,
            wall_ms=(time.perf_counter() - start) * 1000,
        )
    except NoTumorDetectedError as exc:
        return CaseResult(
            case_id=case_id,
            cohort=cohort,
            dice=0.0,
            failed=True,
            bbox_pred=None,
            bbox_gt=box_gt,
            report=exc.report,
            wall_ms=(time.perf_counter() - start) * 1000,
        )


@dataclass(frozen=True)
class ManifestCase:
    case_id: str
    intensity_path: Path
    gt_path: Path
    cohort: str


def read_manifest(path) -> list[ManifestCase]:
    """Read a case manifest CSV with header intensity_path,gt_path,cohort.

    Relative paths resolve against the manifest's own directory, so a
    generated phantom directory is self-contained.
    """
    path = Path(path)
    base = path.parent
    cases = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"intensity_path", "gt_path", "cohort"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(
                f"manifest {path} must have columns intensity_path,gt_path,cohort"
            )
        for row in reader:
            intensity = Path(row["intensity_path"])
            gt = Path(row["gt_path"])
            cases.append(
                ManifestCase(
                    case_id=intensity.name.replace(".mha", "").replace(".mhd", ""),
                    intensity_path=intensity if intensity.is_absolute() else base / intensity,
                    gt_path=gt if gt.is_absolute() else base / gt,
                    cohort=row["cohort"].strip(),
                )
            )
    return cases


def _gt_rep_masks(gt_volume: Volume, rep_slices: tuple[int, ...]) -> dict[int, np.ndarray]:
    return {
        n: (extract_slice(gt_volume, n).data != 0).astype(np.int32) for n in rep_slices
    }


def build_atlases_from_manifest(
    cases: list[ManifestCase], rep_slices: tuple[int, ...]
) -> dict[int, Atlas]:
    """Build one atlas per representative slice from the manifest's GTs."""
    slices_by_index: dict[int, list[Slice]] = {n: [] for n in rep_slices}
    for case in cases:
        gt = read_mha(case.gt_path, kind=KIND_LABEL)
        for n in rep_slices:
            slices_by_index[n].append(extract_slice(gt, n))
    return {n: build_atlas(slices_by_index[n]) for n in rep_slices}


def _loo_atlases(
    total_counts: dict[int, np.ndarray],
    own_masks: dict[int, np.ndarray],
    num_patients: int,
) -> dict[int, Atlas]:
    out = {}
    for n, counts in total_counts.items():
        out[n] = Atlas(
            slice_index=n,
            num_patients=num_patients - 1,
            counts=counts - own_masks[n],
        )
    return out


def evaluate_cohort(
    cases: list[ManifestCase],
    atlases=None,
    method: str = "em",
    cluster_cfg: ClusterConfig | None = None,
    params: ExtractParams | None = None,
    enhance: EnhanceParams | None = None,
    formula: str = FORMULA_STANDARD,
    loo: bool = False,
    jobs: int = 1,
) -> CohortResult:
    """Evaluate the cases of one cohort and aggregate their Dice scores.

    With ``loo`` the atlases are rebuilt per case from the other cases'
    ground truths (train/test hygiene when the manifest provided the atlas
    data); otherwise ``atlases`` must be supplied.
    """
    if not cases:
        raise ValidationError("evaluate_cohort needs at least one case")
    cohorts = {c.cohort for c in cases}
    if len(cohorts) != 1:
        raise ValidationError(f"evaluate_cohort expects a single cohort, got {sorted(cohorts)}")
    cohort = cohorts.pop()
    params = params or ExtractParams()
    if not loo and atlases is None:
        raise ValidationError("evaluate_cohort needs atlases unless loo is set")
    if loo and len(cases) < 2:
        raise ValidationError("leave-one-out needs at least two cases")

    rep = params.representative_slices
    total_counts: dict[int, np.ndarray] = {}
    per_case_masks: list[dict[int, np.ndarray] | None] = [None] * len(cases)
    if loo:
        for i, case in enumerate(cases):
            try:
                gt = read_mha(case.gt_path, kind=KIND_LABEL)
            except (TumorBoxError, OSError):
                continue  # reported when the case itself is evaluated
            masks = _gt_rep_masks(gt, rep)
            per_case_masks[i] = masks
            for n in rep:
                if n in total_counts:
                    total_counts[n] += masks[n]
                else:
                    total_counts[n] = masks[n].copy()

    num_readable = sum(1 for m in per_case_masks if m is not None)

    def run_one(i_case):
        i, case = i_case
        try:
            volume = read_mha(case.intensity_path)
            gt_volume = read_mha(case.gt_path, kind=KIND_LABEL)
            case_atlases = atlases
            if loo:
                if per_case_masks[i] is None:
                    raise FormatError("ground truth unreadable during atlas prepass")
                case_atlases = _loo_atlases(total_counts, per_case_masks[i], num_readable)
            return evaluate_case(
                volume,
                gt_volume,
                case_atlases,
                method=method,
                cluster_cfg=cluster_cfg,
                params=params,
                enhance=enhance,
                formula=formula,
                case_id=case.case_id,
                cohort=case.cohort,
            )
        except (TumorBoxError, OSError) as exc:
            log.error("case %s skipped: %s", case.case_id, exc)
            return ErrorRecord(case_id=case.case_id, cohort=case.cohort, message=str(exc))

    indexed = list(enumerate(cases))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_one, indexed))
    else:
        outcomes = [run_one(ic) for ic in indexed]

    result = CohortResult(cohort=cohort, method=method, dice_formula=formula)
    for outcome in outcomes:
        if isinstance(outcome, ErrorRecord):
            result.errors.append(outcome)
        else:
            result.cases.append(outcome)
    return result


def evaluate_manifest(
    cases: list[ManifestCase],
    atlases=None,
    method: str = "em",
    cluster_cfg: ClusterConfig | None = None,
    params: ExtractParams | None = None,
    enhance: EnhanceParams | None = None,
    formula: str = FORMULA_STANDARD,
    loo: bool = False,
    jobs: int = 1,
) -> list[CohortResult]:
    """Group manifest cases by cohort and evaluate each group."""
    by_cohort: dict[str, list[ManifestCase]] = {}
    for case in cases:
        by_cohort.setdefault(case.cohort, []).append(case)
    return [
        evaluate_cohort(
            group,
            atlases=atlases,
            method=method,
            cluster_cfg=cluster_cfg,
            params=params,
            enhance=enhance,
            formula=formula,
            loo=loo,
            jobs=jobs,
        )
        for _, group in sorted(by_cohort.items())
    ]
