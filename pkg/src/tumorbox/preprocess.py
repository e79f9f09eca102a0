"""Slice preprocessing: min-max normalisation, the per-slice tumor location
atlas, and the atlas-guided threshold-gated contrast enhancement.

The location atlas for slice n counts, per pixel, how many training patients
had tumor there. Pixels with a count of at least ``atlas_min_count`` are the
"likely tumor" pixels whose contrast gets stretched around the brain-mean
threshold; everything else in the brain is dimmed.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .volume import Slice


@dataclass(frozen=True)
class EnhanceParams:
    """Contrast enhancement knobs.

    gain_up brightens likely-tumor pixels above the slice threshold,
    gain_down dims likely-tumor pixels below it as well as all other brain
    pixels. Magnitudes are artifact choices; defaults keep one application
    from saturating mid-range pixels.
    """

    gain_up: float = 1.25
    gain_down: float = 0.8
    atlas_min_count: int = 1

    def __post_init__(self):
        if self.gain_up <= 1:
            raise ValidationError(f"gain_up must be > 1, got {self.gain_up}")
        if not 0 < self.gain_down < 1:
            raise ValidationError(f"gain_down must be in (0, 1), got {self.gain_down}")
        if self.atlas_min_count < 1:
            raise ValidationError(f"atlas_min_count must be >= 1, got {self.atlas_min_count}")


@dataclass(frozen=True, eq=False)
class Atlas:
    """Per-pixel tumor-occurrence counts for one slice index.

    counts[i, j] is the number of training patients whose ground truth marks
    pixel (i, j) as tumor in this slice; 0 <= counts <= num_patients.
    """

    slice_index: int
    num_patients: int
    counts: np.ndarray

    def __post_init__(self):
        if self.counts.ndim != 2:
            raise ValidationError("atlas counts must be 2-D")
        if self.num_patients < 1:
            raise ValidationError("atlas needs at least one patient")
        if np.any(self.counts < 0) or np.any(self.counts > self.num_patients):
            raise ValidationError("atlas counts must lie in 0..num_patients")

    @property
    def width(self) -> int:
        return self.counts.shape[1]

    @property
    def height(self) -> int:
        return self.counts.shape[0]


def normalize(slc: Slice) -> Slice:
    """Min-max normalise a slice to [0, 1].

    A constant slice (max == min) maps to all zeros: it carries no contrast
    information and this avoids the division by zero.
    """
    data = slc.data.astype(np.float64)
    lo = data.min()
    hi = data.max()
    if hi == lo:
        return Slice(data=np.zeros_like(data), index=slc.index)
    return Slice(data=(data - lo) / (hi - lo), index=slc.index)


def brain_threshold(slc: Slice) -> float:
    """Mean intensity over brain pixels (value > 0); 0 if there are none.

    Valid as a brain mask because volumes arrive skull-stripped with an
    exactly-zero background.
    """
    data = slc.data
    positive = data[data > 0]
    if positive.size == 0:
        return 0.0
    return float(positive.mean())


def build_atlas(gt_slices: list[Slice]) -> Atlas:
    """Accumulate binary ground-truth slices of one slice index into an atlas.

    Any non-zero pixel counts as tumor, so raw label slices work as well as
    pre-binarised ones.
    """
    if not gt_slices:
        raise ValidationError("cannot build an atlas from an empty slice list")
    first = gt_slices[0]
    counts = np.zeros(first.data.shape, dtype=np.int32)
    for slc in gt_slices:
        if slc.data.shape != first.data.shape:
            raise ValidationError(
                f"mixed slice dims in atlas input: {slc.data.shape} vs {first.data.shape}"
            )
        if slc.index != first.index:
            raise ValidationError(
                f"mixed slice indices in atlas input: {slc.index} vs {first.index}"
            )
        counts += (slc.data != 0).astype(np.int32)
    return Atlas(slice_index=first.index, num_patients=len(gt_slices), counts=counts)


def enhance_contrast(slc: Slice, atlas: Atlas, params: EnhanceParams | None = None) -> Slice:
    """Stretch likely-tumor contrast around the slice's brain-mean threshold.

    Likely-tumor pixels (atlas count >= atlas_min_count) above the threshold
    are multiplied by gain_up, those at or below it by gain_down; remaining
    brain pixels are dimmed by gain_down; the zero background is untouched.
    Output is clamped to [0, 1].
    """
    params = params or EnhanceParams()
    if (atlas.height, atlas.width) != slc.data.shape:
        raise ValidationError(
            f"atlas dims {(atlas.height, atlas.width)} do not match slice {slc.data.shape}"
        )
    if atlas.slice_index != slc.index:
        raise ValidationError(
            f"atlas slice index {atlas.slice_index} does not match slice {slc.index}"
        )
    values = slc.data
    threshold = brain_threshold(slc)
    likely = atlas.counts >= params.atlas_min_count
    out = np.where(values > 0, values * params.gain_down, 0.0)
    out = np.where(likely & (values > threshold), values * params.gain_up, out)
    np.clip(out, 0.0, 1.0, out=out)
    return Slice(data=out, index=slc.index)


def save_atlas(atlas: Atlas, path) -> None:
    payload = {
        "slice_index": atlas.slice_index,
        "width": atlas.width,
        "height": atlas.height,
        "num_patients": atlas.num_patients,
        "counts": atlas.counts.reshape(-1).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_atlas(path) -> Atlas:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed atlas file {path}: {exc}") from exc
    try:
        width = int(payload["width"])
        height = int(payload["height"])
        counts = np.asarray(payload["counts"], dtype=np.int32).reshape(height, width)
        return Atlas(
            slice_index=int(payload["slice_index"]),
            num_patients=int(payload["num_patients"]),
            counts=counts,
        )
    except KeyError as exc:
        raise FormatError(f"atlas file {path} missing field {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise FormatError(f"atlas file {path} has malformed data: {exc}") from exc
