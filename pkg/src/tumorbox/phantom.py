"""Synthetic skull-stripped phantom volumes with analytic ground truth.

A phantom is an ellipsoidal "brain" of constant tissue intensity on a zero
background, with a spherical "tumor" blob of raised intensity and optional
Gaussian noise inside the brain. The paired label volume marks the blob, so
every pipeline stage can be tested without the restricted dataset.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .volume import KIND_LABEL, Volume


@dataclass(frozen=True)
class PhantomSpec:
    """Deterministic description of one phantom case.

    ``dims`` is (width, height, depth); centers and radii are in voxels with
    coordinates ordered (x, y, z). ``tumor_offset`` is added on top of
    ``tissue_intensity`` inside the blob. All randomness (the noise) flows
    from ``seed``.
    """

    dims: tuple[int, int, int] = (128, 128, 64)
    brain_center: tuple[float, float, float] = (64.0, 64.0, 32.0)
    brain_radii: tuple[float, float, float] = (50.0, 56.0, 28.0)
    tumor_center: tuple[float, float, float] = (64.0, 64.0, 32.0)
    tumor_radius: float = 14.0
    tumor_offset: float = 0.4
    tissue_intensity: float = 0.5
    noise_sigma: float = 0.03
    seed: int = 0

    def validate(self) -> None:
        if len(self.dims) != 3 or any(int(d) <= 0 for d in self.dims):
            raise ValidationError(f"dims must be three positive integers, got {self.dims}")
        if any(r <= 0 for r in self.brain_radii):
            raise ValidationError("brain radii must be positive")
        if self.tumor_radius <= 0:
            raise ValidationError("tumor radius must be positive")
        if self.noise_sigma < 0:
            raise ValidationError("noise sigma must be >= 0")
        if self.tissue_intensity < 0:
            raise ValidationError("tissue intensity must be >= 0")
        # Sufficient condition for the blob lying strictly inside the brain:
        # the ellipsoid norm is 1/min(radii)-Lipschitz in Euclidean distance.
        scaled = math.sqrt(
            sum(
                ((t - b) / r) ** 2
                for t, b, r in zip(self.tumor_center, self.brain_center, self.brain_radii)
            )
        )
        if scaled + self.tumor_radius / min(self.brain_radii) >= 1.0:
            raise ValidationError(
                "tumor blob is not strictly inside the brain ellipsoid "
                f"(scaled center distance {scaled:.3f}, radius {self.tumor_radius})"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["brain_center"] = list(self.brain_center)
        d["brain_radii"] = list(self.brain_radii)
        d["tumor_center"] = list(self.tumor_center)
        return d


def spec_from_dict(d: dict) -> PhantomSpec:
    try:
        return PhantomSpec(
            dims=tuple(int(v) for v in d["dims"]),
            brain_center=tuple(float(v) for v in d["brain_center"]),
            brain_radii=tuple(float(v) for v in d["brain_radii"]),
            tumor_center=tuple(float(v) for v in d["tumor_center"]),
            tumor_radius=float(d["tumor_radius"]),
            tumor_offset=float(d["tumor_offset"]),
            tissue_intensity=float(d["tissue_intensity"]),
            noise_sigma=float(d["noise_sigma"]),
            seed=int(d["seed"]),
        )
    except KeyError as exc:
        raise FormatError(f"phantom spec missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise FormatError(f"phantom spec field has wrong type: {exc}") from exc


def save_spec(spec: PhantomSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_spec(path) -> PhantomSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"malformed phantom spec {path}: {exc}") from exc
    return spec_from_dict(payload)


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, Volume]:
    """Generate (intensity volume, label volume) for ``spec``.

    Outside the brain ellipsoid the intensity is exactly zero (the
    skull-stripped analogue the rest of the package relies on). Noise is
    zero-mean Gaussian, applied inside the brain only, and the result is
    clipped at zero. Bit-identical for identical specs.
    """
    spec.validate()
    width, height, depth = (int(v) for v in spec.dims)

    z = np.arange(depth, dtype=np.float64)[:, None, None]
    y = np.arange(height, dtype=np.float64)[None, :, None]
    x = np.arange(width, dtype=np.float64)[None, None, :]

    bx, by, bz = spec.brain_center
    rx, ry, rz = spec.brain_radii
    brain = ((x - bx) / rx) ** 2 + ((y - by) / ry) ** 2 + ((z - bz) / rz) ** 2 <= 1.0

    tx, ty, tz = spec.tumor_center
    tumor = (x - tx) ** 2 + (y - ty) ** 2 + (z - tz) ** 2 <= spec.tumor_radius**2

    values = np.where(brain, spec.tissue_intensity, 0.0)
    values = values + np.where(tumor, spec.tumor_offset, 0.0)
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        values = values + rng.normal(0.0, spec.noise_sigma, size=values.shape)
    values = np.where(brain, np.maximum(values, 0.0), 0.0)
    # Quantise to float32 so MetaImage round trips are exact.
    values = values.astype(np.float32).astype(np.float64)

    intensity = Volume(data=values)
    ground_truth = Volume(data=tumor.astype(np.int16), kind=KIND_LABEL)
    return intensity, ground_truth
