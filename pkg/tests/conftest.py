import numpy as np
import pytest

from tumorbox.phantom import PhantomSpec, generate_phantom
from tumorbox.preprocess import build_atlas
from tumorbox.volume import Slice, Volume, extract_slice

# Representative slices scaled to the 64-deep acceptance phantoms; a
# 12-20 voxel tumor ball centred near slice 32 intersects all six.
PHANTOM_REP_SLICES = (26, 30, 32, 34, 36, 40)
PHANTOM_BASE_SEED = 2015


def make_phantom_spec(i: int, base_seed: int = PHANTOM_BASE_SEED, noise_sigma: float = 0.03) -> PhantomSpec:
    """Deterministic acceptance-protocol phantom: tissue 0.5, tumor +0.4,
    radius 12-20, placed so the ball crosses every representative slice."""
    place = np.random.default_rng([base_seed, i])
    return PhantomSpec(
        dims=(128, 128, 64),
        brain_center=(64.0, 64.0, 32.0),
        brain_radii=(50.0, 56.0, 28.0),
        tumor_center=(
            64.0 + place.uniform(-8, 8),
            64.0 + place.uniform(-8, 8),
            32.0 + place.uniform(-2, 3),
        ),
        tumor_radius=float(place.uniform(12, 20)),
        tumor_offset=0.4,
        tissue_intensity=0.5,
        noise_sigma=noise_sigma,
        seed=base_seed + i,
    )


@pytest.fixture(scope="session")
def phantom_cases():
    """Five phantom cases with their specs, shared across the suite."""
    cases = []
    for i in range(5):
        spec = make_phantom_spec(i)
        intensity, gt = generate_phantom(spec)
        cases.append((spec, intensity, gt))
    return cases


@pytest.fixture(scope="session")
def phantom_atlases(phantom_cases):
    return {
        n: build_atlas([extract_slice(gt, n) for _, _, gt in phantom_cases])
        for n in PHANTOM_REP_SLICES
    }


def make_slice(data, index: int = 1) -> Slice:
    return Slice(data=np.asarray(data, dtype=np.float64), index=index)


def make_label_volume(shape_dhw, coords_value: dict | None = None) -> Volume:
    data = np.zeros(shape_dhw, dtype=np.int16)
    for (k, i, j), v in (coords_value or {}).items():
        data[k, i, j] = v
    return Volume(data=data, kind="label")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.module.__name__.endswith("test_acceptance"):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        print(f"\n[acceptance] {item.name}: {status}")
