import pytest
from hypothesis import HealthCheck, settings

from shimmer.dataset import GenConfig, gen_dataset
from shimmer.events import ThresholdModel
from shimmer.turbsim import TurbulenceParams

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

SUITE_SEED = 2026


def suite_gen_config() -> GenConfig:
    """Zero-mean tilt suite: 20 synthetic 592x592 cards center-cropped to
    128, rendered with the default turbulence strength and a fine constant
    contrast threshold (fine thresholds keep the deblurred image's
    quantization noise well below the tilt signal the flow solver needs)."""
    return GenConfig(
        turbulence=TurbulenceParams(sigma_tilt=1.5, rho=16.0, zero_mean_tilt=True),
        event_sim=ThresholdModel(c_mean=0.05, c_std=0.0, temporal_jitter_std=0.0),
        crop=128,
        split_ratio=0.0,
        synthetic_count=20,
        synthetic_size=592,
    )


SUITE_RESTORE = {"alpha": 0.3}


@pytest.fixture(scope="session")
def suite20(tmp_path_factory):
    """The 20-image tilt suite used by the restoration oracles."""
    root = tmp_path_factory.mktemp("suite20")
    manifest = gen_dataset(None, root, suite_gen_config(), seed=SUITE_SEED, threads=8)
    return manifest, root
