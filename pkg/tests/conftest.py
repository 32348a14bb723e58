import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_scenario():
    """A small seeded pipeline (d=30) shared by the integration tests."""
    from xrandlab.data import SynthSpec
    from xrandlab.pipeline import PipelineConfig, prepare

    cfg = PipelineConfig(synth=SynthSpec(n_samples=400, n_features=30, n_goodware_informative=6,
                                         n_malware_informative=6), n_explain=80, tau=12)
    return prepare(cfg, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
