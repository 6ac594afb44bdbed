import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from xtrack.model import ModelConfig
from xtrack.scenario import SynthSpec, synth_generate

settings.register_profile(
    "xtrack", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "xtrack"))

# criterion number -> (description, passed); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        desc, ok = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {desc}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scenarios():
    spec = SynthSpec(keep_lane=4, accelerating=3, lane_change=3, noise=0.2)
    return synth_generate(spec, seed=5)


def toy_config(variant="xtrack", **kw):
    base = dict(variant=variant, embed_dim=8, encoder_hidden=8, decoder_hidden=8, gat_heads=2, gat_dim=8,
                interaction_dim=8)
    base.update(kw)
    return ModelConfig(**base)
