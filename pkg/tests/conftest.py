import sys

import numpy as np
import pytest

from selfvae.models import build_model
from selfvae.networks import NetConfig

TINY = NetConfig(
    growth_rate=2,
    blocks_per_stage=1,
    stages=2,
    latent_shape=(2, 1, 1),
    width=4,
    reduction=2,
    mixture_components=3,
)
SMALL = NetConfig(
    growth_rate=4,
    blocks_per_stage=1,
    stages=1,
    latent_shape=(4, 4, 4),
    width=8,
    reduction=2,
    mixture_components=5,
)


def tiny_model(kind="selfvae", prior="realnvp", seed=0, shape=(4, 4, 3), cfg=TINY):
    return build_model(
        kind, shape, cfg, np.random.default_rng(seed), prior=prior, flow_layers=2, flow_hidden=8
    )


def random_images(n, shape=(4, 4, 3), seed=0):
    return np.random.default_rng(seed).integers(0, 256, (n, *shape)).astype(np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
