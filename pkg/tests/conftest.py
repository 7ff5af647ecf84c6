import math

import numpy as np
import pytest

from asca.layouts import pin_pad
from asca.synth import random_schedule, render_scene, scene_for_layout


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_scene(keys="12345", seed=0, snr_db=20.0, **kwargs):
    layout = kwargs.pop("layout", None) or pin_pad()
    sched = random_schedule(list(keys), np.random.default_rng(seed + 99))
    spec = scene_for_layout(layout, sched, snr_db=snr_db, rng_seed=seed, **kwargs)
    return spec, render_scene(spec)


@pytest.fixture(scope="session")
def clean_scene():
    """Five taps at 20 dB straight in front of mic 0's far side."""
    return make_scene("12345", seed=3, snr_db=20.0, azimuth=-math.pi / 2)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
