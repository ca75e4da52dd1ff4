import numpy as np
import pytest

from strkm_ood.linalg import make_rng
from strkm_ood.model import StRkmModel
from strkm_ood.nn import init_mlp
from strkm_ood.stiefel import random_stiefel


def random_model(rng, d=4, l=6, m=3, hidden=(5,), lam=2.5):
    """A model with non-trivial biases, slopes and feature mean."""
    acts = ["prelu"] * len(hidden)
    enc = init_mlp([d, *hidden, l], acts + ["linear"], rng)
    dec = init_mlp([l, *hidden[::-1], d], acts + ["sigmoid"], rng)
    enc = enc.with_arrays([a + 0.2 * rng.standard_normal(a.shape) for a in enc.arrays()])
    dec = dec.with_arrays([a + 0.2 * rng.standard_normal(a.shape) for a in dec.arrays()])
    return StRkmModel(enc, dec, random_stiefel(l, m, rng), rng.standard_normal(l), lam)


@pytest.fixture
def rng():
    return make_rng(20240601)


@pytest.fixture
def model(rng):
    return random_model(rng)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
