import numpy as np
import pytest

from mcfbc.backbone import BackboneConfig
from mcfbc.data import generate_synthetic, load_manifest, load_split
from mcfbc.model import FbcConfig
from mcfbc.train import TrainConfig


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """10 images per class at 16x16, split 6/2/2 per class."""
    out = tmp_path_factory.mktemp("toy")
    generate_synthetic(out, seed=0, n_per_class=10, size=16)
    return out


@pytest.fixture(scope="session")
def toy_sets(toy_dir):
    m = load_manifest(toy_dir / "manifest.csv")
    return tuple(load_split(m, s) for s in ("train", "valid", "test"))


def tiny_config(**kw):
    base = dict(epochs=3, lr0=0.002, lr_floor=1e-4, batch_size=4,
                backbone=BackboneConfig(2, [4, 6], 3, 16), fbc=FbcConfig(k=8))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
