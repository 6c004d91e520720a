import numpy as np
import pytest

from ssl_distill.data import GeneratorConfig, generate_synthetic, read_manifest
from ssl_distill.rng import RngState


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Tiny generated dataset shared by data/pipeline/cli tests."""
    root = tmp_path_factory.mktemp("ds")
    cfg = GeneratorConfig(n_train=120, n_test=48, image_size=32, seed=11)
    entries = generate_synthetic(cfg, str(root))
    return str(root), entries


@pytest.fixture
def rng():
    return RngState(0)


@pytest.fixture
def rand_image():
    gen = np.random.default_rng(5)
    return gen.random((3, 32, 32), dtype=np.float32)
