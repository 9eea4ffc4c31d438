import numpy as np
import pytest

from collabssc.voxelgrid import DEFAULT_SPEC, ConfidenceGrid, GridSpec, SemanticGrid

SMALL_SPEC = GridSpec(origin=(-4.0, -4.0, -1.0), voxel_size=(0.5, 0.5, 0.25), dims=(16, 16, 8))


def random_grid(rng, spec=SMALL_SPEC, p_empty=0.6) -> SemanticGrid:
    labels = rng.integers(1, 7, size=spec.shape)
    labels[rng.random(spec.shape) < p_empty] = 0
    return SemanticGrid(spec, labels.astype(np.uint8))


def random_conf(rng, spec=SMALL_SPEC, levels=None) -> ConfidenceGrid:
    if levels is not None:
        # a few discrete levels make ties common
        return ConfidenceGrid(spec, rng.choice(levels, size=spec.shape))
    return ConfidenceGrid(spec, rng.random(spec.shape))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    return SMALL_SPEC


@pytest.fixture
def default_spec():
    return DEFAULT_SPEC
