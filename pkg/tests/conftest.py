import hypothesis
import numpy as np
import pytest

from csgtopo import ProblemSpec
from csgtopo.geometry import ProjectionConfig, SampleGrid

hypothesis.settings.register_profile("ci", max_examples=60, deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture
def default_cfg():
    return ProjectionConfig.for_domain(60.0, 30.0)


@pytest.fixture
def default_grid():
    return SampleGrid(60, 30, 60.0, 30.0)


@pytest.fixture
def small_spec():
    """12x6 instance used across gradient and optimization smoke tests."""
    return ProblemSpec(nx=12, ny=6, tree_depth=2, sides=4)


def connected_design(spec: ProblemSpec) -> np.ndarray:
    """Deterministic design whose material joins the mbb load and support.

    Four near-axis-aligned squares chain across the band with every face
    close to live cells, so compliance is moderate and every design entry
    carries a measurable gradient.  Sized for tree_depth=2, sides=4.
    """
    assert spec.tree_depth == 2 and spec.sides == 4
    z = np.zeros(spec.design_size)
    z[0:4] = [0.111, 0.407, 0.685, 0.907]
    z[4:8] = [0.722, 0.500, 0.352, 0.222]
    z[8:12] = [0.03, 0.06, 0.04, 0.08]
    z[12:28] = np.array([
        [0.667, 0.567, 0.533, 0.600],
        [0.667, 0.600, 0.633, 0.567],
        [0.633, 0.533, 0.667, 0.567],
        [0.500, 0.533, 0.600, 0.433],
    ]).ravel()
    z[28:40] = [0.35, 0.75, 0.5, 0.4, 0.3, 0.8, 0.45, 0.5, 0.45, 0.7, 0.55, 0.35]
    return z
