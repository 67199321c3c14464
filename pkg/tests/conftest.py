import numpy as np
import pytest

from gsanim.avatar import GaussianSet
from gsanim.body import Shape
from gsanim.synthetic import make_synthetic_body


@pytest.fixture(scope="session")
def body0():
    """(model, template) for seed 0; session-scoped, treat as read-only."""
    return make_synthetic_body(0)


@pytest.fixture(scope="session")
def shape0(body0):
    return Shape.zeros(body0[0].shape_dim)


def random_gaussians(n, seed, center=(0.0, 0.0, 0.0), spread=0.3,
                     scale_range=(0.005, 0.03), opacity_range=(-2.0, 2.0)):
    rng = np.random.default_rng(seed)
    rot = rng.normal(size=(n, 4))
    rot /= np.linalg.norm(rot, axis=1, keepdims=True)
    return GaussianSet(
        mu=rng.normal(scale=spread, size=(n, 3)) + np.asarray(center, dtype=np.float64),
        raw_opacity=rng.uniform(*opacity_range, n),
        raw_scale=np.log(rng.uniform(*scale_range, (n, 3))),
        rot=rot,
        color=rng.uniform(size=(n, 3)),
    )
