import numpy as np
import pytest

from rttube.casestudy import case_study_model
from rttube.synthesis import synthesize


@pytest.fixture(scope="session")
def model():
    return case_study_model()


@pytest.fixture(scope="session")
def syn(model):
    return synthesize(model)


@pytest.fixture(scope="session")
def stage_maps(model, syn):
    from rttube.realtime import build_stage_maps

    return build_stage_maps(syn, model, 20)


@pytest.fixture(scope="session")
def gamma20(model, syn):
    from rttube.realtime import calibrate_gamma

    return calibrate_gamma(syn, model, 20)


def random_polygon(rng, n_pts=6, spread=1.0, origin_interior=False):
    """Bounded random 2-D polytope from a point cloud hull."""
    from rttube.geometry import hpolytope_from_vertices_2d

    pts = rng.normal(size=(n_pts, 2)) * spread
    if origin_interior:
        pts = pts - pts.mean(axis=0)
        # hull of centered cloud contains 0 strictly unless degenerate;
        # inflate a touch to be safe
        pts = np.vstack([pts, 0.3 * spread * np.array([[1, 1], [-1, 1], [1, -1], [-1, -1]])])
    return hpolytope_from_vertices_2d(pts)
