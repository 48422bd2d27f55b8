import numpy as np
import pytest

from tagforge.config import BackgroundSource, GenerationConfig
from tagforge.scene_model import BackgroundRef, RenderOptions, derive_person_spec

BASE_RENDER = dict(pose="stand", camera_azimuth_deg=0.0, camera_depression_deg=0.0, camera_distance_m=2.5,
                   light_azimuth_deg=0.0, light_elevation_deg=45.0, light_intensity=0.8, ambient=0.3,
                   background_ref=BackgroundRef("plain", 0, 0, 16, 16), camera_id=1, gamma=1.0,
                   working_height_px=256)


def make_options(**changes) -> RenderOptions:
    kw = dict(BASE_RENDER)
    kw.update(changes)
    return RenderOptions(**kw)


@pytest.fixture
def options():
    return make_options


@pytest.fixture
def person():
    return derive_person_spec(42, 7)


@pytest.fixture
def tiny_config():
    return GenerationConfig(seed=5, num_identities=2, images_per_identity=3,
                            backgrounds=BackgroundSource(count=4))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
