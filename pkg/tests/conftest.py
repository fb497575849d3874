import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from eventdart.events import EventStream

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_stream(rng: np.random.Generator, n: int, width: int, height: int,
                  t_max: int = 20_000) -> EventStream:
    t = np.sort(rng.integers(0, t_max, n))
    return EventStream.from_arrays(rng.integers(0, width, n), rng.integers(0, height, n), t,
                                   rng.integers(0, 2, n), width=width, height=height)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scene_descriptors():
    """DART descriptors of filtered events from a short synthetic scene."""
    from eventdart.dart import describe_stream, build_grid
    from eventdart.filtering import cascade
    from eventdart.synth import make_scene, synth_generate

    stream, _, _ = synth_generate(make_scene("translate", duration_us=2_000_000), seed=3)
    kept = cascade(stream, 5000, 1000)
    desc = describe_stream(kept, build_grid())
    return desc[desc.sum(axis=1) > 0]
