import math

import numpy as np
import pytest
from hypothesis import settings

from pushplan.dynamics import SliderModel, SliderState
from pushplan.geom2d import ConvexPolygon
from pushplan.harness.generators import reference_slider

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def slider():
    return reference_slider()


@pytest.fixture(scope="session")
def unit_square():
    """Unit square slider with A = diag(a1, a1, a2)."""
    return SliderModel(ConvexPolygon.rectangle(1.0, 1.0), np.diag([2.0, 2.0, 5.0]), 0.2, 0.15, 1.0)


def random_state(model, rng, face=None):
    face = int(rng.integers(model.n_faces)) if face is None else face
    lo, hi, _ = model.face_interval(face)
    return SliderState.of(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-math.pi, math.pi),
                          rng.uniform(lo, hi))
