import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lodct.geometry import Geometry


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def par_geo_8():
    """Tiny parallel-beam geometry used by the dense-oracle tests."""
    return Geometry(
        mode="parallel-beam",
        n_detector_channels=3,
        n_views=4,
        detector_spacing=3.0,
        image_rows=8,
        image_cols=8,
        pixel_size=1.0,
    )


@pytest.fixture
def fan_geo_8():
    return Geometry(
        mode="fan-beam-arc",
        n_detector_channels=5,
        n_views=6,
        detector_spacing=2.0,
        source_to_iso=20.0,
        source_to_detector=40.0,
        angular_range=2 * np.pi,
        image_rows=8,
        image_cols=8,
        pixel_size=1.0,
    )
