import pytest

from hocorr.experiments import reference_layout
from hocorr.geometry import OpticalLayout


@pytest.fixture
def layout():
    return reference_layout()


@pytest.fixture
def tiny_layout():
    return OpticalLayout(532e-9, 2e-3, (0.10, 0.20, 0.20), pixel_count=2)
