import pytest

from bkgtfk.core import AxisSpec, GridSpec, ModelCalibration

# Calibration at the frozen feature means; most fixtures and golden values
# are pinned at this point.
REF_CALIB = ModelCalibration(a=0.2199, sigma=0.6415, theta=0.0469, r0=0.0401)
REF_TENOR = 5.9707


@pytest.fixture
def ref_calib():
    return REF_CALIB


@pytest.fixture
def small_grid_spec():
    """2 x 2 x 1 x 1 calibrations x 2 tenors = 8 points, no holdout."""
    return GridSpec(
        a=AxisSpec(0.1, 0.4, 2),
        sigma=AxisSpec(0.2, 0.8, 2),
        theta=AxisSpec(0.04, 0.04, 1),
        r0=AxisSpec(0.04, 0.04, 1),
        tenors=(1.0, 5.0),
    )
