import pytest

from otdrqlim.config import SystemConfig, derive_grid, validate

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


def small_source(**changes) -> SystemConfig:
    """A 600 m fibre with a short heated zone: full traces in milliseconds."""
    base = dict(
        fiber_length_m=600.0,
        heating_zone_start_m=300.0,
        heating_zone_end_m=360.0,
        reference_distance_m=220.0,
        monitor_distance_m=350.0,
        reference_search_m=40.0,
        frames=8,
        fibers=4,
        snr_db_grid=(25.0, 35.0),
        delta_l_list=(5.0, 20.0, 50.0),
        frames_grid=(1, 2),
    )
    base.update(changes)
    return SystemConfig(**base)


@pytest.fixture
def default_config():
    return validate(SystemConfig())


@pytest.fixture
def default_grid(default_config):
    return derive_grid(default_config)


@pytest.fixture
def small_config():
    return validate(small_source())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
