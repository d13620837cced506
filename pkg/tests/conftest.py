import numpy as np
import pytest

from perfrecon.phantom import default_dsc_spec, generate
from perfrecon.sampler import (
    NoiseSpec,
    densify_first_frame,
    forward_encode,
    make_radial_mask,
)
from perfrecon.volume import minmax_normalize

# (number, name, passed, detail) rows collected by the acceptance tests.
_CRITERIA = []


@pytest.fixture
def record_criterion():
    def _record(num, name, passed, detail):
        _CRITERIA.append((int(num), name, bool(passed), detail))

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance summary")
    for num, name, passed, detail in sorted(_CRITERIA):
        word = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num:02d} {word}  {name}: {detail}")


@pytest.fixture(scope="session")
def dsc_phantom():
    return generate(default_dsc_spec())


@pytest.fixture(scope="session")
def normalized(dsc_phantom):
    return minmax_normalize(dsc_phantom.series)


@pytest.fixture(scope="session")
def radial_r4(normalized):
    series, _ = normalized
    mask = densify_first_frame(make_radial_mask(32, 32, 24, 4.0, seed=0))
    y = forward_encode(series, mask, NoiseSpec(variance=1e-10, seed=0))
    return mask, y


@pytest.fixture(scope="session")
def recon_r4(radial_r4, normalized):
    # One 50-iteration run shared by several acceptance tests.
    from perfrecon.gfbs import GfbsConfig, reconstruct

    series, _ = normalized
    mask, y = radial_r4
    return reconstruct(y, mask, GfbsConfig(), truth=series)
