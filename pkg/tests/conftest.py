import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance(request):
    """``acceptance(ok, detail)`` records the verdict of a ``test_criterion_NN_*`` test
    and asserts it; a test that errors before reaching its verdict is logged as FAIL."""
    num = int(request.node.originalname.split("_")[2])

    def record(ok: bool, detail: str):
        _ACCEPTANCE[num] = f"criterion {num:>2}  {'PASS' if ok else 'FAIL'}  {detail}"
        print(_ACCEPTANCE[num])
        assert ok, detail

    yield record
    _ACCEPTANCE.setdefault(num, f"criterion {num:>2}  FAIL  raised before a verdict")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for num in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[num])
