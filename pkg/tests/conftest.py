import sys
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graphnav.fixtures import gen_fixture_world  # noqa: E402


@lru_cache(maxsize=None)
def fixture_world(kind: str, seed: int = 0):
    return gen_fixture_world(kind, seed)


@pytest.fixture(scope="session", params=["corridor", "loop", "tee"])
def any_fixture(request):
    return fixture_world(request.param, 0)


TIMINGS: dict[str, float] = {}


@pytest.fixture(scope="session")
def seen_data():
    """Annotated noisy expert runs on the seen fixture worlds (about 1.5 min to build)."""
    import time

    from _pipeline import annotated_worlds

    t0 = time.perf_counter()
    data = annotated_worlds()
    TIMINGS["seen_data"] = time.perf_counter() - t0
    return data


@pytest.fixture(scope="session")
def trained_policies(seen_data):
    from _pipeline import train_policies

    return train_policies(seen_data)


@pytest.fixture(scope="session")
def trained_gln(seen_data):
    """(params, curve, training examples, held-out examples, seconds spent training)."""
    import time

    from _pipeline import train_localizer

    t0 = time.perf_counter()
    params, curve, tr, te = train_localizer(seen_data)
    return params, curve, tr, te, time.perf_counter() - t0


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
