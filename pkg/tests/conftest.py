import numpy as np
import pytest

from rompc import artifact as ar
from rompc import config as cf


@pytest.fixture(scope="session")
def synthetic_artifact():
    cfg = cf.resolve_config(cf.builtin_config("synthetic"))
    return ar.synthesize(cfg)


@pytest.fixture(scope="session")
def beam_artifact():
    cfg = cf.resolve_config(cf.builtin_config("beam"))
    return ar.synthesize(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Repeat the one-line verdict of every acceptance criterion after the run."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if getattr(rep, "when", None) != "call":
                continue
            lines += [v for k, v in getattr(rep, "user_properties", []) if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
