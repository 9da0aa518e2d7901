import math

import pytest

from tunnelnav.world import TunnelSpec, build_tunnel

CURVED_SEGMENTS = ((10.0, 0.0), (30.0, math.pi / 6), (40.0, -math.pi / 6))


@pytest.fixture(scope="session")
def straight_smooth():
    return build_tunnel(TunnelSpec(roughness_amplitude=0.0), seed=0)


@pytest.fixture(scope="session")
def straight_rough():
    return build_tunnel(TunnelSpec(), seed=3)


@pytest.fixture(scope="session")
def curved_rough():
    return build_tunnel(TunnelSpec(segments=CURVED_SEGMENTS), seed=5)


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
