from __future__ import annotations

import pytest

from gwvir.engine import Engine
from gwvir.target import preset


@pytest.fixture(scope="session")
def point_engine() -> Engine:
    return Engine(preset("point"))


@pytest.fixture(scope="session")
def p1_engine() -> Engine:
    return Engine(preset("P1"))


@pytest.fixture(scope="session")
def p2_engine() -> Engine:
    return Engine(preset("P2"))
