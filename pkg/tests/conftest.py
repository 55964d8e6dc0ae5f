import itertools

import pytest

from bonsai.core import Workspace


class SteppingClock:
    """Deterministic clock advancing one second per read."""

    def __init__(self, start: float = 0.0, step: float = 1.0):
        self._counter = itertools.count()
        self._start = start
        self._step = step
        self.offset = 0.0

    def __call__(self) -> float:
        return self._start + next(self._counter) * self._step + self.offset


@pytest.fixture
def clock():
    return SteppingClock()


@pytest.fixture
def ws(clock):
    return Workspace(clock=clock)
