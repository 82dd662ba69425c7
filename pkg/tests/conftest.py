import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trimbisim.abstraction import AbstractionParams
from trimbisim.system import InputGrid, LinearSystem
from trimbisim.trimming import OpenBox

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True)
settings.load_profile("default")

A_EX = np.array([[0.0, 1.0], [-1.0, 2.0]])
B_EX = np.array([[0.0], [1.0]])
C_EX = np.array([[0.0, -4.0]])


def jordan_exp(t):
    """exp((A+BC) t) for the example closed loop, from its Jordan form."""
    return np.exp(-t) * np.array([[1 + t, t], [-t, 1 - t]])


@pytest.fixture(scope="session")
def example_sys():
    box = OpenBox.from_pairs([(-5.0, 5.0)])
    return LinearSystem(A_EX, B_EX, box, InputGrid.regular(box, 0.1), 0.01)


@pytest.fixture(scope="session")
def example_params(example_sys):
    return AbstractionParams.synthesize(example_sys, C_EX, 0.12, 0.1)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.notes = number, title, []

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.notes)
        if exc_type is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        line = f"criterion {self.number:>2} {status}  {self.title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
