import numpy as np
import pytest

from rigepi.weights import DiscreteWeightLaw, ExponentialLaw, WeightModel

INF = DiscreteWeightLaw.constant(np.inf)


def make_model(A=2.0, B=1.0, I=None, T=None) -> WeightModel:
    def law(x):
        return DiscreteWeightLaw.constant(x) if np.isscalar(x) else x

    return WeightModel(law(A), law(B), INF if I is None else law(I),
                       ExponentialLaw(1.0) if T is None else T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def growth_model():
    """A = 2, B = 1, T ~ Exp(1), no recovery."""
    return make_model()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> bool:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2} {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
