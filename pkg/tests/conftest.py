import pytest

from npcov.abstraction import build_decision_graph
from npcov.fixtures import load_fixture
from npcov.pipeline import analyze_many

from helpers import ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def mlp_fixture():
    return load_fixture("mlp")


@pytest.fixture(scope="session")
def conv_fixture():
    return load_fixture("convnet")


@pytest.fixture(scope="session")
def mlp(mlp_fixture):
    return mlp_fixture[0]


@pytest.fixture(scope="session")
def train_set(mlp_fixture):
    return mlp_fixture[1]


@pytest.fixture(scope="session")
def test_set(mlp_fixture):
    return mlp_fixture[2]


@pytest.fixture(scope="session")
def train_analyses(mlp, train_set):
    return analyze_many(mlp, train_set.inputs_for(mlp), 0.9)


@pytest.fixture(scope="session")
def mlp_graph(mlp, train_set, train_analyses):
    graph, report = build_decision_graph(mlp, train_set, 0.9, 0.6, 4, seed=0, analyses=train_analyses)
    return graph


@pytest.fixture(scope="session")
def test_analyses(mlp, test_set):
    return analyze_many(mlp, test_set.inputs_for(mlp), 0.9)

