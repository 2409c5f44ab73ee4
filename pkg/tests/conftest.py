import pytest

from bgaml.fixture import build_fixture, build_single_junction, fixture_incident
from bgaml.netmodel import Link, NetworkSpec, Node, with_routes


def parallel_network(t0=(10 / 60, 12 / 60), capacity=(1000.0, 1000.0), demand=1500.0) -> NetworkSpec:
    """Two parallel links between one origin and one destination."""
    links = tuple(Link(f"a{i + 1}", "O", "D", t, s) for i, (t, s) in enumerate(zip(t0, capacity)))
    net = NetworkSpec(
        nodes=(Node("O"), Node("D")),
        links=links,
        centroids=("O", "D"),
        demand={("O", "D"): demand},
    )
    return with_routes(net, k=len(links))


@pytest.fixture(scope="session")
def fixture_net():
    return build_fixture()


@pytest.fixture(scope="session")
def incident():
    return fixture_incident()


@pytest.fixture(scope="session")
def single_net():
    return build_single_junction()


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def report():
    def record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"\ncriterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
