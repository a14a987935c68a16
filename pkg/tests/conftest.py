"""Shared fixtures and small generators for the test suite."""

import numpy as np
import pytest

from fgse.scenegraph import LEFT_HAND, NO_HAND, RIGHT_HAND, Edge, Node, SceneGraph


def random_graph(rng: np.random.Generator, t: int = 0, n: int = 4, n_categories: int = 5,
                 p_edge: float = 0.6, hands: bool = True) -> SceneGraph:
    """Random graph with node 0 as left hand and node 1 as right hand."""
    nodes = []
    for i in range(n):
        role = NO_HAND
        if hands and i == 0:
            role = LEFT_HAND
        elif hands and i == 1:
            role = RIGHT_HAND
        nodes.append(Node(10 + i, int(rng.integers(n_categories)), role))
    edges = [Edge(10 + i, 10 + j, tuple(int(b) for b in rng.integers(0, 2, 14)))
             for i in range(n) for j in range(n) if i != j and rng.random() < p_edge]
    return SceneGraph(t, tuple(nodes), tuple(edges))


def random_stream(rng: np.random.Generator, length: int, **kw) -> list[SceneGraph]:
    return [random_graph(rng, t, **kw) for t in range(length)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_suite():
    from fgse.synth import generate_benchmark_suite
    return generate_benchmark_suite(n_subjects=3, episodes_per_subject=4, seed=11)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion that ran, with its recorded detail."""
    lines = {}
    for outcome in ("passed", "failed", "skipped"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            if rep.when != "call" and outcome == "passed":
                continue
            number = int(nodeid.split("test_criterion_")[1][:2])
            detail = dict(rep.user_properties).get("detail", "")
            if outcome == "skipped" and isinstance(rep.longrepr, tuple):
                detail = rep.longrepr[2].removeprefix("Skipped: ")
            status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[outcome]
            lines[number] = f"criterion {number:2d}: {status}" + (f"  {detail}" if detail else "")
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
