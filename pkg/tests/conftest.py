import copy

import pytest

STANDARD_ENV = {
    "num_dof": 16,
    "init": "random",
    "rule": [],
    "payload_width": 2,
    "noise_slot_len": 6,
    "epsilon": 0,
    "seed": 3,
    "sources": [{"id": "A", "tag": "01", "dofs": [0, 1], "values": [0.0, 0.1, 0.2, 0.3]}],
}


@pytest.fixture
def standard_env_spec():
    """16 DOFs, one source over DOFs 0-1 with k = 4."""
    return copy.deepcopy(STANDARD_ENV)


@pytest.fixture
def three_source_spec():
    return {
        "num_dof": 12,
        "init": "101100111000",
        "rule": [["CXOR", 8, 0], ["SWAP", 1, 9], ["NOT", 10], ["CXOR", 3, 4], ["SWAP", 5, 11]],
        "payload_width": 2,
        "epsilon": 0,
        "seed": 11,
        "sources": [
            {"id": "A", "tag": "00", "dofs": [0, 1], "values": [0, 1, 2, 3]},
            {"id": "B", "tag": "01", "dofs": [2, 3], "values": [10, 11, 12, 13]},
            {"id": "C", "tag": "10", "dofs": [4, 5], "values": [20, 21, 22, 23]},
        ],
    }


def observer_doc_for(env_spec, capacity=1 << 20, sources=None, window=None):
    chosen = [s for s in env_spec["sources"] if sources is None or s["id"] in sources]
    doc = {
        "memory_capacity_bits": capacity,
        "recognizers": [{"source_id": s["id"], "tag": s["tag"]} for s in chosen],
        "extractors": [{"source_id": s["id"], "values": s["values"]} for s in chosen],
    }
    if window is not None:
        doc["window"] = window
    return doc


_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py::test_criterion_" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
