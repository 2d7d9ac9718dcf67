import json
from pathlib import Path

import pytest

from airkit.program import parse_program
from airkit.roi import CooccurrenceTable
from airkit.scene import load_scene_graph, scene_from_dict

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = sorted((FIXTURES / "golden").glob("*.json"))

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


def load_golden(path):
    doc = json.loads(Path(path).read_text())
    if "scene_file" in doc:
        g = load_scene_graph(Path(path).parent / doc["scene_file"])
    else:
        g = scene_from_dict(doc["scene"])
    table = CooccurrenceTable.from_dict(doc["cooccurrence"]) if "cooccurrence" in doc else None
    return {
        "name": Path(path).stem,
        "scene": g,
        "program": parse_program(doc["program"]),
        "table": table,
        "k": doc.get("k", 20),
        "expected": [[set(group) for group in step] for step in doc["expected"]],
        "fallback": doc["fallback"],
    }


@pytest.fixture
def chain_scene():
    return load_scene_graph(FIXTURES / "girl_jeans_bag.json")


@pytest.fixture
def chain_program():
    return parse_program((FIXTURES / "girl_jeans_bag.prog").read_text())
