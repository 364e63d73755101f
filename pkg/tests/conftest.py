import os

import hypothesis
import numpy as np
import pytest

from treeformat.dtree import balanced_tree, linear_tree, tucker_tree

hypothesis.settings.register_profile("default", deadline=None, max_examples=40)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=5)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FAMILIES = {"tucker": tucker_tree, "linear": linear_tree, "balanced": balanced_tree}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ghz():
    """e1 x e1 x e1 + e2 x e2 x e2 on 2x2x2."""
    v = np.zeros((2, 2, 2))
    v[0, 0, 0] = v[1, 1, 1] = 1.0
    return v


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def accept():
    """Record one pass/fail line for an acceptance criterion, then assert it."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
