from __future__ import annotations

import numpy as np
import pytest

_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, ok, detail)`` parts; merged into one line per criterion."""
    store = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    def record(criterion: int, ok: bool, detail: str) -> None:
        store.setdefault(criterion, []).append((bool(ok), detail))
        print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_ACCEPTANCE_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(store):
        parts = store[criterion]
        verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {criterion:>2}: {verdict}  {detail}")
