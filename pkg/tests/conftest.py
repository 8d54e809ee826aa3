import pytest

_CHECKS = pytest.StashKey[dict]()


class AcceptanceLog:
    """Collects sub-check results; the terminal summary prints one line per criterion."""

    def __init__(self, store: dict):
        self.store = store

    def check(self, criterion: int, title: str, name: str, ok: bool, detail: str) -> bool:
        entry = self.store.setdefault(criterion, {"title": title, "checks": []})
        entry["checks"].append((name, bool(ok), detail))
        return bool(ok)


@pytest.fixture(scope="session")
def acceptance(request):
    return AcceptanceLog(request.config.stash.setdefault(_CHECKS, {}))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CHECKS, None)
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(store):
        entry = store[criterion]
        ok = all(c[1] for c in entry["checks"])
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {entry['title']}")
        for name, passed, detail in entry["checks"]:
            terminalreporter.write_line(f"    [{'pass' if passed else 'FAIL'}] {name}: {detail}")
