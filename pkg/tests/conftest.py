"""Collect acceptance outcomes and print one line per criterion at the end."""
import pytest

_results: dict[str, list] = {}
_notes: list[str] = []


@pytest.fixture(scope="session")
def acceptance_note():
    """Append text shown under the criterion lines in the terminal summary."""
    return _notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    cid, title = mark.args
    entry = _results.setdefault(cid, [title, "PASS", ""])
    failed = rep.failed or (rep.when == "call" and rep.skipped)
    if failed and entry[1] == "PASS":
        entry[1] = "FAIL" if rep.failed else "SKIP"
        entry[2] = str(rep.longrepr).strip().splitlines()[-1][:160] if rep.longrepr else ""


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)
    for cid in sorted(_results, key=key):
        title, status, why = _results[cid]
        line = f"[{status}] {cid:>3}  {title}"
        terminalreporter.write_line(line + (f"  ({why})" if why else ""))
    for note in _notes:
        terminalreporter.write_line("")
        for text in note.rstrip().splitlines():
            terminalreporter.write_line(text)
