import pytest

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def accept(request):
    """Record a one-line PASS/FAIL verdict for an acceptance criterion."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(cid: str, ok: bool, text: str):
        ACCEPTANCE[cid] = (bool(ok), text)
        line = f"[{cid}] {'PASS' if ok else 'FAIL'}  {text}"
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=lambda c: int(c[1:])):
        ok, text = ACCEPTANCE[cid]
        terminalreporter.write_line(f"[{cid}] {'PASS' if ok else 'FAIL'}  {text}")
    passed = sum(ok for ok, _ in ACCEPTANCE.values())
    terminalreporter.write_line(f"{passed}/{len(ACCEPTANCE)} criteria passed")
