from pathlib import Path

import pytest

from twinkernel.modelspec import load_text

MODELS = Path(__file__).resolve().parents[1] / "src" / "twinkernel" / "models" / "impact"


@pytest.fixture
def models_dir():
    return MODELS


def load(text):
    """Validated ModelSet for an inline document."""
    return load_text(text, "<test>")


# one "criterion N: PASS|FAIL ..." line per acceptance criterion, in run order
VERDICTS: list = []


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
