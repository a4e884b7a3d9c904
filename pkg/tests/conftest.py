import os

import numpy as np
import pytest

from beamdn.geometry import CameraModel

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


def identity_camera(width=10, height=10) -> CameraModel:
    return CameraModel(np.eye(4), width, height)


@pytest.fixture
def tmp_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture(autouse=True)
def _single_thread(monkeypatch):
    monkeypatch.setenv("RAYDN_THREADS", os.environ.get("RAYDN_THREADS", "1"))
