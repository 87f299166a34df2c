"""Shared fixtures and the acceptance-summary terminal hook."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from plane4d.renderer import Camera
from plane4d.scene_io import Dataset
from plane4d.synth import SynthSceneSpec, generate_synthetic

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def camera_small() -> Camera:
    return Camera(width=8, height=8, fx=10.0, fy=10.0, cx=3.5, cy=3.5, near=1.0, far=8.0)


@pytest.fixture(scope="session")
def tiny_dataset() -> Dataset:
    """A small but fully featured synthetic scene for fast pipeline tests."""
    spec = SynthSceneSpec(width=16, height=16, frame_count=6, focal=16.0, object_radius=3.0)
    return generate_synthetic(spec, seed=7)


# ---------------------------------------------------------------------------
# Acceptance reporting: each criterion test registers a one-line verdict that
# is echoed at the end of the run, so `pytest -v` output always carries one
# PASS/FAIL line per criterion.

ACCEPTANCE_CRITERIA = (
    "oracle-equivalence",
    "gradient-suite",
    "rendering-invariants",
    "isdm-correctness",
    "end-to-end-benchmark",
    "ablation-directions",
    "determinism",
    "point-cloud-geometry",
)

_acceptance_results: dict[str, tuple[bool, str]] = {}


def record_acceptance(name: str, passed: bool, detail: str):
    assert name in ACCEPTANCE_CRITERIA, f"unknown acceptance criterion {name!r}"
    _acceptance_results[name] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name in ACCEPTANCE_CRITERIA:
        if name in _acceptance_results:
            passed, detail = _acceptance_results[name]
            verdict = "PASS" if passed else "FAIL"
            terminalreporter.write_line(f"[acceptance] {name}: {verdict} — {detail}")
        else:
            terminalreporter.write_line(f"[acceptance] {name}: NOT RUN")
