import numpy as np
import pytest

from uqseg import io as uio
from uqseg.cli import main


@pytest.fixture(scope="session")
def frozen_cohort_dir(tmp_path_factory):
    """The default synthetic cohort (200 images, severities 0..0.9, seed 42) on disk."""
    out = tmp_path_factory.mktemp("frozen")
    assert main(["synth", "--out", str(out)]) == 0
    return out


@pytest.fixture
def toy_manifest(tmp_path):
    """Five 1x24 images whose reference Dice vs ground truth is 0.9, 0.8, ..., 0.5.

    Each stack has two samples that disagree on one background pixel, more
    strongly for worse images, so every pixel metric ranks them by Dice.
    """
    rows = []
    gt = np.zeros((1, 24), dtype=bool)
    gt[0, :10] = True
    for k in range(5):
        ref = np.zeros((1, 24), dtype=bool)
        ref[0, k + 1 : k + 11] = True  # overlap 9 - k of 10 pixels
        s0 = ref.astype(float)
        s1 = s0.copy()
        s1[0, 23] = 0.1 + 0.15 * k
        image_id = f"case{k}"
        uio.write_stack(tmp_path / f"{image_id}.uqs", np.stack([s0, s1]))
        uio.write_mask(tmp_path / f"{image_id}_ref.uqm", ref)
        uio.write_mask(tmp_path / f"{image_id}_gt.uqm", gt)
        rows.append(
            uio.ManifestRow(
                image_id,
                tmp_path / f"{image_id}.uqs",
                tmp_path / f"{image_id}_ref.uqm",
                tmp_path / f"{image_id}_gt.uqm",
            )
        )
    path = tmp_path / "manifest.csv"
    uio.write_manifest(path, rows)
    return path


_criteria = {}


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, description = mark.args
    entry = _criteria.setdefault(number, {"description": description, "ok": True, "seen": False})
    if call.when == "call":
        entry["seen"] = True
    if call.excinfo is not None:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] and entry["seen"] else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number}: {entry['description']}")
