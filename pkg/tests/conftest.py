"""Shared trained fixture.

Training the full desk-scale bundle takes a while on one core. Set
``NPISUP_TRAINED_DIR`` to a directory to keep the dataset and bundle between
runs; a directory left from an earlier run is reused as is.
"""

import json
import os
import shutil
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from npisup import cli, npinet
from npisup.gridsim import Dataset

TRAIN_SLOTS = 8000  # 6000 pretrain / 1000 downstream_train / 1000 test
TRAIN_SEED = 0


@dataclass
class Trained:
    root: Path
    ds: Dataset
    bundle: npinet.PipelineBundle
    step1: npinet.PipelineBundle  # snapshot after supervised NPI training, before the joint step
    seconds: dict  # wall-clock per step: gen and each training phase

    @property
    def train_seconds(self) -> float:
        return sum(self.seconds.values())


def _train(root: Path) -> dict:
    data, bundle = root / "data", root / "bundle"
    seconds = {}
    t0 = time.perf_counter()
    if cli.main(["gen", "--count", str(TRAIN_SLOTS), "--seed", str(TRAIN_SEED), "--out", str(data)]) != 0:
        raise RuntimeError("gen failed")
    seconds["gen"] = time.perf_counter() - t0
    for phase in ("refine", "npi1", "npi2", "baseline", "sinr"):
        t0 = time.perf_counter()
        rc = cli.main(["train", phase, "--data", str(data), "--bundle", str(bundle), "--seed", str(TRAIN_SEED)])
        if rc != 0:
            raise RuntimeError(f"training phase {phase} failed with exit code {rc}")
        seconds[phase] = time.perf_counter() - t0
        if phase == "npi1":
            shutil.copytree(bundle, root / "bundle_step1")
    (root / "seconds.json").write_text(json.dumps(seconds, indent=1) + "\n")
    return seconds


@pytest.fixture(scope="session")
def trained(tmp_path_factory) -> Trained:
    env = os.environ.get("NPISUP_TRAINED_DIR")
    root = Path(env) if env else tmp_path_factory.mktemp("trained")
    root.mkdir(parents=True, exist_ok=True)
    if (root / "seconds.json").exists():
        seconds = json.loads((root / "seconds.json").read_text())
    else:
        seconds = _train(root)
    ds = Dataset.load(root / "data" / cli.DATASET_FILE)
    return Trained(root, ds, npinet.load_bundle(root / "bundle", ds.config),
                   npinet.load_bundle(root / "bundle_step1", ds.config), seconds)


# -- acceptance lines -----------------------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """``criterion(n, passed, detail)`` prints one PASS/FAIL line and keeps it for the run summary."""

    def record(n: int, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with request.config.pluginmanager.getplugin("capturemanager").global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
