import numpy as np
import pytest

from mmssl.cohort import CohortConfig, generate_cohort
from mmssl.volumes import Label, Modality, Population, ScanPair, SubjectRecord, Volume


def make_volume(data, modality=Modality.T1):
    return Volume(np.asarray(data, dtype=np.float32), modality)


def ramp(n=64, axis=0, scale=1.0, offset=0.0):
    idx = np.indices((n, n, n))[axis].astype(np.float64)
    return offset + scale * idx


def fake_subject(sid, label=Label.HC, population=Population.IN_DIST, n_scans=1, seed=0, n=8):
    rng = np.random.default_rng(seed)
    scans = tuple(
        ScanPair(
            Volume(rng.random((n, n, n)), Modality.T1),
            Volume(rng.random((n, n, n)), Modality.FALFF),
        )
        for _ in range(n_scans)
    )
    return SubjectRecord(sid, label, population, scans)


@pytest.fixture(scope="session")
def tiny_cohort():
    cfg = CohortConfig(n_in_dist=8, n_shift=4, label_mix=(0.5, 0.5, 0.0), shift_label_mix=(0.5, 0.5, 0.0),
                       scans_per_subject=(1, 2), seed=3)
    return generate_cohort(cfg)


@pytest.fixture(scope="session")
def head_volume(tiny_cohort):
    return tiny_cohort[0].scans[0].t1


ACCEPTANCE_CRITERIA = {
    1: "grid fidelity",
    2: "identity distortions",
    3: "FFT kernel oracle",
    4: "loss correctness",
    5: "architecture anchors",
    6: "pipeline sanity",
    7: "qualitative shape",
    8: "collapse detector",
}


def pytest_configure(config):
    config.mmssl_acceptance = {}
    config.mmssl_acceptance_collected = False


def pytest_collection_modifyitems(config, items):
    config.mmssl_acceptance_collected = any("test_acceptance" in item.nodeid for item in items)


@pytest.fixture
def verdict(request):
    """Record one acceptance line: ``verdict(n, passed, detail)``."""

    def record(n: int, passed: bool, detail: str) -> bool:
        request.config.mmssl_acceptance[n] = (bool(passed), detail)
        print(f"criterion {n} ({ACCEPTANCE_CRITERIA[n]}): {'PASS' if passed else 'FAIL'} | {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not config.mmssl_acceptance_collected:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in ACCEPTANCE_CRITERIA.items():
        passed, detail = config.mmssl_acceptance.get(n, (False, "not reached"))
        terminalreporter.write_line(f"criterion {n} ({name}): {'PASS' if passed else 'FAIL'} | {detail}")
