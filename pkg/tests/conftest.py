import numpy as np
import pytest

from granet.geometry import fibonacci_viewpoints
from granet.oracle import annotate_grasps
from granet.scenes import generate_scene, quantize_scene


@pytest.fixture(scope="session")
def lattice():
    return fibonacci_viewpoints(300)


@pytest.fixture(scope="session")
def annotated_scene(lattice):
    scene = quantize_scene(generate_scene(0, "desk"))
    return scene, annotate_grasps(scene, lattice)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = {
    1: "gradient suite",
    2: "normalization / spectral suite",
    3: "value-label oracle equivalence",
    4: "geometry oracles",
    5: "metric oracle",
    6: "overfit experiment",
    7: "ablation direction",
    8: "determinism",
    9: "selection-pipeline contract",
}
_RESULTS = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def criteria(request):
    """Record one outcome per acceptance criterion: ``criteria(n, passed, detail)``."""
    store = request.config.stash.setdefault(_RESULTS, {})

    def record(number: int, passed: bool, detail: str) -> None:
        store[number] = (bool(passed), detail)
        print(f"\ncriterion {number} ({CRITERIA[number]}): {'PASS' if passed else 'FAIL'} - {detail}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        passed, detail = results.get(n, (False, "not run or did not finish"))
        terminalreporter.write_line(f"criterion {n} {name}: {'PASS' if passed else 'FAIL'} - {detail}")
