import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from blindmark.config import Geometry  # noqa: E402
from blindmark.prc import KeySet, PrcParams  # noqa: E402
from blindmark.seeds import master_seed  # noqa: E402
from blindmark.toysim import CarrierBank  # noqa: E402
from synth import drop_trial, localize, splice_trial  # noqa: E402

SEG_TRIALS = 100

# (video frames, d_t, windows inverted) for every sgo_run call made by the suite.
WINDOW_LOG: list[tuple[int, int, int]] = []

# criterion number -> (passed, one-line detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE and not WINDOW_LOG:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    if WINDOW_LOG:
        worst = max(w / (f * d) for f, d, w in WINDOW_LOG)
        tr.write_line(f"window budget across the whole session: {len(WINDOW_LOG)} sgo runs, "
                      f"max windows / (f * d_t) = {worst:.3f} ({'PASS' if worst <= 1 else 'FAIL'})")


@pytest.fixture(scope="session")
def geometry() -> Geometry:
    return Geometry()


@pytest.fixture(scope="session")
def params() -> PrcParams:
    return PrcParams()


@pytest.fixture(scope="session")
def keyset(params) -> KeySet:
    ks = KeySet(params, master_seed(2024), 16)
    ks.keys()
    return ks


@pytest.fixture(scope="session")
def carriers(geometry) -> CarrierBank:
    return CarrierBank.derive(geometry)


@pytest.fixture(scope="session")
def seg_trials(geometry, carriers):
    """Localization outcomes of the randomized drop and splice suites."""
    out = {}
    for name, make in (("drop", drop_trial), ("splice", splice_trial)):
        out[name] = [localize(*make(1000 + s, geometry, carriers, frames=24)) for s in range(SEG_TRIALS)]
    return out


@pytest.fixture(scope="session", autouse=True)
def _record_windows():
    """Wrap sgo_run wherever it was imported so every call logs its window count."""
    import blindmark.cli
    import blindmark.pipeline
    import blindmark.sgo

    original = blindmark.sgo.sgo_run

    def logged(video, keyset, carriers, *args, **kwargs):
        out = original(video, keyset, carriers, *args, **kwargs)
        WINDOW_LOG.append((len(video), carriers.geometry.d_t, out[1].windows))
        return out

    with pytest.MonkeyPatch.context() as mp:
        for mod in (blindmark.sgo, blindmark.pipeline, blindmark.cli):
            mp.setattr(mod, "sgo_run", logged)
        yield


@pytest.fixture(autouse=True)
def _window_budget():
    start = len(WINDOW_LOG)
    yield
    over = [w for w in WINDOW_LOG[start:] if w[2] > w[0] * w[1]]
    assert not over, f"window budget exceeded: {over}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
