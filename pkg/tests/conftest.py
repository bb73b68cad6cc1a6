import numpy as np
import pytest
from hypothesis import settings

from marginprune import cli, qmm
from marginprune.margins import lower_margin_block, margin_system

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# every optimal QMM solve made anywhere in the run, checked against its constraints
QMM_AUDITS = []
ACCEPTANCE = {}


def _audited(fn):
    def wrapper(H, y, alpha, ladder, weight_threshold=qmm.WEIGHT_THRESHOLD):
        res = fn(H, y, alpha, ladder, weight_threshold)
        if res.solver_status == "Optimal":
            rr = qmm.rank_reduce(H, alpha)
            ms = margin_system(rr.H_prime, y, rr.alpha_prime)
            blk = lower_margin_block(ms, res.upsilon_used)
            w = res.weights[rr.pivots]
            slack = float((blk.Lambda @ w - blk.phi).min())
            excess = float(w @ ms.sigma @ w - rr.alpha_prime @ ms.sigma @ rr.alpha_prime)
            QMM_AUDITS.append((slack, excess))
        return res
    return wrapper


@pytest.fixture(autouse=True, scope="session")
def audit_qmm_solves():
    mp = pytest.MonkeyPatch()
    wrapped = _audited(qmm.qmm_weights)
    mp.setattr(qmm, "qmm_weights", wrapped)
    mp.setattr(cli, "qmm_weights", wrapped)
    yield
    mp.undo()


def pytest_collection_modifyitems(items):
    # acceptance runs last so that its audit sees every solve in the suite
    items.sort(key=lambda item: item.fspath.basename == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
