import pytest

from fdmac.params import ProtocolParams
from fdmac.simulator import SimConfig, SimMetrics, run

WARMUP = 10_000
MEASURE = 100_000

_ACCEPTANCE: list[tuple[str, bool, str]] = []
_RUNS: dict[tuple[int, int], SimMetrics] = {}


def fig3_params(cw_min: int, **kw) -> ProtocolParams:
    """Fig. 3 scenario: CW_max pinned at 2^15."""
    w_max = (2**15 // cw_min).bit_length() - 1
    base = dict(m_users=100, packet_len=1000, cw_min=cw_min, w_max=w_max, p_false_alarm=1e-3, p_miss=1e-2, difs=2)
    base.update(kw)
    return ProtocolParams(**base)


def fig3_run(cw_min: int, seed: int) -> SimMetrics:
    """Desk-scale FD run at a Fig. 3 point, cached for the whole session."""
    key = (cw_min, seed)
    if key not in _RUNS:
        _RUNS[key] = run(SimConfig(fig3_params(cw_min), seed=seed, warmup_attempts=WARMUP, measure_attempts=MEASURE))
    return _RUNS[key]


@pytest.fixture
def record():
    def _record(name: str, passed: bool, detail: str = "") -> None:
        _ACCEPTANCE.append((name, bool(passed), detail))

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
