import pytest

from anofel import paillier
from anofel.rng import Rng


@pytest.fixture(scope="session")
def keys23():
    return paillier.keygen(3, 2, 512, Rng("test-keys-2-of-3"))


@pytest.fixture(scope="session")
def key_pool():
    """A few 2-of-3 keys for deployments with several committees."""
    return [paillier.keygen(3, 2, 512, Rng(("test-pool", i))) for i in range(4)]


# acceptance summary ------------------------------------------------------------------

_CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    _CRITERIA[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, detail = _CRITERIA[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
