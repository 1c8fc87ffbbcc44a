import random

import pytest

from homesense.cred_envelope import Credentials, KeyPair


class SeededRandom(random.Random):
    """random.Random with the RandomSource interface (``randbytes``) the sealer expects."""


@pytest.fixture
def keys():
    return KeyPair(bytes(range(16)), bytes(range(16, 48)))


@pytest.fixture
def other_keys():
    return KeyPair.derive(b"not the household secret")


@pytest.fixture
def creds():
    return Credentials("Home", "secret123")


@pytest.fixture
def rng():
    return SeededRandom(1234)


ACCEPTANCE: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE.append(f"{criterion:<4} {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
