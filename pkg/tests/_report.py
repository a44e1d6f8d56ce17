"""Shared state for the acceptance summary and the suite-wide run invariants."""

RESULTS: dict[str, tuple[bool, str]] = {}
RUNS: list = []


def record(key: str, ok: bool, detail: str = "") -> bool:
    RESULTS[key] = (bool(ok), detail)
    return bool(ok)
