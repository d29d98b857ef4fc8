"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES = []


def report(number: int, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    LINES.append(line)
    print(line)
    return ok
