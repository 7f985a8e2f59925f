"""Collects the one-line acceptance verdicts printed at the end of the run."""

LINES: list[str] = []


def verdict(criterion: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
    LINES.append(line)
    print(line)
    return ok
