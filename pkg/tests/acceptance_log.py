"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES: dict[int, str] = {}


def report(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES[number] = line
    print(line)
    return ok
