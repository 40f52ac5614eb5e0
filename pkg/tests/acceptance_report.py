"""Collects one PASS/FAIL line per acceptance criterion."""

LINES = []


def report(number, title, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {title}"
    if detail:
        line += f"  [{detail}]"
    LINES.append(line)
    print(line, flush=True)
    return ok
