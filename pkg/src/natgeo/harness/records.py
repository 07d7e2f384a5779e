"""CSV output: fixed headers, 17 significant digits, LF line endings."""

import csv
import io
from dataclasses import dataclass

RUN_HEADER = ("experiment", "method", "chart", "iteration", "theta_0", "theta_1",
              "loss", "step_norm", "epsilon", "wall_micros", "status")
ORDER_HEADER = ("method", "h", "error", "slope")


def fmt(value):
    """Render one CSV cell; floats use 17 significant digits, ``None`` is empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".17g")
    try:
        return format(float(value), ".17g")
    except (TypeError, ValueError):
        return str(value)


def to_csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def parse_csv(text):
    """Rows of a CSV produced by :func:`to_csv` as dicts of strings."""
    return list(csv.DictReader(io.StringIO(text)))


@dataclass(frozen=True)
class RunRecord:
    experiment: str
    method: str
    chart: str
    iteration: int
    theta_0: float | None
    theta_1: float | None
    loss: float | None
    step_norm: float | None
    epsilon: float | None
    wall_micros: int
    status: str = "ok"

    def row(self):
        return tuple(getattr(self, k) for k in RUN_HEADER)


def runs_csv(records):
    return to_csv(RUN_HEADER, (r.row() for r in records))


def validate_run_rows(rows):
    """Schema check for parsed run rows; returns a list of problems (empty when valid)."""
    problems = []
    last = {}
    for i, r in enumerate(rows):
        if tuple(r.keys()) != RUN_HEADER:
            problems.append(f"row {i}: header mismatch")
            continue
        key = (r["experiment"], r["method"], r["chart"])
        it = int(r["iteration"])
        if key in last and it <= last[key]:
            problems.append(f"row {i}: iteration not increasing for {key}")
        last[key] = it
        if r["status"] == "ok":
            try:
                loss = float(r["loss"])
            except ValueError:
                problems.append(f"row {i}: missing loss")
                continue
            if loss != loss or loss in (float("inf"), float("-inf")):
                problems.append(f"row {i}: non-finite loss")
        elif not r["status"].startswith("error:"):
            problems.append(f"row {i}: bad status {r['status']!r}")
    return problems
