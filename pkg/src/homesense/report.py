"""Offline checks over a report directory written by ``MetricsReport.write``.

Nothing here re-runs a simulation; the files are the only input.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

REPORT_FILES = ("timeseries.csv", "generated.csv", "summary.json", "events.log")


class ReportMissing(Exception):
    pass


@dataclass
class Verdict:
    checked_rows: int = 0
    sink_rows: int = 0
    generated_rows: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _read_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _samples(rows: list[dict[str, str]], path: Path) -> list[tuple[tuple[str, str, str, int], float]]:
    out = []
    for i, row in enumerate(rows, start=2):
        try:
            key = (row["home_id"], row["sensor_id"], row["metric"], int(row["measured_at"]))
            out.append((key, float(row["value"])))
        except (KeyError, TypeError, ValueError):
            raise ValueError(f"{path.name} line {i}: malformed row {row!r}") from None
    return out


def verify_report(outdir: str | Path) -> Verdict:
    """Conservation per snapshot, no duplicate sink keys, sink within generated.

    When every queue is empty in the final snapshot the sink must hold exactly
    the generated samples.
    """
    out = Path(outdir)
    for name in REPORT_FILES:
        if not (out / name).is_file():
            raise ReportMissing(f"{out / name} not found")
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    sink_path = out / summary.get("sink_file", "sink.csv")
    if not sink_path.is_file():
        raise ReportMissing(f"{sink_path} not found")

    v = Verdict()
    series = _read_csv(out / "timeseries.csv")
    for row in series:
        v.checked_rows += 1
        if row.get("accounted") != row.get("generated"):
            v.violations.append(f"t={row.get('t')}: accounted {row.get('accounted')} != generated {row.get('generated')}")

    try:
        generated = _samples(_read_csv(out / "generated.csv"), out / "generated.csv")
        sink = _samples(_read_csv(sink_path), sink_path)
    except ValueError as exc:
        v.violations.append(str(exc))
        return v
    v.generated_rows, v.sink_rows = len(generated), len(sink)

    gen = dict(generated)
    for key, n in Counter(k for k, _ in sink).items():
        if n > 1:
            v.violations.append(f"duplicate sink key {key} ({n} rows)")
    for key, value in sink:
        if key not in gen:
            v.violations.append(f"sink row {key} was never generated")
        elif gen[key] != value:
            v.violations.append(f"sink row {key} has value {value!r}, generated {gen[key]!r}")

    if series:
        last = series[-1]
        queues = [k for k in last if k.startswith("q_")] + ["gateway_queue"]
        if all(last.get(k) == "0" for k in queues):
            missing = set(gen) - {k for k, _ in sink}
            if missing:
                v.violations.append(f"{len(missing)} generated samples missing from drained sink, e.g. {min(missing)}")
        if last.get("sink_count") != str(len({k for k, _ in sink})):
            v.violations.append(f"final sink_count {last.get('sink_count')} != {len(sink)} sink rows")
        if last.get("generated") != str(len(gen)):
            v.violations.append(f"final generated {last.get('generated')} != {len(gen)} generated rows")
    return v
