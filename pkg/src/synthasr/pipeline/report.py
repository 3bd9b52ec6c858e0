"""WER tables in the layout of the result tables: one row per
(SpecAugment, synthetic data, LM) condition with dev/test clean/other
columns."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, fields
from pathlib import Path

COLUMNS = ("spec_aug", "syn_data", "lm", "dev_clean", "dev_other", "test_clean", "test_other")
HEADER = ("Spec Aug", "Syn. Data", "LM", "dev cl.", "dev oth.", "test cl.", "test oth.")
WER_COLUMNS = COLUMNS[3:]


@dataclass(frozen=True)
class ReportRow:
    spec_aug: str      # "Yes" / "No"
    syn_data: str      # "GST" / "No"
    lm: str            # "Y" / "N"
    dev_clean: float | None = None
    dev_other: float | None = None
    test_clean: float | None = None
    test_other: float | None = None

    def values(self):
        return [getattr(self, f.name) for f in fields(self)]


def _fmt(v):
    return "" if v is None else f"{v:.1f}"


def to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([v if isinstance(v, str) else ("" if v is None else repr(float(v))) for v in r.values()])
    return buf.getvalue()


def from_csv(text) -> list[ReportRow]:
    reader = csv.reader(io.StringIO(text))
    head = next(reader, None)
    if tuple(head or ()) != COLUMNS:
        raise ValueError(f"unexpected report header {head}")
    rows = []
    for line in reader:
        if not line:
            continue
        labels = line[:3]
        wers = [float(x) if x else None for x in line[3:]]
        rows.append(ReportRow(*labels, *wers))
    return rows


def to_table(rows, title="WER [%]") -> str:
    cells = [list(HEADER)] + [[r.spec_aug, r.syn_data, r.lm] + [_fmt(v) for v in r.values()[3:]] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(HEADER))]
    sep = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    lines = [title, sep]
    for n, row in enumerate(cells):
        lines.append("| " + " | ".join(c.rjust(w) if n and i >= 3 else c.ljust(w)
                                       for i, (c, w) in enumerate(zip(row, widths))) + " |")
        if n == 0:
            lines.append(sep.replace("-", "="))
    lines.append(sep)
    return "\n".join(lines) + "\n"


def write_report(rows, out_dir):
    """Write ``report.csv`` and ``report.txt``; returns their paths."""
    if not rows:
        raise ValueError("nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(to_csv(rows))
    (out / "report.txt").write_text(to_table(rows))
    return out / "report.csv", out / "report.txt"


__all__ = ["COLUMNS", "HEADER", "ReportRow", "WER_COLUMNS", "from_csv", "to_csv", "to_table", "write_report"]
