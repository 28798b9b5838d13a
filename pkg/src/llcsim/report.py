"""CSV emission for run reports."""

import csv
import io
import os

from llcsim.engine import COLUMNS, summarize

FLOAT_COLUMNS = ("llc_hit_rate", "mlc_miss_rate", "llc_miss_rate", "dca_leak_rate",
                 "io_throughput", "latency_proxy")
INT_COLUMNS = ("tick", "mem_bw_lines", "mask_lo", "mask_hi", "dca_enabled")


def _cell(name, v):
    if v == "" or v is None:
        return ""
    if name in FLOAT_COLUMNS:
        return f"{v:.6f}"
    return str(v)


def csv_text(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in report.rows:
        w.writerow([_cell(c, v) for c, v in zip(COLUMNS, row)])
    return buf.getvalue()


def emit_csv(report, destination):
    """Write ``report`` to a path or an open text stream."""
    text = csv_text(report)
    if hasattr(destination, "write"):
        destination.write(text)
        return
    parent = os.path.dirname(os.path.abspath(destination))
    os.makedirs(parent, exist_ok=True)
    with open(destination, "w", newline="") as f:
        f.write(text)


def read_csv(source):
    """Parse an emitted CSV back into typed row tuples."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, newline="") as f:
            text = f.read()
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != COLUMNS:
        raise ValueError(f"unexpected CSV header {header}")
    rows = []
    for rec in reader:
        row = []
        for name, v in zip(COLUMNS, rec):
            if v == "":
                row.append("")
            elif name in FLOAT_COLUMNS:
                row.append(float(v))
            elif name in INT_COLUMNS:
                row.append(int(v))
            else:
                row.append(v)
        rows.append(tuple(row))
    return rows


def summary_from_csv(source, total_ticks, warmup_ticks, summary_ticks=10):
    return summarize(read_csv(source), total_ticks, warmup_ticks, summary_ticks)


def write_actions(actions, destination):
    with open(destination, "w") as f:
        f.write("tick,action,target,detail\n")
        for line in actions:
            f.write(line + "\n")
