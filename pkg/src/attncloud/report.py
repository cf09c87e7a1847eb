"""Delimited report files.

All floats are written with 17 significant digits so identical runs produce
byte-identical files. Metric reports carry both the raw value and the
conventional display scaling (squared Chamfer x 1e4, absolute Chamfer x 1e3).
"""

from __future__ import annotations

REPORT_SCALES = {
    "cd-l2": 1e4,
    "cd-l1": 1e3,
}


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_loss_curve(path, history):
    """CSV of per-epoch mean losses: epoch,train_loss,val_loss."""
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_loss\n")
        for epoch, (train_loss, val_loss) in enumerate(history):
            f.write(f"{epoch},{format_float(train_loss)},{format_float(val_loss)}\n")


def read_loss_curve(path):
    rows = []
    with open(path) as f:
        next(f)
        for line in f:
            _, train_loss, val_loss = line.rstrip("\n").split(",")
            rows.append((float(train_loss), float(val_loss)))
    return rows


def write_metrics_report(path, rows):
    """CSV: metric,category,value,scaled_value,scale for (metric, category,
    value) triples."""
    with open(path, "w") as f:
        f.write("metric,category,value,scaled_value,scale\n")
        for metric, category, value in rows:
            scale = REPORT_SCALES.get(metric, 1.0)
            f.write(
                f"{metric},{category},{format_float(value)},"
                f"{format_float(value * scale)},{format_float(scale)}\n"
            )
