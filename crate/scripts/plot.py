#!/usr/bin/env python3
"""Render line charts from a plotspec and its result CSV.

Usage: plot.py results/fig3-desk.plotspec.json [more.plotspec.json ...]

Each plotspec names the CSV it describes (relative to the spec file), the
axes, and one row filter per series. Rows are averaged over seeds at each
x value; failed rows (NaN metric) are skipped. Writes <name>.png next to
the spec.
"""

import csv
import json
import math
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def matches(row, filt):
    for key, want in filt.items():
        got = row.get(key, "")
        if isinstance(want, (int, float)):
            try:
                if float(got) != float(want):
                    return False
            except ValueError:
                return False
        elif got != str(want):
            return False
    return True


def series_points(rows, filt, x_col, y_col):
    grouped = defaultdict(list)
    for row in rows:
        if not matches(row, filt):
            continue
        y = float(row[y_col])
        if math.isnan(y):
            continue
        grouped[float(row[x_col])].append(y)
    xs = sorted(grouped)
    return xs, [sum(grouped[x]) / len(grouped[x]) for x in xs]


def render(spec_path):
    spec_path = Path(spec_path)
    spec = json.loads(spec_path.read_text())
    rows = load_rows(spec_path.parent / spec["csv"])
    fig, ax = plt.subplots(figsize=(7, 5))
    for series in spec["series"]:
        xs, ys = series_points(rows, series["filter"], spec["x"]["column"], spec["y"]["column"])
        if xs:
            ax.plot(xs, ys, marker="o", label=series["label"])
    ax.set_xlabel(spec["x"]["label"])
    ax.set_ylabel(spec["y"]["label"])
    ax.set_title(spec["name"])
    ax.grid(True, alpha=0.3)
    ax.legend()
    out = spec_path.parent / f"{spec['name']}.png"
    fig.savefig(out, dpi=150, bbox_inches="tight")
    plt.close(fig)
    print(f"wrote {out}")


def main(argv):
    if len(argv) < 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    for spec in argv[1:]:
        render(spec)
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv))
