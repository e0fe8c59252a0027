"""Render figures from the simulator's sweep CSVs.

Reads only the documented CSV schema (summary.csv and links.csv, schema
version 1); deliberately independent of the simulator package so figures
can be produced from archived result directories alone.

Line charts show the seed mean per strategy with min/max whiskers. The
per-link CDF pools links across seeds, which is how a distribution over
"a 400-station network" is usually presented.
"""

import argparse
import csv
import math
import sys
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

SCHEMA_VERSION = "1"
STRATEGIES = ["ssf", "mpd", "dasa", "opasa"]
KINDS = (
    "throughput_vs_size",
    "per_link_cdf",
    "throughput_vs_framesize",
    "delay_vs_size",
)


class PlotError(Exception):
    """Anything that should stop rendering with a clear message."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    in_dir: Path
    out_path: Path

    def validate(self):
        if self.kind not in KINDS:
            raise PlotError(f"unknown figure kind: {self.kind}")
        if not self.in_dir.is_dir():
            raise PlotError(f"input directory not found: {self.in_dir}")


def _load_rows(path: Path, check_schema: bool) -> list[dict]:
    if not path.is_file():
        raise PlotError(f"input CSV not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise PlotError(f"{path.name} has no data rows")
    if check_schema:
        versions = {r["schema_version"] for r in rows}
        if versions != {SCHEMA_VERSION}:
            raise PlotError(
                f"{path.name}: schema version {sorted(versions)} "
                f"(this tool reads version {SCHEMA_VERSION})"
            )
    return rows


def _series(rows, x_field, y_field):
    """strategy -> x -> (mean, min, max) over seeds."""
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        acc[r["strategy"]][float(r[x_field])].append(float(r[y_field]))
    out = {}
    for strat, by_x in acc.items():
        out[strat] = {
            x: (sum(v) / len(v), min(v), max(v)) for x, v in sorted(by_x.items())
        }
    return out


def _line_chart(rows, x_field, y_field, xlabel, ylabel, title):
    series = _series(rows, x_field, y_field)
    xs = sorted({x for by_x in series.values() for x in by_x})
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for strat in STRATEGIES:
        if strat not in series:
            print(f"warning: no rows for strategy {strat!r}", file=sys.stderr)
            continue
        by_x = series[strat]
        if len(by_x) < len(xs):
            gaps = sorted(set(xs) - set(by_x))
            print(
                f"warning: strategy {strat!r} missing at {x_field}={gaps}",
                file=sys.stderr,
            )
        mean = [by_x[x][0] if x in by_x else math.nan for x in xs]
        lo = [m - by_x[x][1] if x in by_x else 0.0 for x, m in zip(xs, mean)]
        hi = [by_x[x][2] - m if x in by_x else 0.0 for x, m in zip(xs, mean)]
        ax.errorbar(
            xs, mean, yerr=[lo, hi], marker="o", capsize=3, label=strat.upper()
        )
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    return fig


def _cdf_chart(rows):
    by_strat = defaultdict(list)
    for r in rows:
        by_strat[r["strategy"]].append(float(r["throughput_mbps"]))
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for strat in STRATEGIES:
        if strat not in by_strat:
            print(f"warning: no rows for strategy {strat!r}", file=sys.stderr)
            continue
        vals = sorted(by_strat[strat])
        frac = [(k + 1) / len(vals) for k in range(len(vals))]
        ax.plot(vals, frac, label=strat.upper())
    ax.set_xlabel("Per-link throughput (Mbit/s)")
    ax.set_ylabel("Fraction of links")
    ax.set_title("Per-link throughput distribution")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    return fig


def build_figure(spec: FigureSpec):
    spec.validate()
    if spec.kind == "per_link_cdf":
        rows = _load_rows(spec.in_dir / "links.csv", check_schema=False)
        return _cdf_chart(rows)
    rows = _load_rows(spec.in_dir / "summary.csv", check_schema=True)
    if spec.kind == "throughput_vs_size":
        return _line_chart(
            rows, "num_stas", "aggregate_mbps",
            "Network size (stations)", "Aggregate throughput (Mbit/s)",
            "Aggregate throughput vs network size",
        )
    if spec.kind == "delay_vs_size":
        return _line_chart(
            rows, "num_stas", "mean_delay_ms",
            "Network size (stations)", "Mean frame delay (ms)",
            "Mean frame delay vs network size",
        )
    return _line_chart(
        rows, "frame_bytes", "aggregate_mbps",
        "Frame size (bytes)", "Aggregate throughput (Mbit/s)",
        "Aggregate throughput vs frame size",
    )


def render(spec: FigureSpec) -> Path:
    fig = build_figure(spec)
    try:
        spec.out_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(spec.out_path, dpi=150)
    finally:
        plt.close(fig)
    return spec.out_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="apsim-plots", description="Render figures from apsim sweep CSVs."
    )
    parser.add_argument("--in", dest="in_dir", required=True,
                        help="directory holding summary.csv / links.csv")
    parser.add_argument("--fig", required=True, choices=KINDS)
    parser.add_argument("--out", required=True, help="output image path")
    args = parser.parse_args(argv)

    spec = FigureSpec(
        kind=args.fig, in_dir=Path(args.in_dir), out_path=Path(args.out)
    )
    try:
        out = render(spec)
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
