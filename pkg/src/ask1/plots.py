"""CSV reading and deterministic SVG figure rendering for run artifacts."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# stable element ids + no timestamp metadata -> byte-identical output for identical input
plt.rcParams["svg.hashsalt"] = "ask1"


class CsvFormatError(ValueError):
    """Malformed CSV; the message carries the offending line number."""


def read_csv_columns(path) -> tuple[list[str], list[list[float]]]:
    """Read a numeric CSV with a header row; returns (header, columns)."""
    p = Path(path)
    with open(p, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{p}: line 1: empty file") from None
        if not header or any(not name.strip() for name in header):
            raise CsvFormatError(f"{p}: line 1: malformed header")
        cols: list[list[float]] = [[] for _ in header]
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{p}: line {line_no}: expected {len(header)} fields, got {len(row)}")
            for i, cell in enumerate(row):
                try:
                    cols[i].append(float(cell))
                except ValueError:
                    raise CsvFormatError(
                        f"{p}: line {line_no}: non-numeric value '{cell}'") from None
    if not cols[0]:
        raise CsvFormatError(f"{p}: line 2: no data rows")
    return header, cols


def write_csv(path, header: list[str], rows) -> None:
    """UTF-8, LF line endings, header row first."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def save_line_plot(x, series: dict[str, list], out_path, xlabel: str = "",
                   ylabel: str = "", title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    for name, ys in series.items():
        ax.plot(x, ys, label=name, linewidth=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if series:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_csv(csv_path, out_path) -> None:
    """Render a CSV as an SVG line plot: first column on x, one series per other column."""
    header, cols = read_csv_columns(csv_path)
    series = {name: cols[i] for i, name in enumerate(header[1:], start=1)}
    save_line_plot(cols[0], series, out_path, xlabel=header[0],
                   title=Path(csv_path).stem)


def plot_training_curves(metrics_csv, out_path) -> None:
    """Reward and episode-length curves from a metrics.csv."""
    header, cols = read_csv_columns(metrics_csv)
    idx = {name: i for i, name in enumerate(header)}
    x = cols[idx["iteration"]]
    fig, axes = plt.subplots(2, 1, figsize=(7.0, 6.0), sharex=True)
    axes[0].plot(x, cols[idx["mean_r_t"]], label="mean_r_t", linewidth=1.2)
    for name in ("rew_lin_track", "rew_ang_track"):
        if name in idx:
            axes[0].plot(x, cols[idx[name]], label=name, linewidth=1.0)
    axes[0].set_ylabel("reward per step")
    axes[0].legend(fontsize=8)
    axes[0].grid(True, alpha=0.3)
    axes[1].plot(x, cols[idx["mean_episode_len"]], linewidth=1.2)
    axes[1].set_ylabel("mean episode length")
    axes[1].set_xlabel("iteration")
    axes[1].grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
