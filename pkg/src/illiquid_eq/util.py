"""Small shared helpers: thread cap and deterministic CSV writing."""

from __future__ import annotations

import csv
import os

__all__ = ["max_threads", "write_csv"]


def max_threads(default: int = 4) -> int:
    """Parallelism cap: ILLIQUID_EQ_THREADS if set, else min(default, cpus)."""
    env = os.environ.get("ILLIQUID_EQ_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, min(default, os.cpu_count() or 1))


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with a header row; floats rendered as %.12g."""

    def fmt(v):
        if isinstance(v, float):
            return f"{v:.12g}"
        return v

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
