"""Offset-trace statistics: accuracy, precision, outlier filtering, sigma tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .simcore import PS_PER_US

DEFAULT_OUTLIER_BOUND_PS = 10 * PS_PER_US
ONE_SIGMA_COVERAGE = 0.6827
TRACE_COLUMNS = ("true_time_ps", "offset_ps", "offset_us")


class TraceFormatError(ValueError):
    """A trace CSV does not follow the expected schema."""


@dataclass
class OffsetTrace:
    """Time series of master-minus-slave clock offsets in picoseconds."""

    times: list[int] = field(default_factory=list)
    offsets: list[int] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.offsets):
            raise ValueError("times and offsets must have equal length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("trace times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.offsets)

    def append(self, true_time: int, offset: int) -> None:
        if self.times and true_time <= self.times[-1]:
            raise ValueError(f"sample at {true_time} ps does not follow {self.times[-1]} ps")
        self.times.append(int(true_time))
        self.offsets.append(int(offset))

    def values(self) -> np.ndarray:
        return np.asarray(self.offsets, dtype=np.int64)

    def subset(self, keep: Iterable[bool]) -> "OffsetTrace":
        keep = list(keep)
        return OffsetTrace([t for t, k in zip(self.times, keep) if k],
                           [o for o, k in zip(self.offsets, keep) if k],
                           dict(self.metadata))

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.metadata):
            buf.write(f"# {key}={self.metadata[key]}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for t, o in zip(self.times, self.offsets):
            writer.writerow((t, o, f"{o / PS_PER_US:.6f}"))
        return buf.getvalue()

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "OffsetTrace":
        trace = cls()
        header_seen = False
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            if line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if sep:
                    trace.metadata[key.strip()] = value.strip()
                continue
            row = next(csv.reader([line]))
            if not header_seen:
                if tuple(c.strip() for c in row[:2]) != TRACE_COLUMNS[:2]:
                    raise TraceFormatError(
                        f"row {lineno}: expected header starting with "
                        f"{','.join(TRACE_COLUMNS[:2])}, got {line!r}")
                header_seen = True
                continue
            try:
                t, o = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise TraceFormatError(f"row {lineno}: expected integer ps values, got {line!r}")
            try:
                trace.append(t, o)
            except ValueError as exc:
                raise TraceFormatError(f"row {lineno}: {exc}") from None
        if not header_seen:
            raise TraceFormatError("row 1: missing header")
        return trace

    @classmethod
    def load(cls, path: Union[str, Path]) -> "OffsetTrace":
        return cls.from_csv(Path(path).read_text())


def filter_outliers(trace: OffsetTrace,
                    bound: int = DEFAULT_OUTLIER_BOUND_PS) -> tuple[OffsetTrace, int]:
    """Drop samples with ``|offset| > bound``; returns the reduced trace and the drop count."""
    if bound <= 0:
        raise ValueError("outlier bound must be positive")
    keep = [abs(o) <= bound for o in trace.offsets]
    return trace.subset(keep), keep.count(False)


def accuracy_precision(trace: Union[OffsetTrace, np.ndarray]) -> tuple[float, float]:
    """Signed mean and sample standard deviation (N - 1) in ps."""
    x = trace.values() if isinstance(trace, OffsetTrace) else np.asarray(trace)
    if x.size < 2:
        raise ValueError(f"need at least 2 samples, got {x.size}")
    x = x.astype(np.float64)
    return float(x.mean()), float(x.std(ddof=1))


@dataclass(frozen=True)
class SigmaRow:
    k: int
    low: float
    high: float
    p_reduced: float
    p_full: float


@dataclass
class PrecisionReport:
    mean: float
    std: float
    rows: list[SigmaRow]
    outlier_count: int
    outlier_bound: int
    n_full: int
    n_reduced: int

    def row(self, k: int) -> SigmaRow:
        return next(r for r in self.rows if r.k == k)

    def to_text(self, label: str = "") -> str:
        lines = []
        if label:
            lines.append(f"trace = {label}")
        lines += [
            f"samples_full = {self.n_full}",
            f"samples_reduced = {self.n_reduced}",
            f"outlier_bound_ps = {self.outlier_bound}",
            f"outlier_count = {self.outlier_count}",
            f"accuracy_ps = {self.mean:.3f}",
            f"accuracy_abs_ps = {abs(self.mean):.3f}",
            f"precision_ps = {self.std:.3f}",
            f"accuracy_us = {self.mean / PS_PER_US:.4f}",
            f"precision_us = {self.std / PS_PER_US:.4f}",
        ]
        for r in self.rows:
            lines += [
                f"sigma{r.k}.interval_us = {self.mean / PS_PER_US:.2f} +/- "
                f"{r.k * self.std / PS_PER_US:.2f}",
                f"sigma{r.k}.p1 = {r.p_reduced:.4f}",
                f"sigma{r.k}.p2 = {r.p_full:.4f}",
            ]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("k", "low_ps", "high_ps", "p1", "p2", "low_us", "high_us"))
        for r in self.rows:
            writer.writerow((r.k, f"{r.low:.3f}", f"{r.high:.3f}", f"{r.p_reduced:.6f}",
                             f"{r.p_full:.6f}", f"{r.low / PS_PER_US:.4f}",
                             f"{r.high / PS_PER_US:.4f}"))
        return buf.getvalue()


def sigma_table(trace: OffsetTrace, outlier_bound: int = DEFAULT_OUTLIER_BOUND_PS,
                ks: tuple[int, ...] = (1, 2, 3)) -> PrecisionReport:
    """Coverage of mean +/- k*std for the reduced (P1) and the full (P2) data set.

    Mean and std come from the reduced trace; P2 counts hits over every
    sample, outliers included.
    """
    reduced, n_out = filter_outliers(trace, outlier_bound)
    if len(reduced) == 0:
        raise ValueError("no samples left after outlier filtering")
    mean, std = accuracy_precision(reduced)
    full = trace.values().astype(np.float64)
    red = reduced.values().astype(np.float64)
    rows = []
    for k in ks:
        lo, hi = mean - k * std, mean + k * std
        rows.append(SigmaRow(
            k, lo, hi,
            float(np.count_nonzero((red >= lo) & (red <= hi)) / red.size),
            float(np.count_nonzero((full >= lo) & (full <= hi)) / full.size),
        ))
    return PrecisionReport(mean, std, rows, n_out, outlier_bound, len(trace), len(reduced))


@dataclass
class Histogram:
    centers: list[int]
    counts: list[int]
    underflow: int
    overflow: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("bin_center_ps", "count"))
        writer.writerow(("-inf", self.underflow))
        writer.writerows(zip(self.centers, self.counts))
        writer.writerow(("inf", self.overflow))
        return buf.getvalue()


def histogram(trace: OffsetTrace, bin_width: int,
              bound: int = DEFAULT_OUTLIER_BOUND_PS) -> Histogram:
    """Uniform bins of ``bin_width`` centred on multiples of the width, spanning +/- bound."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    half_bins = max(0, -(-(2 * bound - bin_width) // (2 * bin_width)))
    counts = [0] * (2 * half_bins + 1)
    under = over = 0
    for x in trace.offsets:
        if x < -bound:
            under += 1
        elif x > bound:
            over += 1
        else:
            k = (2 * x + bin_width) // (2 * bin_width)
            counts[min(max(k, -half_bins), half_bins) + half_bins] += 1
    centers = [k * bin_width for k in range(-half_bins, half_bins + 1)]
    return Histogram(centers, counts, under, over)


@dataclass(frozen=True)
class DensityOverlays:
    full: tuple[float, float]
    reduced: tuple[float, float]
    # reduced-trace fit with sigma widened for full-trace coverage
    optimized: tuple[float, float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("density", "mean_ps", "sigma_ps", "mean_us", "sigma_us"))
        for name, (m, s) in (("full", self.full), ("reduced", self.reduced),
                             ("optimized (coverage-calibrated)", self.optimized)):
            writer.writerow((name, f"{m:.3f}", f"{s:.3f}", f"{m / PS_PER_US:.4f}",
                             f"{s / PS_PER_US:.4f}"))
        return buf.getvalue()


def density_overlays(trace: OffsetTrace,
                     outlier_bound: int = DEFAULT_OUTLIER_BOUND_PS) -> DensityOverlays:
    """Gaussian parameters for the full trace, the reduced trace and a calibrated fit.

    The calibrated fit keeps the reduced mean and widens the reduced sigma to
    the smallest value whose +/- 1 sigma band holds as large a share of the
    full trace as the reduced band holds of the reduced trace (capped at
    68.27 %).
    """
    full = accuracy_precision(trace)
    reduced_trace, n_out = filter_outliers(trace, outlier_bound)
    reduced = accuracy_precision(reduced_trace)
    mu, sigma = reduced
    red = reduced_trace.values().astype(np.float64)
    target = min(ONE_SIGMA_COVERAGE,
                 np.count_nonzero(np.abs(red - mu) <= sigma) / red.size)
    dist = np.sort(np.abs(trace.values().astype(np.float64) - mu))
    needed = math.ceil(target * dist.size - 1e-9)
    sigma_opt = max(sigma, float(dist[needed - 1])) if needed > 0 else sigma
    return DensityOverlays(full, reduced, (mu, sigma_opt))


def render_report(report: PrecisionReport, overlays: Optional[DensityOverlays] = None,
                  label: str = "") -> str:
    text = report.to_text(label)
    if overlays is not None:
        for name, (m, s) in (("full", overlays.full), ("reduced", overlays.reduced),
                             ("optimized", overlays.optimized)):
            text += f"density.{name}.mean_ps = {m:.3f}\ndensity.{name}.sigma_ps = {s:.3f}\n"
        text += "density.optimized.method = coverage-calibrated\n"
    return text
