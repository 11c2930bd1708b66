"""Per-server time series, processing-time summaries, evenness and queueing oracles."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import RandomStream


class Undefined(ArithmeticError):
    pass


class Unstable(ArithmeticError):
    pass


def bucket_of(time: float, width: float) -> int:
    return int(math.floor(time / width))


class SeriesSet:
    """Growable per-bucket, per-server counters (rows are buckets).

    ``arrivals`` and ``completions`` count queries; ``proc_sum`` sums the
    processing times of queries completing in the bucket; ``busy`` holds busy
    seconds; ``qlen`` is the in-system count sampled by the metric tick.
    """

    STATS = ("arrivals", "completions", "proc_sum", "busy", "qlen")

    def __init__(self, servers: int, width: float = 1.0):
        self.servers = servers
        self.width = width
        self.arrivals: list[list[int]] = []
        self.completions: list[list[int]] = []
        self.proc_sum: list[list[float]] = []
        self.busy: list[list[float]] = []
        self.qlen: list[list[int]] = []

    def __len__(self) -> int:
        return len(self.arrivals)

    def ensure(self, b: int) -> None:
        n = self.servers
        while len(self.arrivals) <= b:
            self.arrivals.append([0] * n)
            self.completions.append([0] * n)
            self.proc_sum.append([0.0] * n)
            self.busy.append([0.0] * n)
            self.qlen.append([0] * n)

    def add_busy(self, server: int, start: float, end: float) -> None:
        w = self.width
        k = bucket_of(start, w)
        last = bucket_of(end, w)
        self.ensure(last)
        while k <= last:
            lo = start if start > k * w else k * w
            hi = end if end < (k + 1) * w else (k + 1) * w
            if hi > lo:
                self.busy[k][server] += hi - lo
            k += 1

    def to_arrays(self, n_buckets: int) -> dict[str, np.ndarray]:
        self.ensure(n_buckets - 1)
        out = {}
        for name in self.STATS:
            rows = getattr(self, name)[:n_buckets]
            dtype = np.int64 if name in ("arrivals", "completions", "qlen") else np.float64
            out[name] = np.array(rows, dtype=dtype).reshape(n_buckets, self.servers)
        return out


def record_arrival(series: SeriesSet, server: int, time: float) -> None:
    if time < 0:
        raise ValueError("time must be >= 0")
    b = bucket_of(time, series.width)
    series.ensure(b)
    series.arrivals[b][server] += 1


def record_processing(series: SeriesSet, server: int, duration: float, time: float) -> None:
    """Add one completed query's processing time to the bucket holding ``time``."""
    if not duration > 0:
        raise ValueError("duration must be > 0")
    b = bucket_of(time, series.width)
    series.ensure(b)
    series.completions[b][server] += 1
    series.proc_sum[b][server] += duration


class Reservoir:
    """Fixed-size uniform sample (Vitter's algorithm R)."""

    def __init__(self, size: int):
        self.size = size
        self.values: list[float] = []
        self.seen = 0

    def add(self, x: float, stream: RandomStream) -> None:
        if self.seen < self.size:
            self.values.append(x)
        else:
            j = int(stream.uniform() * (self.seen + 1))
            if j < self.size:
                self.values[j] = x
        self.seen += 1

    def percentile(self, q: float) -> float:
        if not self.values:
            return math.nan
        return float(np.percentile(self.values, q))


# ---------------------------------------------------------------------------
# summaries


def coefficient_of_variation(values: Sequence[float]) -> float:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise Undefined("no values")
    mean = float(arr.mean())
    if not mean > 0:
        raise Undefined("mean is zero")
    return float(arr.std()) / mean


@dataclass
class ServerStats:
    server: str
    arrivals: int
    rate: float
    completed: int
    mean_processing: float
    p95_processing: float
    mean_wait: float
    utilization: float
    mean_queue: float


@dataclass
class SummaryStats:
    window: tuple[float, float]
    servers: list[ServerStats] = field(default_factory=list)
    mean_rate: float = math.nan
    std_rate: float = math.nan
    cv: float = math.nan
    mean_processing: float = math.nan
    p95_processing: float = math.nan
    mean_wait: float = math.nan
    utilization_spread: float = math.nan

    def as_dict(self) -> dict:
        return asdict(self)


def evenness(summary: SummaryStats) -> float:
    """CV of per-server query totals over the measurement window."""
    if len(summary.servers) < 2:
        raise Undefined("evenness needs at least two servers")
    return coefficient_of_variation([s.arrivals for s in summary.servers])


def window_buckets(warmup_end: float, t_end: float, width: float) -> tuple[int, int]:
    """Whole buckets inside [warmup_end, t_end]."""
    lo = int(math.ceil(warmup_end / width))
    hi = int(math.floor(t_end / width))
    return lo, max(lo, hi)


def warmup_trim(series: np.ndarray, warmup_end: float, width: float = 1.0) -> np.ndarray:
    """Drop buckets that start before ``warmup_end``."""
    if warmup_end < 0:
        raise ValueError("warmup_end must be >= 0")
    return series[int(math.ceil(warmup_end / width)):]


def summarize(result, server_ids: Sequence[str] | None = None) -> SummaryStats:
    """Build summary statistics for a kernel result over its post-warmup window."""
    width = result.bucket_width
    lo, hi = window_buckets(result.warmup, result.t_end, width)
    span = (hi - lo) * width
    S = result.arrivals.shape[1]
    ids = list(server_ids) if server_ids is not None else [f"server_{i + 1}" for i in range(S)]
    summary = SummaryStats(window=(lo * width, hi * width))
    if span <= 0:
        return summary
    arr = result.arrivals[lo:hi].sum(axis=0)
    busy = result.busy[lo:hi].sum(axis=0)
    qlen = result.qlen[lo:hi].mean(axis=0)
    for i in range(S):
        n = int(result.n_post[i])
        res = result.reservoirs[i][: min(int(result.res_seen[i]), result.reservoirs.shape[1])]
        summary.servers.append(
            ServerStats(
                server=ids[i],
                arrivals=int(arr[i]),
                rate=float(arr[i]) / span,
                completed=n,
                mean_processing=float(result.sum_proc[i]) / n if n else math.nan,
                p95_processing=float(np.percentile(res, 95)) if res.size else math.nan,
                mean_wait=float(result.sum_wait[i]) / n if n else math.nan,
                utilization=min(1.0, float(busy[i]) / span),
                mean_queue=float(qlen[i]),
            )
        )
    rates = [s.rate for s in summary.servers]
    summary.mean_rate = float(np.mean(rates))
    summary.std_rate = float(np.std(rates))
    try:
        summary.cv = coefficient_of_variation([s.arrivals for s in summary.servers])
    except Undefined:
        pass
    total = int(result.n_post.sum())
    if total:
        summary.mean_processing = float(result.sum_proc.sum()) / total
        summary.mean_wait = float(result.sum_wait.sum()) / total
        g = result.global_reservoir[: min(int(result.global_seen), result.global_reservoir.size)]
        summary.p95_processing = float(np.percentile(g, 95))
    utils = [s.utilization for s in summary.servers]
    summary.utilization_spread = float(max(utils) - min(utils))
    return summary


def merge_summaries(summaries: Sequence[SummaryStats]) -> dict[str, float]:
    """Order-independent aggregate of independent runs (sweep roll-up)."""
    rows = sorted((s.cv, s.mean_wait, s.utilization_spread) for s in summaries)
    if not rows:
        return {}
    cv, wait, spread = zip(*rows)
    return {
        "runs": len(rows),
        "max_cv": max(cv),
        "mean_wait": math.fsum(wait) / len(wait),
        "max_utilization_spread": max(spread),
    }


def mdl_wait_oracle(arrival_rate: float, service: float) -> float:
    """Mean queueing delay of an M/D/1 station (Pollaczek-Khinchine)."""
    rho = arrival_rate * service
    if rho >= 1.0:
        raise Unstable(f"rho = {rho:.4g} >= 1")
    return rho * service / (2.0 * (1.0 - rho))


def queue_growth(qlen: np.ndarray) -> float:
    """Least-squares slope (queries per bucket) of an in-system series."""
    if qlen.size < 2:
        return 0.0
    x = np.arange(qlen.size, dtype=np.float64)
    return float(np.polyfit(x, qlen.astype(np.float64), 1)[0])


# ---------------------------------------------------------------------------
# export

CSV_STATS = {
    "queries_per_second": "arrivals",
    "processed_per_second": "completions",
    "processing_time": "proc_mean",
    "utilization": "util",
    "queue_length": "qlen",
}


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def series_table(result, stat: str) -> np.ndarray:
    w = result.bucket_width
    if stat == "proc_mean":
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(result.completions > 0, result.proc_sum / np.maximum(result.completions, 1), np.nan)
    if stat == "util":
        return result.busy / w
    if stat in ("arrivals", "completions"):
        return result.arrivals if stat == "arrivals" else result.completions
    return result.qlen


def _atomic_write(path: Path, data: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(data, newline="")
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def export_csv(result, out_dir: Path | str) -> list[Path]:
    """One CSV per statistic: ``time_s,server_1,...,server_N``, one row per bucket."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out_dir}: {exc}") from exc
    S = result.arrivals.shape[1]
    header = ["time_s"] + [f"server_{i + 1}" for i in range(S)]
    written = []
    for name, stat in CSV_STATS.items():
        table = series_table(result, stat)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for b in range(table.shape[0]):
            writer.writerow([_fmt(b * result.bucket_width)] + [_fmt(v) for v in table[b]])
        path = out_dir / f"{name}.csv"
        _atomic_write(path, buf.getvalue())
        written.append(path)
    return written


def export_svg(result, out_dir: Path | str) -> list[Path]:
    """Stacked per-server line charts of arrivals and mean processing time."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    S = result.arrivals.shape[1]
    t = np.arange(result.arrivals.shape[0]) * result.bucket_width
    written = []
    charts = (
        ("queries_per_second", "arrivals", "queries/s"),
        ("processing_time", "proc_mean", "processing time (s)"),
    )
    with matplotlib.rc_context({"svg.hashsalt": "olapsim", "svg.fonttype": "none"}):
        for name, stat, ylabel in charts:
            table = series_table(result, stat)
            fig, axes = plt.subplots(max(S, 1), 1, sharex=True, figsize=(8, 1.2 * max(S, 1) + 1), squeeze=False)
            for i in range(S):
                ax = axes[i][0]
                ax.plot(t, table[:, i], linewidth=0.8)
                ax.set_ylabel(f"server {i + 1}", fontsize=7)
                ax.tick_params(labelsize=6)
            axes[-1][0].set_xlabel("simulation time (s)")
            fig.suptitle(ylabel)
            path = out_dir / f"{name}.svg"
            try:
                fig.savefig(path, format="svg", metadata={"Date": None})
            except OSError as exc:
                raise OSError(f"cannot write {path}: {exc}") from exc
            finally:
                plt.close(fig)
            written.append(path)
    return written


def export(result, fmt: str, out_dir: Path | str) -> list[Path]:
    if fmt == "csv":
        return export_csv(result, out_dir)
    if fmt == "svg":
        return export_svg(result, out_dir)
    raise ValueError(f"unknown export format {fmt!r}")
