"""Performance harness: synthetic data generation and run-log aggregation.

The generator simulates an instrument by dropping one file into the watch
directory every ``period`` seconds for ``duration`` seconds.  Each drop gets
a unique name and a shifted embedded acquisition timestamp so content
digests differ (unless deliberately disabled to exercise dedupe).

The aggregator folds a flow run log into a report: aggregate runtime stats,
median overhead in seconds and percent, and per-step active min/median/max.
It is a pure function of the log bytes.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path

from . import emdlite, flowcore
from .flowcore import FlowState

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneratorConfig:
    template_file: Path
    period: float
    duration: float
    dest_dir: Path
    unique_names: bool = True

    def __post_init__(self):
        object.__setattr__(self, "template_file", Path(self.template_file))
        object.__setattr__(self, "dest_dir", Path(self.dest_dir))
        if self.period <= 0:
            raise ValueError("period must be > 0")
        if self.duration < self.period:
            raise ValueError("duration must be >= period")


def _shifted_copy(template: emdlite.EmdLiteFile, seconds: float) -> bytes:
    base = emdlite.parse_iso8601(template.metadata.acquisition_datetime)
    shifted = base + timedelta(seconds=seconds)
    stamp = shifted.isoformat()
    copy = emdlite.EmdLiteFile(
        metadata=emdlite.ExperimentMetadata.from_dict(
            {**template.metadata.to_dict(), "acquisition_datetime": stamp}),
        datasets=template.datasets,
    )
    return emdlite.encode(copy)


def generate(config: GeneratorConfig, stop: threading.Event | None = None) -> int:
    """Drop floor(duration/period) copies of the template; returns the count.

    An unwritable destination aborts with the count so far.
    """
    template = emdlite.read_file(config.template_file)
    raw = config.template_file.read_bytes()
    stem = config.template_file.stem
    # epsilon keeps floor(duration/period) exact when the ratio is a whole
    # number that binary floats represent one ulp low (e.g. 1.0/0.2)
    total = int(config.duration / config.period + 1e-9)
    start = time.monotonic()
    dropped = 0
    for k in range(total):
        if stop is not None and stop.is_set():
            break
        wait = start + k * config.period - time.monotonic()
        if wait > 0:
            if stop is not None:
                if stop.wait(wait):
                    break
            else:
                time.sleep(wait)
        if config.unique_names:
            name = f"{stem}_{time.strftime('%Y%m%dT%H%M%S')}_{k:04d}{emdlite.FILE_SUFFIX}"
            payload = _shifted_copy(template, k * config.period)
        else:
            name = config.template_file.name
            payload = raw
        try:
            tmp = config.dest_dir / f".{name}.tmp"
            tmp.write_bytes(payload)
            tmp.replace(config.dest_dir / name)
        except OSError as exc:
            log.error("generator: cannot write %s (%s), aborting", name, exc)
            return dropped
        dropped += 1
    return dropped


def median_low(values: list[float]) -> float:
    """Median taking the lower of the two middles for even counts."""
    if not values:
        raise ValueError("median of empty list")
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


@dataclass
class MetricsReport:
    total_flow_runs: int
    start_period_s: float | None
    transfer_volume_mb: float | None
    total_data_gb: float | None  # total_flow_runs x volume; labeled, not measured
    min_flow_runtime_s: float | None
    mean_flow_runtime_s: float | None
    max_flow_runtime_s: float | None
    median_overhead_s: float | None
    median_overhead_pct: float | None  # median of per-flow overhead ratios
    overhead_pct_ratio_of_medians: float | None  # secondary reading
    per_step: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "total_flow_runs": self.total_flow_runs,
            "start_period_s": self.start_period_s,
            "transfer_volume_mb": self.transfer_volume_mb,
            "total_data_gb": self.total_data_gb,
            "min_flow_runtime_s": self.min_flow_runtime_s,
            "mean_flow_runtime_s": self.mean_flow_runtime_s,
            "max_flow_runtime_s": self.max_flow_runtime_s,
            "median_overhead_s": self.median_overhead_s,
            "median_overhead_pct": self.median_overhead_pct,
            "overhead_pct_ratio_of_medians": self.overhead_pct_ratio_of_medians,
            "per_step": self.per_step,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table_text(self) -> str:
        def fmt(v, nd=2):
            return "n/a" if v is None else f"{v:.{nd}f}"

        rows = [
            ("Start period (s)", fmt(self.start_period_s)),
            ("Transfer volume (MB)", fmt(self.transfer_volume_mb)),
            ("Total data transfer (GB, runs x volume)", fmt(self.total_data_gb, 3)),
            ("Min flow runtime (s)", fmt(self.min_flow_runtime_s)),
            ("Mean flow runtime (s)", fmt(self.mean_flow_runtime_s)),
            ("Max flow runtime (s)", fmt(self.max_flow_runtime_s)),
            ("Median overhead (s)", fmt(self.median_overhead_s)),
            ("Median overhead (%)", fmt(self.median_overhead_pct, 1)),
            ("Total flow runs", str(self.total_flow_runs)),
        ]
        width = max(len(label) for label, _ in rows)
        lines = [f"{label:<{width}}  {value}" for label, value in rows]
        lines.append("")
        lines.append(f"{'Step':<{width}}  {'min':>8} {'median':>8} {'max':>8}")
        for step in (s.value for s in flowcore.STEP_ORDER):
            stats = self.per_step.get(step)
            if stats is None:
                lines.append(f"{step + ' active (s)':<{width}}  {'n/a':>8} {'n/a':>8} {'n/a':>8}")
            else:
                lines.append(
                    f"{step + ' active (s)':<{width}}  "
                    f"{stats['min']:>8.2f} {stats['median']:>8.2f} {stats['max']:>8.2f}"
                )
        return "\n".join(lines) + "\n"


def aggregate(run_log: str | Path) -> MetricsReport:
    """Fold a JSON-lines run log into the report; only succeeded flows count."""
    runs = flowcore.RunLog.load(run_log)
    succeeded = [r for r in runs if r.state is FlowState.SUCCEEDED]
    if not succeeded:
        return MetricsReport(
            total_flow_runs=0, start_period_s=None, transfer_volume_mb=None,
            total_data_gb=None, min_flow_runtime_s=None, mean_flow_runtime_s=None,
            max_flow_runtime_s=None, median_overhead_s=None, median_overhead_pct=None,
            overhead_pct_ratio_of_medians=None, per_step={},
        )

    succeeded.sort(key=lambda r: r.t_start)
    runtimes = [r.total_seconds for r in succeeded]
    overheads = [flowcore.overhead(r) for r in succeeded]
    ratios = [o / t for o, t in zip(overheads, runtimes)]

    starts = [r.t_start for r in succeeded]
    gaps = [b - a for a, b in zip(starts, starts[1:])]
    start_period = median_low(gaps) if gaps else None

    volumes = [r.bytes_transferred for r in succeeded if r.bytes_transferred is not None]
    volume_bytes = median_low(volumes) if volumes else None

    per_step: dict[str, dict[str, float]] = {}
    for step in flowcore.STEP_ORDER:
        actives = [t.active_seconds for r in succeeded for t in r.timings
                   if t.step is step]
        if actives:
            per_step[step.value] = {
                "min": min(actives),
                "median": median_low(actives),
                "max": max(actives),
            }

    median_runtime = median_low(runtimes)
    median_overhead = median_low(overheads)
    return MetricsReport(
        total_flow_runs=len(succeeded),
        start_period_s=start_period,
        transfer_volume_mb=None if volume_bytes is None else volume_bytes / 1e6,
        total_data_gb=None if volume_bytes is None
            else len(succeeded) * volume_bytes / 1e9,
        min_flow_runtime_s=min(runtimes),
        mean_flow_runtime_s=sum(runtimes) / len(runtimes),
        max_flow_runtime_s=max(runtimes),
        median_overhead_s=median_overhead,
        median_overhead_pct=100.0 * median_low(ratios),
        overhead_pct_ratio_of_medians=(
            100.0 * median_overhead / median_runtime if median_runtime > 0 else None),
        per_step=per_step,
    )
