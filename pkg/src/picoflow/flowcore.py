"""Flow state machine and timing accounting.

A flow runs Transfer -> Analysis -> Publication serially for one data file.
Each step's "active" window spans from submitting the remote operation to
observing its completion; everything else inside the flow's lifetime counts
as orchestration overhead.  Many flows may run concurrently, but each
:class:`FlowRun` is owned by exactly one thread.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path


class StateError(Exception):
    """Illegal state transition or query on a non-terminal run."""


class FlowStepError(Exception):
    """A step failed for a reason the service reported (not a crash)."""


class StepName(str, Enum):
    TRANSFER = "transfer"
    ANALYSIS = "analysis"
    PUBLICATION = "publication"


STEP_ORDER = (StepName.TRANSFER, StepName.ANALYSIS, StepName.PUBLICATION)


class FlowState(str, Enum):
    PENDING = "pending"
    TRANSFERRING = "transferring"
    ANALYZING = "analyzing"
    PUBLISHING = "publishing"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


_LEGAL_TRANSITIONS = {
    FlowState.PENDING: {FlowState.TRANSFERRING},
    FlowState.TRANSFERRING: {FlowState.ANALYZING, FlowState.FAILED},
    FlowState.ANALYZING: {FlowState.PUBLISHING, FlowState.FAILED},
    FlowState.PUBLISHING: {FlowState.SUCCEEDED, FlowState.FAILED},
    FlowState.SUCCEEDED: set(),
    FlowState.FAILED: set(),
}


class FlowKind(str, Enum):
    HYPERSPECTRAL = "hyperspectral"
    SPATIOTEMPORAL = "spatiotemporal"


@dataclass(frozen=True)
class BackoffPolicy:
    """Exponential polling backoff: starts at ``initial``, multiplies by
    ``factor`` per attempt, saturates at ``cap`` (defaults: 1 s doubling up
    to 10 minutes)."""

    initial: float = 1.0
    factor: float = 2.0
    cap: float = 600.0

    def __post_init__(self):
        if self.initial <= 0:
            raise ValueError("initial must be > 0")
        if self.factor <= 1:
            raise ValueError("factor must be > 1")
        if self.cap < self.initial:
            raise ValueError("cap must be >= initial")


def poll_interval(policy: BackoffPolicy, attempt: int) -> float:
    """Wait before poll number ``attempt`` (0-based): min(initial * factor^attempt, cap)."""
    if attempt < 0:
        raise ValueError("attempt must be >= 0")
    return min(policy.initial * policy.factor ** attempt, policy.cap)


@dataclass(frozen=True)
class FlowDefinition:
    flow_id: str
    source_path: Path
    dest_root: str
    flow_kind: FlowKind

    @classmethod
    def for_file(cls, source: str | Path, *, kind: FlowKind,
                 dest_root: str = "") -> "FlowDefinition":
        return cls(flow_id=str(uuid.uuid4()), source_path=Path(source),
                   dest_root=dest_root, flow_kind=kind)


@dataclass
class StepTiming:
    step: StepName
    active_start: float
    active_end: float

    @property
    def active_seconds(self) -> float:
        return self.active_end - self.active_start

    def to_dict(self) -> dict:
        return {"step": self.step.value, "active_start": self.active_start,
                "active_end": self.active_end}


@dataclass
class FlowRun:
    definition: FlowDefinition
    state: FlowState = FlowState.PENDING
    t_start: float | None = None
    t_end: float | None = None
    started_at_utc: str | None = None
    timings: list[StepTiming] = field(default_factory=list)
    failure: tuple[StepName, str] | None = None
    bytes_transferred: int | None = None
    record_id: str | None = None

    def transition(self, to_state: FlowState) -> None:
        if to_state not in _LEGAL_TRANSITIONS[self.state]:
            raise StateError(f"illegal transition {self.state.value} -> {to_state.value}")
        self.state = to_state

    @property
    def terminal(self) -> bool:
        return self.state in (FlowState.SUCCEEDED, FlowState.FAILED)

    @property
    def total_seconds(self) -> float:
        if self.t_start is None or self.t_end is None:
            raise StateError("run has no recorded duration yet")
        return self.t_end - self.t_start

    def to_dict(self) -> dict:
        return {
            "flow_id": self.definition.flow_id,
            "flow_kind": self.definition.flow_kind.value,
            "source_path": str(self.definition.source_path),
            "dest_root": self.definition.dest_root,
            "state": self.state.value,
            "failure": None if self.failure is None else
                {"step": self.failure[0].value, "reason": self.failure[1]},
            "started_at_utc": self.started_at_utc,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "bytes_transferred": self.bytes_transferred,
            "record_id": self.record_id,
            "timings": [t.to_dict() for t in self.timings],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FlowRun":
        definition = FlowDefinition(
            flow_id=d["flow_id"],
            source_path=Path(d["source_path"]),
            dest_root=d.get("dest_root", ""),
            flow_kind=FlowKind(d["flow_kind"]),
        )
        run = cls(definition=definition)
        run.state = FlowState(d["state"])
        if d.get("failure"):
            run.failure = (StepName(d["failure"]["step"]), d["failure"]["reason"])
        run.started_at_utc = d.get("started_at_utc")
        run.t_start = d["t_start"]
        run.t_end = d["t_end"]
        run.bytes_transferred = d.get("bytes_transferred")
        run.record_id = d.get("record_id")
        run.timings = [
            StepTiming(StepName(t["step"]), t["active_start"], t["active_end"])
            for t in d["timings"]
        ]
        return run


def overhead(run: FlowRun) -> float:
    """Total runtime minus summed active step time; >= 0 for serial flows."""
    if run.state is not FlowState.SUCCEEDED:
        raise StateError(f"overhead is defined for succeeded runs, not {run.state.value}")
    active = sum(t.active_seconds for t in run.timings)
    return run.total_seconds - active


@dataclass
class FlowServices:
    """Duck-typed handles the flow engine drives.

    ``transfer.put_file(source, dest_relpath)`` returns an object with
    ``status`` (value "complete"/"rejected"/"corrupt"), ``bytes_transferred``
    and ``sha256``.  ``compute.submit(function, args)`` returns a task id and
    ``compute.poll(task_id)`` a TaskStatus dict.  ``catalog.publish(record)``
    raises on rejection.
    """

    transfer: object
    compute: object
    catalog: object


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def run_flow(definition: FlowDefinition, services: FlowServices, *,
             policy: BackoffPolicy = BackoffPolicy(),
             visible_to: tuple[str, ...] = ("public",),
             clock=time.monotonic, sleep=time.sleep) -> FlowRun:
    """Execute the three steps serially; failures yield a Failed run, not a crash."""
    run = FlowRun(definition=definition)
    run.started_at_utc = _utc_now_iso()
    run.t_start = clock()

    dest_relpath = "/".join(
        p for p in (definition.dest_root, definition.flow_id,
                    definition.source_path.name) if p
    )

    def timed(step: StepName, state: FlowState, fn):
        run.transition(state)
        t0 = clock()
        try:
            out = fn()
        except Exception as exc:
            run.timings.append(StepTiming(step, t0, clock()))
            run.transition(FlowState.FAILED)
            run.failure = (step, f"{type(exc).__name__}: {exc}")
            raise
        run.timings.append(StepTiming(step, t0, clock()))
        return out

    def do_transfer():
        result = services.transfer.put_file(definition.source_path, dest_relpath)
        status = getattr(result.status, "value", result.status)
        if status != "complete":
            raise FlowStepError(f"transfer {status}")
        run.bytes_transferred = result.bytes_transferred
        return result

    def do_analysis():
        task_id = services.compute.submit(
            "analyze_emdl",
            {"input_path": dest_relpath, "out_dir": f"analyses/{definition.flow_id}"},
        )
        attempt = 0
        while True:
            sleep(poll_interval(policy, attempt))
            attempt += 1
            status = services.compute.poll(task_id)
            phase = status["phase"]
            if phase == "succeeded":
                return status["result"]
            if phase == "failed":
                raise FlowStepError(f"task failed: {status.get('error')}")

    def do_publish(result: dict):
        meta = result["metadata"]
        out_dir = result["out_dir"]
        record = {
            "record_id": str(uuid.uuid4()),
            "flow_id": definition.flow_id,
            "acquisition_datetime": meta["acquisition_datetime"],
            "metadata": meta,
            "artifacts": [
                {"kind": e["kind"], "name": e["path"],
                 "path": str(Path(out_dir) / e["path"])}
                for e in result["manifest"]
            ],
            "visible_to": list(visible_to),
            "published_at": _utc_now_iso(),
        }
        services.catalog.publish(record)
        return record["record_id"]

    try:
        timed(StepName.TRANSFER, FlowState.TRANSFERRING, do_transfer)
        result = timed(StepName.ANALYSIS, FlowState.ANALYZING, do_analysis)
        run.record_id = timed(
            StepName.PUBLICATION, FlowState.PUBLISHING, lambda: do_publish(result))
        run.transition(FlowState.SUCCEEDED)
    except Exception:
        if run.state is not FlowState.FAILED:  # transition errors should not mask
            raise
    run.t_end = clock()
    return run


class RunLog:
    """Append-only JSON-lines sink for terminal flow runs; thread-safe."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, run: FlowRun) -> None:
        line = json.dumps(run.to_dict(), separators=(",", ":")) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())

    @staticmethod
    def load(path: str | Path) -> list[FlowRun]:
        runs = []
        text = Path(path).read_text(encoding="utf-8")
        for line in text.splitlines():
            if line.strip():
                runs.append(FlowRun.from_dict(json.loads(line)))
        return runs


class FlowEngine:
    """Starts one thread per triggered file and records terminal runs.

    Triggers may arrive while earlier flows are still running; runs share no
    mutable state beyond the log sink.
    """

    def __init__(self, services: FlowServices, run_log: RunLog, *,
                 flow_kind: FlowKind = FlowKind.HYPERSPECTRAL,
                 dest_root: str = "",
                 visible_to: tuple[str, ...] = ("public",),
                 policy: BackoffPolicy = BackoffPolicy()):
        self.services = services
        self.run_log = run_log
        self.flow_kind = flow_kind
        self.dest_root = dest_root
        self.visible_to = visible_to
        self.policy = policy
        self._threads: list[threading.Thread] = []
        self._lock = threading.Lock()

    def run_one(self, source: str | Path) -> FlowRun:
        definition = FlowDefinition.for_file(source, kind=self.flow_kind,
                                             dest_root=self.dest_root)
        run = run_flow(definition, self.services, policy=self.policy,
                       visible_to=self.visible_to)
        self.run_log.append(run)
        return run

    def trigger(self, source: str | Path) -> None:
        thread = threading.Thread(target=self.run_one, args=(source,), daemon=True)
        with self._lock:
            self._threads = [t for t in self._threads if t.is_alive()]
            self._threads.append(thread)
        thread.start()

    def active_count(self) -> int:
        with self._lock:
            self._threads = [t for t in self._threads if t.is_alive()]
            return len(self._threads)

    def wait_idle(self, timeout: float) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.active_count() == 0:
                return True
            time.sleep(0.05)
        return self.active_count() == 0
