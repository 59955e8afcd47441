"""Remote compute endpoint: named task invocations over HTTP with a
simulated batch-provisioned node.

The endpoint owns one node.  A submit on a cold node starts provisioning
(tasks sit in ``waiting_for_node`` until it finishes); a warm node runs
queued tasks FIFO with no wait and cools down after an idle timeout.  That
reproduces the observable batch-queue behavior: the first task pays the
provisioning penalty, later ones reuse the node.

Only pre-registered functions run here; ``analyze_emdl`` decodes an input
container once and returns extracted metadata together with the rendered
artifact manifest.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from urllib.parse import unquote, urlsplit

import requests

from . import analysis, emdlite
from .httpd import HttpService, ServiceHandler
from .transferd import safe_relpath

log = logging.getLogger(__name__)


class Phase(str, Enum):
    QUEUED = "queued"
    WAITING_FOR_NODE = "waiting_for_node"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


_PHASE_RANK = {Phase.QUEUED: 0, Phase.WAITING_FOR_NODE: 1, Phase.RUNNING: 2,
               Phase.SUCCEEDED: 3, Phase.FAILED: 3}


class NodeState(str, Enum):
    COLD = "cold"
    PROVISIONING = "provisioning"
    WARM = "warm"


@dataclass
class TaskRecord:
    task_id: str
    function: str
    args: dict
    phase: Phase = Phase.QUEUED
    result: dict | None = None
    error: str | None = None
    submitted_at: float = field(default_factory=time.monotonic)


def analyze_emdl(input_path: str | Path, out_dir: str | Path) -> dict:
    """Combined analysis task: decode once, extract metadata, render artifacts."""
    file = emdlite.read_file(input_path)
    metadata = emdlite.extract_metadata(file)
    manifest = analysis.render_artifacts(file, out_dir)
    return {
        "metadata": metadata,
        "manifest": [e.to_dict() for e in manifest],
        "out_dir": str(Path(out_dir)),
    }


class ComputeService:
    """Task store, FIFO queue, and the simulated node; one worker thread."""

    def __init__(self, data_root: str | Path, tokens: set[str], *,
                 provision_delay: float = 60.0, idle_timeout: float = 300.0):
        self.data_root = Path(data_root)
        if not self.data_root.is_dir():
            raise ValueError(f"data root does not exist: {self.data_root}")
        self.tokens = set(tokens)
        self.provision_delay = provision_delay
        self.idle_timeout = idle_timeout
        self.registry = {"analyze_emdl": self._run_analyze_emdl}
        self._tasks: dict[str, TaskRecord] = {}
        self._lock = threading.Lock()
        self._queue: queue.Queue[str] = queue.Queue()
        self._stop = threading.Event()
        self.node_state = NodeState.COLD
        self._node_ready_at: float | None = None
        self._idle_since: float | None = None
        self._worker = threading.Thread(target=self._work_loop, daemon=True)
        self._worker.start()

    def close(self) -> None:
        self._stop.set()
        self._worker.join(timeout=5)

    # -- registered functions ------------------------------------------------

    def _run_analyze_emdl(self, args: dict) -> dict:
        input_rel = safe_relpath(args["input_path"])
        out_rel = safe_relpath(args["out_dir"])
        if input_rel is None or out_rel is None:
            raise ValueError("paths must stay under the data root")
        try:
            return analyze_emdl(self.data_root / input_rel, self.data_root / out_rel)
        except emdlite.EmdLiteError as exc:
            raise RuntimeError("corrupt input") from exc

    @staticmethod
    def validate_args(function: str, args) -> str | None:
        if function == "analyze_emdl":
            if not isinstance(args, dict):
                return "args must be an object"
            for key in ("input_path", "out_dir"):
                if not isinstance(args.get(key), str) or not args[key]:
                    return f"args.{key} must be a nonempty string"
            return None
        return None

    # -- node simulation -----------------------------------------------------

    def _ensure_warm(self) -> None:
        now = time.monotonic()
        if self.node_state is NodeState.COLD:
            self.node_state = NodeState.PROVISIONING
            self._node_ready_at = now + self.provision_delay
        if self.node_state is NodeState.PROVISIONING:
            remaining = self._node_ready_at - time.monotonic()
            while remaining > 0 and not self._stop.is_set():
                time.sleep(min(remaining, 0.05))
                remaining = self._node_ready_at - time.monotonic()
            self.node_state = NodeState.WARM
        self._idle_since = None

    def _work_loop(self) -> None:
        while not self._stop.is_set():
            try:
                task_id = self._queue.get(timeout=0.1)
            except queue.Empty:
                if (self.node_state is NodeState.WARM and self._idle_since is not None
                        and time.monotonic() - self._idle_since >= self.idle_timeout):
                    self.node_state = NodeState.COLD
                    self._idle_since = None
                continue
            task = self._tasks[task_id]
            if self.node_state is not NodeState.WARM:
                self._set_phase(task, Phase.WAITING_FOR_NODE)
            self._ensure_warm()
            if self._stop.is_set():
                return
            self._set_phase(task, Phase.RUNNING)
            try:
                result = self.registry[task.function](task.args)
            except Exception as exc:
                with self._lock:
                    task.error = str(exc)
                self._set_phase(task, Phase.FAILED)
            else:
                with self._lock:
                    task.result = result
                self._set_phase(task, Phase.SUCCEEDED)
            self._idle_since = time.monotonic()

    def _set_phase(self, task: TaskRecord, phase: Phase) -> None:
        with self._lock:
            if _PHASE_RANK[phase] < _PHASE_RANK[task.phase]:
                raise RuntimeError(f"phase regression {task.phase} -> {phase}")
            task.phase = phase

    # -- API operations --------------------------------------------------

    def submit(self, payload: dict) -> tuple[int, dict]:
        function = payload.get("function")
        if function not in self.registry:
            return 404, {"error": f"unknown function {function!r}"}
        problem = self.validate_args(function, payload.get("args"))
        if problem:
            return 400, {"error": problem}
        task_id = payload.get("task_id") or str(uuid.uuid4())
        with self._lock:
            if task_id in self._tasks:
                return 200, {"task_id": task_id}  # duplicate submit: one execution
            self._tasks[task_id] = TaskRecord(task_id=task_id, function=function,
                                              args=dict(payload["args"]))
        self._queue.put(task_id)
        return 200, {"task_id": task_id}

    def status(self, task_id: str) -> tuple[int, dict]:
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                return 404, {"error": f"unknown task {task_id!r}"}
            body = {"task_id": task.task_id, "phase": task.phase.value}
            if task.result is not None:
                body["result"] = task.result
            if task.error is not None:
                body["error"] = task.error
            return 200, body


class _ComputeHandler(ServiceHandler):
    service: ComputeService

    def _authorized(self) -> bool:
        return self.bearer_token() in self.service.tokens

    def do_POST(self):
        if not self._authorized():
            self.drain_body()
            self.send_json(401, {"error": "bad or missing token"})
            return
        if urlsplit(self.path).path != "/tasks":
            self.drain_body()
            self.send_json(404, {"error": "not found"})
            return
        payload = self.read_json_body()
        if not isinstance(payload, dict):
            self.send_json(400, {"error": "body must be a JSON object"})
            return
        code, body = self.service.submit(payload)
        self.send_json(code, body)

    def do_GET(self):
        path = urlsplit(self.path).path
        if path == "/healthz":
            self.send_json(200, {"status": "ok"})
            return
        if not self._authorized():
            self.send_json(401, {"error": "bad or missing token"})
            return
        if path.startswith("/tasks/"):
            task_id = unquote(path[len("/tasks/"):])
            code, body = self.service.status(task_id)
            self.send_json(code, body)
            return
        self.send_json(404, {"error": "not found"})


class ComputeServer(HttpService):
    def __init__(self, data_root: str | Path, tokens: set[str], *,
                 provision_delay: float = 60.0, idle_timeout: float = 300.0,
                 host: str = "127.0.0.1", port: int = 0):
        self.service = ComputeService(data_root, tokens,
                                      provision_delay=provision_delay,
                                      idle_timeout=idle_timeout)
        handler = type("ComputeHandler", (_ComputeHandler,), {"service": self.service})
        super().__init__(handler, host=host, port=port)

    def stop(self) -> None:
        super().stop()
        self.service.close()


class ComputeClient:
    def __init__(self, base_url: str, token: str, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout
        self._headers = {"Authorization": f"Bearer {token}"}

    def submit(self, function: str, args: dict, task_id: str | None = None) -> str:
        payload = {"function": function, "args": args}
        if task_id:
            payload["task_id"] = task_id
        r = requests.post(f"{self.base_url}/tasks", json=payload,
                          headers=self._headers, timeout=self.timeout)
        if r.status_code != 200:
            raise RuntimeError(f"submit rejected ({r.status_code}): {r.json().get('error')}")
        return r.json()["task_id"]

    def poll(self, task_id: str) -> dict:
        r = requests.get(f"{self.base_url}/tasks/{task_id}",
                         headers=self._headers, timeout=self.timeout)
        if r.status_code != 200:
            raise RuntimeError(f"poll failed ({r.status_code}): {r.json().get('error')}")
        return r.json()
