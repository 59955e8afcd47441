"""Directory monitor: detect new data files, debounce partial writes, and
trigger each distinct file content exactly once across restarts.

Detection is a polling scan (portable, trivially testable).  A file becomes
eligible once its size has been stable for the configured window.  Before
the trigger callback fires, a (path, size, digest) entry is appended
durably to the checkpoint journal; reloading the journal after a crash or
restart therefore suppresses repeat flows for content already handled.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

log = logging.getLogger(__name__)

_DIGEST_CHUNK = 1 << 20


class JournalWriteError(Exception):
    """The journal could not be appended; exactly-once can no longer be
    guaranteed, so the watcher halts."""


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        while True:
            chunk = f.read(_DIGEST_CHUNK)
            if not chunk:
                break
            h.update(chunk)
    return h.hexdigest()


@dataclass(frozen=True)
class WatchConfig:
    watch_dir: Path
    glob: str = "*.emdl"
    stability_window: float = 2.0
    poll_period: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "watch_dir", Path(self.watch_dir))
        if not self.watch_dir.is_dir():
            raise ValueError(f"watch_dir does not exist: {self.watch_dir}")
        if self.stability_window < self.poll_period:
            raise ValueError("stability_window must be >= poll_period")


class CheckpointJournal:
    """Append-only JSON-lines journal of already-triggered file contents.

    One object per line: {"path", "size", "sha256", "triggered_at"}.  Each
    append is flushed and fsynced before the caller proceeds, and reload
    tolerates a torn final line from a crash mid-write.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: set[tuple[str, int, str]] = set()
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        for line in self.path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                self._entries.add((d["path"], int(d["size"]), d["sha256"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                log.warning("journal %s: skipping torn line", self.path)

    def __len__(self) -> int:
        return len(self._entries)

    def contains(self, path: str | Path, size: int, digest: str) -> bool:
        return (str(path), size, digest) in self._entries

    def record(self, path: str | Path, size: int, digest: str) -> None:
        entry = {"path": str(path), "size": size, "sha256": digest,
                 "triggered_at": time.time()}
        line = json.dumps(entry, separators=(",", ":")) + "\n"
        try:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())
        except OSError as exc:
            raise JournalWriteError(f"cannot append to journal {self.path}: {exc}") from exc
        self._entries.add((str(path), size, digest))


def should_process(path: str | Path, journal: CheckpointJournal) -> bool:
    """True iff this exact content at this path has not yet triggered a flow.

    A file rewritten with different bytes at the same path is processed
    again; a byte-identical re-copy is not.
    """
    size = os.stat(path).st_size
    return not journal.contains(path, size, file_digest(path))


@dataclass
class _SeenState:
    size: int
    mtime_ns: int
    stable_since: float
    triggered_digest: str | None = None


class Watcher:
    """Single-threaded scanning loop feeding a flow-trigger callback."""

    def __init__(self, config: WatchConfig, journal: CheckpointJournal, sink):
        self.config = config
        self.journal = journal
        self.sink = sink
        self._seen: dict[str, _SeenState] = {}

    def scan_once(self, now: float | None = None) -> int:
        """One pass over the watch directory; returns the number of triggers."""
        now = time.monotonic() if now is None else now
        triggered = 0
        for path in sorted(self.config.watch_dir.glob(self.config.glob)):
            if not path.is_file():
                continue
            key = str(path)
            try:
                st = path.stat()
                size, mtime_ns = st.st_size, st.st_mtime_ns
            except OSError as exc:
                log.warning("watcher: cannot stat %s (%s), will retry", path, exc)
                self._seen.pop(key, None)
                continue

            state = self._seen.get(key)
            if state is None or state.size != size or state.mtime_ns != mtime_ns:
                # new file, still growing, or rewritten in place: restart the clock
                self._seen[key] = _SeenState(size=size, mtime_ns=mtime_ns, stable_since=now)
                continue
            if state.triggered_digest is not None:
                continue  # this content already handled (digest journaled)
            if now - state.stable_since < self.config.stability_window:
                continue

            try:
                digest = file_digest(path)
            except OSError as exc:
                log.warning("watcher: cannot read %s (%s), will retry", path, exc)
                continue
            if self.journal.contains(key, size, digest):
                state.triggered_digest = digest
                continue
            # Durable checkpoint first, then the trigger: repeats are worse
            # than a lost trigger at a crash boundary.
            self.journal.record(key, size, digest)
            state.triggered_digest = digest
            self.sink(path)
            triggered += 1
        return triggered

    def run(self, stop: threading.Event) -> None:
        """Scan until ``stop`` is set; journal failures propagate and halt."""
        while not stop.is_set():
            self.scan_once()
            stop.wait(self.config.poll_period)


def watch(config: WatchConfig, journal: CheckpointJournal, sink,
          stop: threading.Event | None = None) -> None:
    """Run a watcher loop until ``stop`` is set (blocks the calling thread)."""
    Watcher(config, journal, sink).run(stop or threading.Event())
