"""Checksummed file transfer over HTTP.

Server: ``PUT /files/{relpath}`` streams a body into a temp file, verifies
the declared SHA-256, and atomically renames into place, so the destination
is only ever absent or byte-identical to the source.  Re-sending an already
stored (path, digest) pair acknowledges without rewriting.  An optional
token bucket paces server-side reads to emulate a slow link.

Client: streams the file in fixed-size chunks with the expected digest in a
header and retries transient failures; combined with the idempotent server
this yields an effectively exactly-once outcome.
"""

from __future__ import annotations

import errno
import hashlib
import http.client
import json
import logging
import os
import re
import threading
import time
import uuid
from dataclasses import dataclass
from enum import Enum
from pathlib import Path, PurePosixPath
from urllib.parse import quote, unquote, urlsplit

import requests

from .httpd import HttpService, ServiceHandler

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 1 << 20
_READ_CHUNK = 1 << 16
_HEX64 = re.compile(r"^[0-9a-f]{64}$")


class TransferStatus(str, Enum):
    COMPLETE = "complete"
    REJECTED = "rejected"
    CORRUPT = "corrupt"


@dataclass
class TransferResult:
    transfer_id: str
    status: TransferStatus
    bytes_transferred: int
    sha256: str
    duration_s: float
    error: str | None = None


@dataclass(frozen=True)
class ThrottleConfig:
    max_bytes_per_second: float | None = None

    def __post_init__(self):
        if self.max_bytes_per_second is not None and self.max_bytes_per_second <= 0:
            raise ValueError("max_bytes_per_second must be > 0 when set")


class _Pacer:
    """Token-bucket read pacing: never lets consumed bytes run ahead of
    rate * elapsed."""

    def __init__(self, rate: float | None):
        self.rate = rate
        self.start: float | None = None
        self.consumed = 0

    def pace(self, n: int) -> None:
        if self.rate is None:
            return
        now = time.monotonic()
        if self.start is None:
            self.start = now
        self.consumed += n
        ahead = self.consumed / self.rate - (now - self.start)
        if ahead > 0:
            time.sleep(ahead)


def sha256_of_file(path: str | Path) -> tuple[str, int]:
    h = hashlib.sha256()
    size = 0
    with open(path, "rb") as f:
        while True:
            chunk = f.read(DEFAULT_CHUNK)
            if not chunk:
                break
            h.update(chunk)
            size += len(chunk)
    return h.hexdigest(), size


def safe_relpath(raw: str) -> str | None:
    """Normalize a destination path; None when it would escape the root."""
    if not raw or raw.startswith("/") or "\\" in raw or "\x00" in raw:
        return None
    parts = PurePosixPath(raw).parts
    if not parts or any(p in ("..", ".") for p in parts):
        return None
    return "/".join(parts)


class TransferService:
    """Upload handling behind the HTTP layer; separable for direct tests."""

    def __init__(self, root: str | Path, tokens: set[str],
                 throttle: ThrottleConfig = ThrottleConfig()):
        self.root = Path(root)
        if not self.root.is_dir():
            raise ValueError(f"transfer root does not exist: {self.root}")
        self.tokens = set(tokens)
        self.throttle = throttle
        self.incoming = self.root / ".incoming"
        self.incoming.mkdir(exist_ok=True)
        self._digests: dict[str, str] = {}
        self._path_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, relpath: str) -> threading.Lock:
        with self._locks_guard:
            return self._path_locks.setdefault(relpath, threading.Lock())

    def _stored_digest(self, relpath: str, final: Path) -> str | None:
        cached = self._digests.get(relpath)
        if cached is not None:
            return cached
        if final.exists():
            digest, _ = sha256_of_file(final)
            self._digests[relpath] = digest
            return digest
        return None

    @staticmethod
    def _drain(rfile, n: int) -> None:
        # Let a mid-send client finish before it reads the error response.
        while n > 0:
            chunk = rfile.read(min(_READ_CHUNK, n))
            if not chunk:
                break
            n -= len(chunk)

    def handle_put(self, raw_relpath: str, headers, rfile) -> tuple[int, dict]:
        token = None
        auth = headers.get("Authorization", "")
        if auth.startswith("Bearer "):
            token = auth[len("Bearer "):].strip()
        transfer_id = headers.get("X-Transfer-Id") or str(uuid.uuid4())
        started = time.monotonic()

        def reply(code, status, nbytes=0, sha="", error=None):
            body = {"transfer_id": transfer_id, "status": status.value,
                    "bytes": nbytes, "sha256": sha,
                    "duration_s": time.monotonic() - started}
            if error:
                body["error"] = error
            return code, body

        raw_len = headers.get("Content-Length")
        try:
            content_length = int(raw_len)
        except (TypeError, ValueError):
            return reply(411, TransferStatus.REJECTED, error="Content-Length required")

        if token not in self.tokens:
            self._drain(rfile, content_length)
            return reply(401, TransferStatus.REJECTED, error="bad or missing token")
        relpath = safe_relpath(raw_relpath)
        if relpath is None:
            self._drain(rfile, content_length)
            return reply(400, TransferStatus.REJECTED, error="illegal destination path")
        expected = (headers.get("X-Expected-SHA256") or "").lower()
        if not _HEX64.match(expected):
            self._drain(rfile, content_length)
            return reply(400, TransferStatus.REJECTED, error="missing or malformed X-Expected-SHA256")

        temp = self.incoming / f"{uuid.uuid4().hex}.part"
        hasher = hashlib.sha256()
        pacer = _Pacer(self.throttle.max_bytes_per_second)
        received = 0
        try:
            with open(temp, "wb") as out:
                remaining = content_length
                while remaining > 0:
                    chunk = rfile.read(min(_READ_CHUNK, remaining))
                    if not chunk:
                        break
                    pacer.pace(len(chunk))
                    hasher.update(chunk)
                    out.write(chunk)
                    received += len(chunk)
                    remaining -= len(chunk)
                out.flush()
                os.fsync(out.fileno())
        except OSError as exc:
            temp.unlink(missing_ok=True)
            self._drain(rfile, content_length - received)
            if exc.errno == errno.ENOSPC:
                return reply(507, TransferStatus.REJECTED, error="insufficient storage")
            return reply(507, TransferStatus.REJECTED, error=f"write failed: {exc}")

        if received != content_length:
            temp.unlink(missing_ok=True)
            return reply(400, TransferStatus.REJECTED, received,
                         error="body shorter than Content-Length")
        digest = hasher.hexdigest()
        if digest != expected:
            temp.unlink(missing_ok=True)
            return reply(422, TransferStatus.CORRUPT, received, digest,
                         error="digest mismatch, upload discarded")

        final = self.root / relpath
        with self._lock_for(relpath):
            if self._stored_digest(relpath, final) == digest:
                temp.unlink(missing_ok=True)  # idempotent resend: no rewrite
            else:
                final.parent.mkdir(parents=True, exist_ok=True)
                os.replace(temp, final)
                self._digests[relpath] = digest
        return reply(200, TransferStatus.COMPLETE, received, digest)


class _TransferHandler(ServiceHandler):
    service: TransferService  # set on the subclass by serve()

    def do_GET(self):
        if urlsplit(self.path).path == "/healthz":
            self.send_json(200, {"status": "ok"})
        else:
            self.send_json(404, {"error": "not found"})

    def do_PUT(self):
        path = urlsplit(self.path).path
        if not path.startswith("/files/"):
            self.drain_body()
            self.send_json(404, {"error": "not found"})
            return
        raw_relpath = unquote(path[len("/files/"):])
        code, body = self.service.handle_put(raw_relpath, self.headers, self.rfile)
        self.send_json(code, body)


def serve(root: str | Path, tokens: set[str],
          throttle: ThrottleConfig = ThrottleConfig(),
          host: str = "127.0.0.1", port: int = 0) -> HttpService:
    """Create a transfer server; call ``.start()`` for a background thread or
    ``.serve_forever()`` to block."""
    service = TransferService(root, tokens, throttle)
    handler = type("TransferHandler", (_TransferHandler,), {"service": service})
    return HttpService(handler, host=host, port=port)


class TransferClient:
    def __init__(self, base_url: str, token: str, *,
                 chunk_size: int = DEFAULT_CHUNK,
                 retries: int = 3,
                 retry_spacing: tuple[float, ...] = (1.0, 2.0, 4.0),
                 timeout: float = 120.0):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.chunk_size = chunk_size
        self.retries = retries
        self.retry_spacing = retry_spacing
        self.timeout = timeout

    def health(self) -> bool:
        try:
            r = requests.get(f"{self.base_url}/healthz", timeout=self.timeout)
            return r.status_code == 200
        except requests.RequestException:
            return False

    def _attempt(self, source: Path, dest_relpath: str, transfer_id: str,
                 expected: str, size: int) -> tuple[int, dict]:
        split = urlsplit(self.base_url)
        conn = http.client.HTTPConnection(split.hostname, split.port, timeout=self.timeout)
        try:
            conn.putrequest("PUT", "/files/" + quote(dest_relpath))
            conn.putheader("Authorization", f"Bearer {self.token}")
            conn.putheader("X-Transfer-Id", transfer_id)
            conn.putheader("X-Expected-SHA256", expected)
            conn.putheader("Content-Length", str(size))
            conn.endheaders()
            with open(source, "rb") as f:
                while True:
                    chunk = f.read(self.chunk_size)
                    if not chunk:
                        break
                    conn.send(chunk)
            resp = conn.getresponse()
            payload = json.loads(resp.read().decode("utf-8"))
            return resp.status, payload
        finally:
            conn.close()

    def put_file(self, source: str | Path, dest_relpath: str) -> TransferResult:
        """Upload one file; retries connection-level failures and 5xx."""
        source = Path(source)
        expected, size = sha256_of_file(source)
        transfer_id = str(uuid.uuid4())
        started = time.monotonic()
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            try:
                code, payload = self._attempt(source, dest_relpath, transfer_id,
                                              expected, size)
            except (OSError, http.client.HTTPException, json.JSONDecodeError) as exc:
                last_exc = exc
                log.warning("transfer attempt %d failed: %s", attempt + 1, exc)
            else:
                if code >= 500:
                    last_exc = RuntimeError(f"server error {code}: {payload.get('error')}")
                else:
                    return TransferResult(
                        transfer_id=payload.get("transfer_id", transfer_id),
                        status=TransferStatus(payload["status"]),
                        bytes_transferred=int(payload.get("bytes", 0)),
                        sha256=payload.get("sha256", ""),
                        duration_s=time.monotonic() - started,
                        error=payload.get("error"),
                    )
            if attempt < self.retries - 1:
                spacing = self.retry_spacing[min(attempt, len(self.retry_spacing) - 1)]
                time.sleep(spacing)
        raise ConnectionError(f"transfer failed after {self.retries} attempts: {last_exc}")
