"""Searchable metadata catalog with per-principal visibility filtering.

Records are appended durably to a JSON-lines log, then indexed in memory:
an inverted token index over every string leaf of the record metadata (plus
the record and flow ids) and a time index over the acquisition timestamp.
Free-text queries AND their tokens; date bounds are inclusive; results come
back newest first.  A record is visible to a principal when its
``visible_to`` list names the principal or the sentinel ``"public"``;
anonymous callers see only public records.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import os
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import parse_qs, quote, unquote, urlsplit

import requests

from .emdlite import parse_iso8601
from .httpd import HttpService, ServiceHandler

log = logging.getLogger(__name__)

PUBLIC = "public"
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")

_ARTIFACT_TYPES = {
    ".pgm": "image/x-portable-graymap",
    ".csv": "text/csv",
    ".json": "application/json",
}


class CatalogError(Exception):
    pass


class DuplicateRecordError(CatalogError):
    pass


class RecordValidationError(CatalogError):
    """Carries the JSON path of the offending field."""

    def __init__(self, path: str, problem: str):
        super().__init__(f"{path}: {problem}")
        self.path = path


def tokenize(text: str) -> list[str]:
    """Lowercase, split on runs of non-alphanumerics, drop empties."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def _timestamp_utc(value: str) -> float:
    dt = parse_iso8601(value)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _string_leaves(node):
    if isinstance(node, str):
        yield node
    elif isinstance(node, dict):
        for v in node.values():
            yield from _string_leaves(v)
    elif isinstance(node, (list, tuple)):
        for v in node:
            yield from _string_leaves(v)


def record_tokens(record: dict) -> set[str]:
    tokens = set(tokenize(record["record_id"]))
    tokens.update(tokenize(record.get("flow_id", "")))
    for leaf in _string_leaves(record.get("metadata", {})):
        tokens.update(tokenize(leaf))
    return tokens


def validate_record(record: dict) -> float:
    """Check the publication schema; returns the acquisition epoch seconds."""
    if not isinstance(record, dict):
        raise RecordValidationError("$", "record must be a JSON object")
    for key in ("record_id", "flow_id", "acquisition_datetime", "published_at"):
        if not isinstance(record.get(key), str) or not record[key]:
            raise RecordValidationError(key, "must be a nonempty string")
    try:
        ts = _timestamp_utc(record["acquisition_datetime"])
    except ValueError as exc:
        raise RecordValidationError("acquisition_datetime", str(exc))
    if not isinstance(record.get("metadata"), dict):
        raise RecordValidationError("metadata", "must be a JSON object")
    artifacts = record.get("artifacts")
    if not isinstance(artifacts, list):
        raise RecordValidationError("artifacts", "must be a list")
    for i, entry in enumerate(artifacts):
        if not isinstance(entry, dict):
            raise RecordValidationError(f"artifacts[{i}]", "must be an object")
        for key in ("kind", "name", "path"):
            if not isinstance(entry.get(key), str) or not entry[key]:
                raise RecordValidationError(f"artifacts[{i}].{key}",
                                            "must be a nonempty string")
    visible = record.get("visible_to")
    if not isinstance(visible, list) or not visible:
        raise RecordValidationError("visible_to", "must be a nonempty list")
    for i, name in enumerate(visible):
        if not isinstance(name, str) or not name:
            raise RecordValidationError(f"visible_to[{i}]", "must be a nonempty string")
    return ts


def visible_to(record: dict, principal: str | None) -> bool:
    allowed = record["visible_to"]
    return PUBLIC in allowed or (principal is not None and principal in allowed)


@dataclass(frozen=True)
class Query:
    text: str | None = None
    date_from: str | None = None
    date_to: str | None = None
    limit: int = 50
    offset: int = 0


class Catalog:
    """In-memory index over an append-only record log."""

    def __init__(self, log_path: str | Path | None = None):
        self.log_path = Path(log_path) if log_path else None
        self._records: dict[str, dict] = {}
        self._acq_ts: dict[str, float] = {}
        self._token_index: dict[str, set[str]] = {}
        self._lock = threading.RLock()
        if self.log_path and self.log_path.exists():
            self._replay()

    def _replay(self) -> None:
        for line in self.log_path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                ts = validate_record(record)
            except (json.JSONDecodeError, CatalogError):
                log.warning("catalog log %s: skipping torn or invalid line", self.log_path)
                continue
            if record["record_id"] in self._records:
                continue  # replay after crash-between-append-and-ack
            self._index(record, ts)

    def _index(self, record: dict, ts: float) -> None:
        rid = record["record_id"]
        self._records[rid] = record
        self._acq_ts[rid] = ts
        for token in record_tokens(record):
            self._token_index.setdefault(token, set()).add(rid)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def publish(self, record: dict) -> None:
        """Validate, append durably, then index; visible once this returns."""
        ts = validate_record(record)
        with self._lock:
            if record["record_id"] in self._records:
                raise DuplicateRecordError(f"record_id {record['record_id']!r} already published")
            if self.log_path:
                with open(self.log_path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(record, separators=(",", ":")) + "\n")
                    f.flush()
                    os.fsync(f.fileno())
            self._index(record, ts)

    def get(self, record_id: str) -> dict | None:
        with self._lock:
            return self._records.get(record_id)

    def search(self, q: Query, principal: str | None = None) -> tuple[int, list[dict]]:
        """Total match count plus one page, newest acquisition first."""
        if q.limit < 0 or q.offset < 0:
            raise ValueError("limit and offset must be nonnegative")
        ts_from = _timestamp_utc(q.date_from) if q.date_from else None
        ts_to = _timestamp_utc(q.date_to) if q.date_to else None
        if ts_from is not None and ts_to is not None and ts_from > ts_to:
            raise ValueError("date_from must be <= date_to")
        tokens = tokenize(q.text) if q.text else []

        with self._lock:
            if tokens:
                posting = [self._token_index.get(t, set()) for t in tokens]
                candidates = set.intersection(*posting) if posting else set()
            else:
                candidates = set(self._records)
            matches = []
            for rid in candidates:
                ts = self._acq_ts[rid]
                if ts_from is not None and ts < ts_from:
                    continue
                if ts_to is not None and ts > ts_to:
                    continue
                record = self._records[rid]
                if not visible_to(record, principal):
                    continue
                matches.append((ts, rid))
            matches.sort(key=lambda pair: (-pair[0], pair[1]))
            page = [self._records[rid] for _, rid in matches[q.offset:q.offset + q.limit]]
            return len(matches), page


class _CatalogHandler(ServiceHandler):
    catalog: Catalog
    tokens: dict[str, str]
    static_dir: Path | None

    def _principal(self) -> str | None:
        token = self.bearer_token()
        return self.tokens.get(token) if token else None

    def do_POST(self):
        if urlsplit(self.path).path != "/records":
            self.drain_body()
            self.send_json(404, {"error": "not found"})
            return
        if self._principal() is None:
            self.drain_body()
            self.send_json(401, {"error": "publishing requires a known token"})
            return
        record = self.read_json_body()
        if not isinstance(record, dict):
            self.send_json(400, {"error": "body must be a JSON object"})
            return
        try:
            self.catalog.publish(record)
        except DuplicateRecordError as exc:
            self.send_json(409, {"error": str(exc)})
        except RecordValidationError as exc:
            self.send_json(400, {"error": str(exc), "field": exc.path})
        else:
            self.send_json(200, {"record_id": record["record_id"], "status": "published"})

    def do_GET(self):
        split = urlsplit(self.path)
        path = split.path
        if path == "/healthz":
            self.send_json(200, {"status": "ok"})
        elif path == "/search":
            self._handle_search(split.query)
        elif path.startswith("/records/"):
            self._handle_record(unquote(path[len("/records/"):]))
        elif path.startswith("/artifacts/"):
            self._handle_artifact(path[len("/artifacts/"):])
        elif self.static_dir is not None and (path == "/" or path.startswith("/ui")):
            self._handle_static(path)
        else:
            self.send_json(404, {"error": "not found"})

    def _handle_search(self, raw_query: str):
        params = parse_qs(raw_query, keep_blank_values=False)

        def first(name):
            return params[name][0] if name in params else None

        try:
            q = Query(
                text=first("text"),
                date_from=first("from"),
                date_to=first("to"),
                limit=int(first("limit") or 50),
                offset=int(first("offset") or 0),
            )
            total, records = self.catalog.search(q, self._principal())
        except ValueError as exc:
            self.send_json(400, {"error": str(exc)})
            return
        self.send_json(200, {"total": total, "records": records})

    def _handle_record(self, record_id: str):
        record = self.catalog.get(record_id)
        if record is None:
            self.send_json(404, {"error": "no such record"})
        elif not visible_to(record, self._principal()):
            self.send_json(401, {"error": "not authorized for this record"})
        else:
            self.send_json(200, record)

    def _handle_artifact(self, rest: str):
        parts = rest.split("/", 1)
        if len(parts) != 2:
            self.send_json(404, {"error": "not found"})
            return
        record_id, name = unquote(parts[0]), unquote(parts[1])
        record = self.catalog.get(record_id)
        if record is None:
            self.send_json(404, {"error": "no such record"})
            return
        if not visible_to(record, self._principal()):
            self.send_json(401, {"error": "not authorized for this record"})
            return
        entry = next((a for a in record["artifacts"] if a["name"] == name), None)
        if entry is None or not Path(entry["path"]).is_file():
            self.send_json(404, {"error": "no such artifact"})
            return
        suffix = Path(entry["path"]).suffix
        ctype = _ARTIFACT_TYPES.get(suffix) or mimetypes.guess_type(entry["path"])[0] \
            or "application/octet-stream"
        self.send_bytes(200, Path(entry["path"]).read_bytes(), ctype)

    def _handle_static(self, path: str):
        rel = path[len("/ui"):].lstrip("/") if path.startswith("/ui") else ""
        rel = rel or "index.html"
        if ".." in rel.split("/"):
            self.send_json(400, {"error": "bad path"})
            return
        target = self.static_dir / rel
        if not target.is_file():
            self.send_json(404, {"error": "not found"})
            return
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self.send_bytes(200, target.read_bytes(), ctype)


class CatalogServer(HttpService):
    """HTTP front over a :class:`Catalog`.

    ``tokens`` maps bearer token -> principal name; unknown or absent
    tokens are treated as anonymous for reads and rejected for publishes.
    """

    def __init__(self, log_path: str | Path | None, tokens: dict[str, str], *,
                 static_dir: str | Path | None = None,
                 host: str = "127.0.0.1", port: int = 0):
        self.catalog = Catalog(log_path)
        handler = type("CatalogHandler", (_CatalogHandler,), {
            "catalog": self.catalog,
            "tokens": dict(tokens),
            "static_dir": Path(static_dir) if static_dir else None,
        })
        super().__init__(handler, host=host, port=port)


class CatalogClient:
    def __init__(self, base_url: str, token: str | None = None, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout
        self._headers = {"Authorization": f"Bearer {token}"} if token else {}

    def publish(self, record: dict) -> None:
        r = requests.post(f"{self.base_url}/records", json=record,
                          headers=self._headers, timeout=self.timeout)
        if r.status_code != 200:
            raise CatalogError(f"publish rejected ({r.status_code}): {r.json().get('error')}")

    def search(self, *, text: str | None = None, date_from: str | None = None,
               date_to: str | None = None, limit: int = 50, offset: int = 0) -> dict:
        params = {"limit": limit, "offset": offset}
        if text is not None:
            params["text"] = text
        if date_from is not None:
            params["from"] = date_from
        if date_to is not None:
            params["to"] = date_to
        r = requests.get(f"{self.base_url}/search", params=params,
                         headers=self._headers, timeout=self.timeout)
        if r.status_code != 200:
            raise CatalogError(f"search failed ({r.status_code}): {r.json().get('error')}")
        return r.json()

    def get_record(self, record_id: str) -> dict:
        r = requests.get(f"{self.base_url}/records/{quote(record_id)}",
                         headers=self._headers, timeout=self.timeout)
        if r.status_code != 200:
            raise CatalogError(f"get failed ({r.status_code})")
        return r.json()

    def get_artifact(self, record_id: str, name: str) -> bytes:
        r = requests.get(
            f"{self.base_url}/artifacts/{quote(record_id)}/{quote(name)}",
            headers=self._headers, timeout=self.timeout)
        if r.status_code != 200:
            raise CatalogError(f"artifact fetch failed ({r.status_code})")
        return r.content
