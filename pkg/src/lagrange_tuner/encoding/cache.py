"""Content-addressed on-disk cache of encode results.

Layout: ``<root>/<key[:2]>/<key>.json`` where ``key`` is the SHA-256 of the
job fields plus the backend fingerprint.  Each record holds the job, the
parsed result and the verbatim encoder log.  Writes go through a temporary
file and ``os.replace`` so readers never see a partial record.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
import time
from collections import defaultdict
from pathlib import Path
from typing import Callable

from .jobs import EncodeJob, EncodeResult

CACHE_ENV = "LAGRANGE_TUNER_CACHE"
RECORD_VERSION = 1


def default_cache_root() -> Path:
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "lagrange-tuner"))


class EncodeCache:
    """Disk cache plus a per-key lock so concurrent identical jobs run once."""

    def __init__(self, root: str | os.PathLike | None = None):
        self.root = Path(root) if root is not None else default_cache_root()
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._guard = threading.Lock()
        self.hits = 0
        self.misses = 0

    def path_for(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def _lock(self, key: str) -> threading.Lock:
        with self._guard:
            return self._locks[key]

    def get(self, key: str) -> EncodeResult | None:
        p = self.path_for(key)
        try:
            rec = json.loads(p.read_text())
        except (FileNotFoundError, json.JSONDecodeError):
            return None
        return EncodeResult.from_dict(rec["result"])

    def put(self, key: str, job: EncodeJob, result: EncodeResult, log: str = "") -> None:
        p = self.path_for(key)
        p.parent.mkdir(parents=True, exist_ok=True)
        rec = {
            "version": RECORD_VERSION,
            "key": key,
            "job": job.to_dict(),
            "result": result.to_dict(),
            "log": log,
            "created": time.time(),
        }
        fd, tmp = tempfile.mkstemp(dir=p.parent, suffix=".tmp")
        with os.fdopen(fd, "w") as f:
            json.dump(rec, f, sort_keys=True)
        os.replace(tmp, p)

    def get_or_run(
        self, key: str, job: EncodeJob, run: Callable[[EncodeJob], tuple[EncodeResult, str]]
    ) -> tuple[EncodeResult, bool]:
        """Returns (result, was_cached)."""
        with self._lock(key):
            cached = self.get(key)
            if cached is not None:
                with self._guard:
                    self.hits += 1
                return cached, True
            result, log = run(job)
            self.put(key, job, result, log)
            with self._guard:
                self.misses += 1
            return result, False

    def log_for(self, key: str) -> str | None:
        try:
            return json.loads(self.path_for(key).read_text())["log"]
        except (FileNotFoundError, json.JSONDecodeError, KeyError):
            return None

    def records(self):
        for p in sorted(self.root.glob("??/*.json")):
            yield p

    def gc(self, older_than_s: float | None = None, keep_keys: set[str] | None = None) -> int:
        """Delete stale temporaries and (optionally) records older than a cutoff.

        Records whose key is in ``keep_keys`` are never removed.
        """
        removed = 0
        for tmp in self.root.glob("??/*.tmp"):
            tmp.unlink(missing_ok=True)
            removed += 1
        if older_than_s is None:
            return removed
        cutoff = time.time() - older_than_s
        for p in self.records():
            if keep_keys and p.stem in keep_keys:
                continue
            try:
                created = json.loads(p.read_text()).get("created", 0)
            except json.JSONDecodeError:
                created = 0
            if created < cutoff:
                p.unlink(missing_ok=True)
                removed += 1
        return removed
