"""Corpus manifests, the append-only results store, and the corpus runner.

Manifest (JSON)::

    {
      "schema_version": 1,
      "provenance": "free text",
      "synthetic": {"seed": 7, "config": {...SynthConfig...}},   # optional
      "entries": [
        {"clip_id": "a", "path": "clips/a.y4m", "width": 1280, "height": 720,
         "frames": 150, "fps": 30, "category": "gaming"}
      ]
    }

Paths are resolved relative to the manifest.  ``width``/``height``/``fps``
may be omitted for .y4m files (read from the header).  Synthetic entries use
``synth:<seed>:<index>`` paths.

Results store: JSON lines, one record per line, appended under a lock.
The index key is (clip_id, system, codec); the last record for a key wins.
Runs skip keys already present unless forced, except ``skipped`` outcomes,
which are retried.
A truncated final line (from a killed run) is ignored on read and cut off
before the next append.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .encoding import ClipRef, Encoder, SynthConfig, synthetic_clip
from .encoding.external import probe_y4m
from .errors import ManifestError
from .forest import ForestModel
from .proxy import SystemConfig, SystemId, SystemOutcome, run_system

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: str
    width: int
    height: int
    frames: int = 150
    fps: float = 30.0
    category: str = ""

    def clip(self) -> ClipRef:
        return ClipRef(self.clip_id, self.path, self.width, self.height, self.frames, self.fps)


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    warnings: list[str] = field(default_factory=list)
    unrunnable: list[str] = field(default_factory=list)
    provenance: str = ""
    synthetic: dict | None = None

    @property
    def runnable(self) -> list[ManifestEntry]:
        bad = set(self.unrunnable)
        return [e for e in self.entries if e.clip_id not in bad]

    def synth_config(self) -> SynthConfig:
        cfg = (self.synthetic or {}).get("config")
        return SynthConfig.from_dict(cfg) if cfg else SynthConfig()

    def to_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION, "provenance": self.provenance}
        if self.synthetic is not None:
            d["synthetic"] = self.synthetic
        d["entries"] = [asdict(e) for e in self.entries]
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def ingest_manifest(path) -> Manifest:
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise ManifestError(f"{path} is empty")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict) or "entries" not in doc:
        raise ManifestError(f"{path}: expected an object with 'entries'")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ManifestError(f"{path}: schema_version {version!r}, expected {SCHEMA_VERSION}")
    raw = doc["entries"]
    if not raw:
        raise ManifestError(f"{path}: no entries")
    manifest = Manifest([], provenance=doc.get("provenance", ""), synthetic=doc.get("synthetic"))
    seen = set()
    for i, item in enumerate(raw):
        cid = item.get("clip_id")
        if not cid or "path" not in item:
            raise ManifestError(f"{path}: entry {i} needs clip_id and path")
        if cid in seen:
            raise ManifestError(f"{path}: duplicate clip_id {cid!r}")
        seen.add(cid)
        entry, problem = _entry(item, path.parent)
        manifest.entries.append(entry)
        if problem:
            manifest.warnings.append(f"{cid}: {problem}")
            manifest.unrunnable.append(cid)
    for w in manifest.warnings:
        log.warning("manifest %s", w)
    return manifest


def _entry(item: dict, base: Path) -> tuple[ManifestEntry, str]:
    p = item["path"]
    frames = int(item.get("frames", 150))
    common = dict(frames=frames, category=str(item.get("category", "")))
    if p.startswith("synth:"):
        w, h = int(item.get("width", 1280)), int(item.get("height", 720))
        return ManifestEntry(item["clip_id"], p, w, h, fps=float(item.get("fps", 30.0)), **common), ""
    full = Path(p) if Path(p).is_absolute() else base / p
    w, h, fps = item.get("width"), item.get("height"), item.get("fps")
    problem = ""
    if not full.exists():
        problem = f"missing file {full}"
    elif None in (w, h, fps):
        if full.suffix == ".y4m":
            info = probe_y4m(full)
            w, h, fps = w or info.width, h or info.height, fps or info.fps
            if info.frames < frames:
                problem = f"has {info.frames} frames, manifest says {frames}"
        else:
            problem = "width/height/fps required for non-y4m inputs"
    entry = ManifestEntry(item["clip_id"], str(full), int(w or 0), int(h or 0), fps=float(fps or 30.0), **common)
    return entry, problem


def synthetic_manifest(n: int, seed: int = 0, config: SynthConfig | None = None,
                       width: int = 1280, height: int = 720, frames: int = 150) -> Manifest:
    config = config or SynthConfig()
    entries = []
    for i in range(n):
        c = synthetic_clip(seed, i, width, height, frames)
        entries.append(ManifestEntry(c.clip_id, c.path, width, height, frames, 30.0, "synthetic"))
    return Manifest(entries, provenance=f"simulated corpus, seed {seed}",
                    synthetic={"seed": seed, "config": config.to_dict()})


class ResultsStore:
    """Append-only JSON-lines log indexed by (clip_id, system, codec)."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._index: dict[tuple[str, str, str], dict] = {}
        self._repaired = False
        if self.path.exists():
            for rec in self._read():
                self._index[_key(rec)] = rec

    def _read(self):
        lines = self.path.read_bytes().split(b"\n")
        # a final line without its newline was cut off mid-write, even if it parses
        if lines[-1].strip():
            log.warning("%s: ignoring truncated final line", self.path)
        for i, line in enumerate(lines[:-1]):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError:
                raise ValueError(f"{self.path}: corrupt record on line {i + 1}") from None

    def _repair_tail(self) -> None:
        """Cut a partial last line so the next append starts on a fresh line."""
        if self._repaired or not self.path.exists():
            return
        raw = self.path.read_bytes()
        if raw and not raw.endswith(b"\n"):
            keep = raw.rfind(b"\n") + 1
            with open(self.path, "r+b") as f:
                f.truncate(keep)
        self._repaired = True

    def __contains__(self, key) -> bool:
        return tuple(key) in self._index

    def completed(self, key) -> bool:
        """Present and not skipped; skipped pairs are retried by later runs."""
        rec = self._index.get(tuple(key))
        return rec is not None and rec.get("status") != "skipped"

    def __len__(self) -> int:
        return len(self._index)

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True, allow_nan=False) + "\n"
        with self._lock:
            self._repair_tail()
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())
            self._index[_key(record)] = record

    def records(self) -> list[dict]:
        """Latest record per key, in key order."""
        return [self._index[k] for k in sorted(self._index)]

    def outcomes(self, systems=None, codec: str | None = None) -> list[SystemOutcome]:
        wanted = None if systems is None else {SystemId(s).value for s in systems}
        out = []
        for rec in self.records():
            if rec.get("kind") != "outcome":
                continue
            if wanted is not None and rec["system"] not in wanted:
                continue
            if codec is not None and rec["codec"] != codec:
                continue
            out.append(SystemOutcome.from_record(rec))
        return out


def _key(rec: dict) -> tuple[str, str, str]:
    return rec["clip_id"], rec["system"], rec["codec"]


@dataclass
class RunSummary:
    executed: int = 0
    already_done: int = 0
    status: dict[str, int] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)  # unexpected exceptions, isolated per clip

    def count(self, o: SystemOutcome) -> None:
        self.executed += 1
        self.status[o.status] = self.status.get(o.status, 0) + 1
        if o.status == "failed":
            self.failures.append(f"{o.clip_id}/{o.system}: {o.reason}")

    @property
    def exit_code(self) -> int:
        """0 all ran, 3 some skipped, 4 some failed (failed wins)."""
        if self.failures or self.errors:
            return 4
        if self.status.get("skipped"):
            return 3
        return 0


def run_corpus(
    manifest: Manifest,
    systems,
    encoder: Encoder,
    store: ResultsStore,
    config: SystemConfig | None = None,
    models: dict[str, ForestModel] | None = None,
    workers: int = 1,
    force: bool = False,
) -> RunSummary:
    """Run every (clip, system) not yet in ``store``; clips run in parallel."""
    config = config or SystemConfig()
    systems = [SystemId(s) for s in systems]
    summary = RunSummary()
    lock = threading.Lock()

    def one_clip(entry: ManifestEntry) -> None:
        clip = entry.clip()
        for system in systems:
            key = (clip.clip_id, system.value, config.codec.value)
            if store.completed(key) and not force:
                with lock:
                    summary.already_done += 1
                continue
            try:
                outcome = run_system(clip, system, encoder, config, models)
            except Exception as e:  # isolate one clip's crash from the rest of the corpus
                log.exception("%s/%s crashed", clip.clip_id, system.value)
                with lock:
                    summary.errors.append(f"{clip.clip_id}/{system.value}: {type(e).__name__}: {e}")
                continue
            store.append(outcome.to_record())
            with lock:
                summary.count(outcome)

    entries = manifest.runnable
    if workers <= 1:
        for e in entries:
            one_clip(e)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for fut in [pool.submit(one_clip, e) for e in entries]:
                fut.result()
    return summary
