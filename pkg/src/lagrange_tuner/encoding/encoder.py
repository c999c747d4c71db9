from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from ..errors import BackendUnavailable
from .cache import EncodeCache
from .external import ExternalBackend
from .jobs import ClipRef, Codec, EncodeJob, EncodeResult, Preset
from .synth import SynthBackend


@dataclass
class EncodeStats:
    """Per-caller accounting: requests made, encoder runs, simulated/measured seconds."""

    requests: int = 0
    runs: int = 0
    cached: int = 0
    encode_time_s: float = 0.0
    downscale_time_s: float = 0.0

    def add(self, result: EncodeResult, was_cached: bool) -> None:
        self.requests += 1
        self.encode_time_s += result.wall_time_s
        if was_cached:
            self.cached += 1
        else:
            self.runs += 1


class Encoder:
    """Routes jobs to the synthetic or external backend through the shared cache.

    ``workers`` bounds how many operating points of one curve are encoded at
    the same time.
    """

    def __init__(
        self,
        cache: EncodeCache,
        synth: SynthBackend | None = None,
        external: ExternalBackend | None = None,
        workers: int = 1,
    ):
        self.cache = cache
        self.synth = synth
        self.external = external
        self.workers = max(1, workers)
        self._downscaled: dict[tuple[str, int], tuple[ClipRef, float]] = {}
        self._lock = threading.Lock()

    def backend_for(self, clip: ClipRef):
        backend = self.synth if clip.is_synthetic else self.external
        if backend is None:
            kind = "synthetic" if clip.is_synthetic else "external"
            raise BackendUnavailable(f"no {kind} backend configured for {clip.path}")
        return backend

    def available(self, clip: ClipRef, codec: Codec) -> bool:
        try:
            return self.backend_for(clip).available(codec)
        except BackendUnavailable:
            return False

    def encode(self, job: EncodeJob, stats: EncodeStats | None = None) -> EncodeResult:
        backend = self.backend_for(job.clip)
        if not backend.available(job.codec):
            raise BackendUnavailable(f"{job.codec.value} encoder unavailable")
        key = job.key(backend.fingerprint())
        result, cached = self.cache.get_or_run(key, job, backend.encode)
        if stats is not None:
            with self._lock:
                stats.add(result, cached)
        return result

    def encode_set(
        self,
        clip: ClipRef,
        codec: Codec,
        crfs,
        k: float = 1.0,
        preset: Preset = Preset.DEFAULT,
        stats: EncodeStats | None = None,
    ) -> list[EncodeResult]:
        jobs = [EncodeJob(clip, codec, crf, k, preset, clip.frames) for crf in crfs]
        if self.workers == 1 or len(jobs) == 1:
            return [self.encode(j, stats) for j in jobs]
        with ThreadPoolExecutor(max_workers=min(self.workers, len(jobs))) as pool:
            return list(pool.map(lambda j: self.encode(j, stats), jobs))

    def downscale(self, clip: ClipRef, target_height: int = 144, stats: EncodeStats | None = None) -> ClipRef:
        key = (clip.path, target_height)
        with self._lock:
            hit = self._downscaled.get(key)
        if hit is None:
            backend = self.backend_for(clip)
            if clip.is_synthetic:
                hit = backend.downscale(clip, target_height)
            else:
                hit = backend.downscale(clip, target_height, out_dir=Path(self.cache.root) / "proxies")
            with self._lock:
                self._downscaled[key] = hit
        if stats is not None:
            # charged on every request so a caller's total does not depend on who asked first
            stats.downscale_time_s += hit[1]
        return hit[0]
