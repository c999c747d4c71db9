"""Wrappers around the command-line encoders and the ffmpeg scaler.

Stock encoders have no way to scale their Lagrangian multiplier.  Builds
patched for this purpose are expected to accept one extra option (by default
``--lambda-k <k>``; see ``K_FLAGS``).  Whether a binary has it is detected
from its ``--help`` text, so unpatched binaries still work for k = 1.
"""

from __future__ import annotations

import hashlib
import os
import re
import shutil
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import BackendUnavailable, EncodeFailure, UnsupportedCapability
from .jobs import Codec, ClipRef, EncodeJob, EncodeResult, FrameTypeStats, Preset

DEFAULT_BINARIES = {Codec.HEVC: "x265", Codec.VP9: "vpxenc", Codec.H264: "x264"}

# Placeholders: {bin} {input} {output} {crf} {frames}
TEMPLATES = {
    Codec.HEVC: "{bin} --input {input} --tune psnr --psnr --crf {crf} --frames {frames} --output {output}",
    Codec.VP9: "{bin} -p 1 --end-usage=cq --threads=7 --tune=psnr --psnr --cq-level={crf} "
    "--limit={frames} -o {output} {input}",
    Codec.H264: "{bin} --frames {frames} --tune psnr --psnr --crf {crf} --output {output} {input}",
}
FAST_FLAGS = {
    Codec.HEVC: ["--preset", "ultrafast"],
    Codec.VP9: ["--rt", "--cpu-used=8"],
    Codec.H264: ["--preset", "ultrafast"],
}
K_FLAGS = {Codec.HEVC: "--lambda-k", Codec.VP9: "--lambda-k", Codec.H264: "--lambda-k"}
OUTPUT_SUFFIX = {Codec.HEVC: ".hevc", Codec.VP9: ".ivf", Codec.H264: ".264"}

_NUM = r"([-+]?\d+(?:\.\d+)?)"

_X265_FRAME = re.compile(
    rf"frame ([IPB]):\s*(\d+),\s*Avg QP:\s*{_NUM}\s+kb/s:\s*{_NUM}\s+PSNR Mean: Y:{_NUM} U:{_NUM} V:{_NUM}"
)
_X265_SUMMARY = re.compile(rf"encoded (\d+) frames in {_NUM}s \({_NUM} fps\), {_NUM} kb/s")
_X265_GLOBAL = re.compile(rf"Global PSNR: {_NUM}")
_X265_MEAN = re.compile(rf"encoded .*PSNR Mean: Y:{_NUM} U:{_NUM} V:{_NUM}")

_X264_FRAME = re.compile(
    rf"frame ([IPB]):(\d+)\s+Avg QP:\s*{_NUM}\s+size:\s*{_NUM}\s+PSNR Mean Y:{_NUM} U:{_NUM} V:{_NUM}"
)
_X264_PSNR = re.compile(rf"PSNR Mean Y:{_NUM} U:{_NUM} V:{_NUM} Avg:{_NUM} Global:{_NUM} kb/s:{_NUM}")

_VPX_PSNR = re.compile(rf"PSNR \(Overall/Avg/Y/U/V\)\s+{_NUM}\s+{_NUM}\s+{_NUM}\s+{_NUM}\s+{_NUM}")
_VPX_RATE = re.compile(r"(\d+)b/s")


def _weighted(stats: dict[str, FrameTypeStats], attr: str) -> float:
    total = sum(s.count for s in stats.values())
    return sum(getattr(s, attr) * s.count for s in stats.values()) / total


def parse_x265_log(text: str, width: int, height: int, wall_time_s: float = 0.0) -> EncodeResult:
    per_type = {}
    for m in _X265_FRAME.finditer(text):
        t, n, _qp, kbps, y, u, v = m.groups()
        if int(n) > 0:
            per_type[t] = FrameTypeStats(float(kbps), float(y), float(u), float(v), int(n))
    summary = _X265_SUMMARY.search(text)
    glob = _X265_GLOBAL.search(text)
    if summary is None or glob is None:
        raise EncodeFailure("x265 log has no summary line with Global PSNR", text)
    mean = _X265_MEAN.search(text)
    if mean is not None:
        y, u, v = (float(g) for g in mean.groups())
    elif per_type:
        # frame-type means are per-frame averages, so count weighting is exact
        y, u, v = (_weighted(per_type, a) for a in ("avg_psnr_y", "avg_psnr_u", "avg_psnr_v"))
    else:
        raise EncodeFailure("x265 log has no per-channel PSNR", text)
    return EncodeResult(
        bitrate_kbps=float(summary.group(4)),
        psnr_overall=float(glob.group(1)),
        psnr_y=y,
        psnr_u=u,
        psnr_v=v,
        width=width,
        height=height,
        wall_time_s=wall_time_s,
        per_frame_type=per_type,
    )


def parse_x264_log(text: str, width: int, height: int, fps: float, wall_time_s: float = 0.0) -> EncodeResult:
    per_type = {}
    for m in _X264_FRAME.finditer(text):
        t, n, _qp, size, y, u, v = m.groups()
        if int(n) > 0:
            kbps = float(size) * 8.0 * fps / 1000.0
            per_type[t] = FrameTypeStats(kbps, float(y), float(u), float(v), int(n))
    m = _X264_PSNR.search(text)
    if m is None:
        raise EncodeFailure("x264 log has no PSNR summary line", text)
    y, u, v, _avg, glob, kbps = (float(g) for g in m.groups())
    return EncodeResult(kbps, glob, y, u, v, width, height, wall_time_s, per_type)


def parse_vpxenc_log(text: str, width: int, height: int, wall_time_s: float = 0.0) -> EncodeResult:
    m = _VPX_PSNR.search(text)
    rates = _VPX_RATE.findall(text)
    if m is None or not rates:
        raise EncodeFailure("vpxenc log has no PSNR/bitrate summary", text)
    overall, _avg, y, u, v = (float(g) for g in m.groups())
    # stock vpxenc has no frame-type breakdown; patched builds may print x265-style lines
    per_type = {}
    for fm in _X265_FRAME.finditer(text):
        t, n, _qp, kbps, fy, fu, fv = fm.groups()
        if int(n) > 0:
            per_type[t] = FrameTypeStats(float(kbps), float(fy), float(fu), float(fv), int(n))
    return EncodeResult(int(rates[-1]) / 1000.0, overall, y, u, v, width, height, wall_time_s, per_type)


@dataclass(frozen=True)
class Y4MInfo:
    width: int
    height: int
    fps: float
    frames: int


def probe_y4m(path: str | os.PathLike) -> Y4MInfo:
    """Parse a YUV4MPEG2 header and count frames (4:2:0 and 4:4:4 8-bit)."""
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", "replace").split()
        if not header or header[0] != "YUV4MPEG2":
            raise ValueError(f"{path} is not a Y4M file")
        fields = {tok[0]: tok[1:] for tok in header[1:]}
        w, h = int(fields["W"]), int(fields["H"])
        num, _, den = fields.get("F", "30:1").partition(":")
        fps = float(num) / float(den or 1)
        chroma = fields.get("C", "420")
        frame_bytes = w * h * 3 if chroma.startswith("444") else w * h * 3 // 2
        frames = 0
        while True:
            line = f.readline()
            if not line.startswith(b"FRAME"):
                break
            if len(f.read(frame_bytes)) < frame_bytes:
                break
            frames += 1
    return Y4MInfo(w, h, fps, frames)


@dataclass
class ExternalBackend:
    binaries: dict = field(default_factory=lambda: dict(DEFAULT_BINARIES))
    ffmpeg: str = "ffmpeg"
    work_dir: str | None = None
    templates: dict = field(default_factory=lambda: dict(TEMPLATES))
    k_flags: dict = field(default_factory=lambda: dict(K_FLAGS))
    fast_flags: dict = field(default_factory=lambda: dict(FAST_FLAGS))
    timeout_s: float | None = None

    name = "external"

    def __post_init__(self):
        self.binaries = {Codec(c): b for c, b in self.binaries.items()}
        self._k_support: dict[Codec, bool] = {}
        self._lock = threading.Lock()
        self.runs = 0
        self.downscale_runs = 0

    def fingerprint(self) -> str:
        parts = [f"{c.value}={self._resolve(c) or '-'}" for c in sorted(self.binaries, key=lambda c: c.value)]
        return "external:" + ";".join(parts)

    def _resolve(self, codec: Codec) -> str | None:
        b = self.binaries.get(Codec(codec))
        return shutil.which(b) if b else None

    def available(self, codec: Codec) -> bool:
        return self._resolve(codec) is not None

    def supports_k(self, codec: Codec) -> bool:
        codec = Codec(codec)
        with self._lock:
            if codec not in self._k_support:
                exe = self._resolve(codec)
                if exe is None:
                    raise BackendUnavailable(f"{self.binaries.get(codec)} not found")
                try:
                    out = subprocess.run([exe, "--help"], capture_output=True, text=True, timeout=30)
                    text = out.stdout + out.stderr
                except (OSError, subprocess.TimeoutExpired):
                    text = ""
                self._k_support[codec] = self.k_flags[codec] in text
            return self._k_support[codec]

    def command(self, job: EncodeJob, exe: str, output: str) -> list[str]:
        cmd = self.templates[job.codec].format(
            bin=exe, input=job.clip.path, output=output, crf=job.crf, frames=job.frames
        ).split()
        extra = []
        if job.preset is Preset.FAST:
            extra += self.fast_flags[job.codec]
        if job.k != 1.0:
            flag = self.k_flags[job.codec]
            extra += [f"{flag}={job.k}"] if job.codec is Codec.VP9 else [flag, str(job.k)]
        return cmd[:1] + extra + cmd[1:]

    def encode(self, job: EncodeJob) -> tuple[EncodeResult, str]:
        if job.codec is Codec.SYNTH:
            raise BackendUnavailable("external backend does not run synthetic jobs")
        exe = self._resolve(job.codec)
        if exe is None:
            raise BackendUnavailable(f"{self.binaries.get(job.codec)} not found on PATH")
        if job.k != 1.0 and not self.supports_k(job.codec):
            raise UnsupportedCapability(
                f"{exe} does not accept {self.k_flags[job.codec]}; only k=1 encodes are possible"
            )
        with tempfile.TemporaryDirectory(dir=self.work_dir) as tmp:
            output = str(Path(tmp) / f"out{OUTPUT_SUFFIX[job.codec]}")
            cmd = self.command(job, exe, output)
            t0 = time.perf_counter()
            try:
                proc = subprocess.run(cmd, capture_output=True, text=True, timeout=self.timeout_s)
            except subprocess.TimeoutExpired as e:
                raise EncodeFailure(f"timeout: {' '.join(cmd)}", str(e.stderr or "")) from e
            wall = time.perf_counter() - t0
        log = " ".join(cmd) + "\n" + proc.stdout + proc.stderr
        with self._lock:
            self.runs += 1
        if proc.returncode != 0:
            raise EncodeFailure(f"{Path(exe).name} exited with {proc.returncode}", log)
        w, h = job.clip.width, job.clip.height
        if job.codec is Codec.HEVC:
            return parse_x265_log(log, w, h, wall), log
        if job.codec is Codec.H264:
            return parse_x264_log(log, w, h, job.clip.fps, wall), log
        return parse_vpxenc_log(log, w, h, wall), log

    def downscale(self, clip: ClipRef, target_height: int = 144, out_dir: str | os.PathLike = ".") -> tuple[ClipRef, float]:
        """Bicubic downscale to ``target_height`` (cached by source path/size/mtime)."""
        src = Path(clip.path)
        st = src.stat()
        tag = hashlib.sha256(f"{src.resolve()}|{st.st_size}|{st.st_mtime_ns}|{clip.frames}".encode()).hexdigest()[:16]
        out = Path(out_dir) / f"{src.stem}-{tag}-{target_height}p.y4m"
        if not out.exists():
            exe = shutil.which(self.ffmpeg)
            if exe is None:
                raise BackendUnavailable(f"{self.ffmpeg} not found on PATH")
            out.parent.mkdir(parents=True, exist_ok=True)
            tmp = out.with_suffix(".part.y4m")
            cmd = [exe, "-y", "-loglevel", "error", "-i", str(src), "-vf",
                   f"scale=-2:{target_height}:flags=bicubic", "-frames:v", str(clip.frames),
                   "-pix_fmt", "yuv420p", "-f", "yuv4mpegpipe", str(tmp)]
            t0 = time.perf_counter()
            proc = subprocess.run(cmd, capture_output=True, text=True)
            wall = time.perf_counter() - t0
            with self._lock:
                self.downscale_runs += 1
            if proc.returncode != 0:
                tmp.unlink(missing_ok=True)
                raise EncodeFailure("ffmpeg downscale failed", proc.stderr)
            os.replace(tmp, out)
            out.with_suffix(".seconds").write_text(repr(wall))
        else:
            # the time measured when the rendition was made, so reruns report the same cost
            stamp = out.with_suffix(".seconds")
            wall = float(stamp.read_text()) if stamp.exists() else 0.0
        info = probe_y4m(out)
        if info.frames < clip.frames:
            raise EncodeFailure(f"downscaled clip has {info.frames} frames, expected {clip.frames}")
        return ClipRef(clip.clip_id, str(out), info.width, info.height, clip.frames, info.fps), wall
