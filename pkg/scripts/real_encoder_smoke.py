"""Informational speedup run with real encoders, when they are installed.

Needs x265 (plus x264 for S3) and ffmpeg on PATH and one or more .y4m clips:

    python scripts/real_encoder_smoke.py clip1.y4m [clip2.y4m ...] [--systems S0,S1,S2,S3]

Prints the speedup table; there are no pass/fail thresholds.  Exits 0 with a
note when the binaries are missing.
"""

import argparse
import shutil
import sys
from pathlib import Path

from lagrange_tuner.encoding import Encoder
from lagrange_tuner.encoding.external import ExternalBackend, probe_y4m
from lagrange_tuner.encoding.jobs import ClipRef, Codec
from lagrange_tuner.proxy import SystemConfig, measure_speedup, parse_systems


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("clips", nargs="+", type=Path)
    p.add_argument("--systems", default="S0,S1,S2,S3")
    args = p.parse_args()

    missing = [b for b in ("x265", "ffmpeg") if shutil.which(b) is None]
    if missing:
        print(f"skipping: {', '.join(missing)} not on PATH")
        return 0
    systems = parse_systems(args.systems)
    if shutil.which("x264") is None:
        systems = [s for s in systems if s.value != "S3"]

    clips = []
    for path in args.clips:
        info = probe_y4m(path)
        clips.append(ClipRef(path.stem, str(path.resolve()), info.width, info.height, info.frames, info.fps))
    backend = ExternalBackend(binaries={Codec.HEVC: "x265", Codec.H264: "x264"}, ffmpeg="ffmpeg")
    # each system gets its own scratch cache, so every estimate encode is timed
    rows = measure_speedup(clips, systems, SystemConfig(), make_encoder=lambda cache: Encoder(cache, external=backend))
    for r in rows:
        print(f"{r.system:<4} clips {r.clips:>3}  estimate {r.total_estimate_s:>9.1f}s  speedup {r.speedup:>6.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
