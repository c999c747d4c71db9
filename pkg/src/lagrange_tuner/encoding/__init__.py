from .cache import CACHE_ENV, EncodeCache, default_cache_root
from .encoder import Encoder, EncodeStats
from .external import ExternalBackend
from .jobs import ClipRef, Codec, EncodeJob, EncodeResult, FrameTypeStats, Preset, round_k
from .lambda_model import LambdaModel
from .synth import SynthBackend, SynthConfig, SynthParams, synth_model, synthetic_clip

__all__ = [
    "CACHE_ENV",
    "ClipRef",
    "Codec",
    "EncodeCache",
    "EncodeJob",
    "EncodeResult",
    "EncodeStats",
    "Encoder",
    "ExternalBackend",
    "FrameTypeStats",
    "LambdaModel",
    "Preset",
    "SynthBackend",
    "SynthConfig",
    "SynthParams",
    "default_cache_root",
    "round_k",
    "synth_model",
    "synthetic_clip",
]
