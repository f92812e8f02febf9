"""Desk-scale simulator of audio-driven semantic video conferencing.

Synthetic talking-head clips are gated by head-pose change, compressed by
learned joint source-channel codecs, sent over a simulated fading channel,
and re-rendered at the receiver by an audio-driven generator. A metrics and
reporting harness reproduces the bandwidth accounting and quality-vs-SNR
trends of that design.
"""

__version__ = "0.1.0"

from .channel import ChannelConfig, equalize, snr_sweep_points, transmit
from .config import load_config
from .errors import (ClipFormatError, ConfigError, ContractViolation,
                     EstimationError, FramingError, MalformedHeader,
                     MissingReferenceError, NumericalError, PipelineError,
                     TrainingError, TruncatedPayload, ZeroReferenceError)
from .media import (AudioWaveform, AudiovisualClip, SceneParams, VideoClip,
                    read_clip, synth_scene, write_clip)
from .pipeline import (AccountingReport, CompareReport, PipelineConfig,
                       PipelineResult, SweepReport, compare_audio_conditioning,
                       declared_accounting, run_pipeline, snr_sweep,
                       table2_accounting, time_warp)
from .pose import estimate_pose, gate, pose_change_score
from .training import (TrainedModels, TrainingConfig, has_checkpoints,
                       load_models, save_models, train_all)

__all__ = [
    "AccountingReport", "AudioWaveform", "AudiovisualClip", "ChannelConfig",
    "ClipFormatError", "CompareReport", "ConfigError", "ContractViolation",
    "EstimationError", "FramingError", "MalformedHeader",
    "MissingReferenceError", "NumericalError", "PipelineConfig",
    "PipelineError", "PipelineResult", "SceneParams", "SweepReport",
    "TrainedModels", "TrainingConfig", "TrainingError", "TruncatedPayload",
    "VideoClip", "ZeroReferenceError", "compare_audio_conditioning",
    "declared_accounting", "equalize", "estimate_pose", "gate",
    "has_checkpoints", "load_config", "load_models", "pose_change_score",
    "read_clip", "run_pipeline", "save_models", "snr_sweep",
    "snr_sweep_points", "synth_scene", "table2_accounting", "time_warp",
    "train_all", "transmit", "write_clip",
]
