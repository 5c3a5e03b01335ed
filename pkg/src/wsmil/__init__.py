"""Weakly supervised audio event detection with multiple-instance learning losses."""

from .audio import AudioClip, FeatureConfig, FeatureMatrix, decode_wav, extract_logmel, mel_filterbank, stft_power
from .data import Bag, HalfAndHalfSampler, LabelMap, frames_from_annotation, hnh_batches
from .evaluate import EvalReport, frame_metrics, transcription_export
from .losses import LOSS_KINDS, bag_loss, batch_loss
from .model import ModelConfig, ModelParams, forward, init_params, threshold
from .train import AdamState, TrainConfig, adam_step, train

__version__ = "0.1.0"
