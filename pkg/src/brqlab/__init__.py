"""Desk-scale lab for masked prediction of frozen random-projection quantizer targets."""

__version__ = "0.1.0"

from .config import CorpusConfig, ProbeConfig, TrainConfig, load_config
from .frontend import AudioBuffer, load_wav, log_mel_spectrogram, stack_frames
from .masking import MaskPolicy, MaskSpec, apply_mask, expected_coverage, reduce_mask, sample_mask
from .predictor import PredictorConfig, backward, forward, grad_check, init_predictor, masked_ce_loss
from .prng import Prng, derive_seed
from .quantizer import QuantizerConfig, codebook_utilization, init_quantizer, quantize
from .trainer import RunArtifacts, masked_accuracy, pretrain

__all__ = [
    "AudioBuffer", "CorpusConfig", "MaskPolicy", "MaskSpec", "PredictorConfig", "ProbeConfig", "Prng",
    "QuantizerConfig", "RunArtifacts", "TrainConfig", "apply_mask", "backward", "codebook_utilization",
    "derive_seed", "expected_coverage", "forward", "grad_check", "init_predictor", "init_quantizer",
    "load_config", "load_wav", "log_mel_spectrogram", "masked_accuracy", "masked_ce_loss", "pretrain",
    "quantize", "reduce_mask", "sample_mask", "stack_frames",
]
