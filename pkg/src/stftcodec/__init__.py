"""Causal STFT-domain neural audio codec with residual vector quantization."""

from .config import ConfigError, ModelConfig, TrainConfig, desk_config, full_scale_config, tiny_config

__all__ = ["ConfigError", "ModelConfig", "TrainConfig", "desk_config", "full_scale_config", "tiny_config"]
__version__ = "0.1.0"
