"""Learned hybrid precoding for TDD massive MIMO, with classical baselines."""

from .config import SystemConfig, TrainConfig, desk_config, desk_ofdm_config, load_config
from .channel import generate_channels
from .sudnn import SuDnnModel
from .training import load_checkpoint, save_checkpoint, train
from .evaluation import RateReport, evaluate_scheme, run_ofdm_pipeline, sum_rate

__version__ = "0.1.0"
