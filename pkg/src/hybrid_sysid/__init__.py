"""Hybrid FRF/LSTM system identification for multi-axial test rigs."""

from .fatigue import multirain_ratio, rainflow_4pt
from .lstm import LstmNetwork, TrainConfig, parameter_count
from .metrics import evaluate, psd_rms_error, rms_error
from .pipeline import HybridPredictor, WindowingConfig, fit_predictor, predict
from .signal import MultiChannelSignal, read_csv, write_csv
from .spectral import FrfModel, estimate_frf, frf_predict

__version__ = "0.1.0"

__all__ = [
    "FrfModel", "HybridPredictor", "LstmNetwork", "MultiChannelSignal", "TrainConfig",
    "WindowingConfig", "estimate_frf", "evaluate", "fit_predictor", "frf_predict",
    "multirain_ratio", "parameter_count", "predict", "psd_rms_error", "rainflow_4pt",
    "read_csv", "rms_error", "write_csv",
]
