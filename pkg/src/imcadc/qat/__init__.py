"""Hardware-aware training: fixed-point QAT, ADC-curve activations, weight noise, VAT."""

from .activation import (ActMode, AdcActivation, CurveBank, ReassignPolicy, VatPool,
                         adc_backward, adc_forward)
from .data import Dataset, fetch_digits, load_digits_split
from .network import DeskCNN, ImcConv2d, ImcLinear
from .quant import NoiseConfig, inject_weight_noise, quantize_fixed, quantize_ste
from .train import (CurveSetAccuracy, History, TrainConfig, TrainingDiverged, accuracy,
                    configure, evaluate, evaluate_curves, load_checkpoint, save_checkpoint,
                    train)

__all__ = [
    "ActMode", "AdcActivation", "CurveBank", "CurveSetAccuracy", "Dataset", "DeskCNN",
    "History", "ImcConv2d", "ImcLinear", "NoiseConfig", "ReassignPolicy", "TrainConfig",
    "TrainingDiverged", "VatPool", "accuracy", "adc_backward", "adc_forward", "configure",
    "evaluate", "evaluate_curves", "fetch_digits", "inject_weight_noise", "load_checkpoint",
    "load_digits_split", "quantize_fixed", "quantize_ste", "save_checkpoint", "train",
]
