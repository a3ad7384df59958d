"""Coupled-band enhanced split-step backpropagation for dual-polarization WDM links."""
from .channel import FiberParams, LinkConfig, WdmConfig, run_link, transmit
from .complexity import breakdown, rms_per_2d
from .dbp import DbpConfig, cb_essfm, edc, essfm, ssfm_dbp
from .dsp import BlockingConfig, DualPolWaveform, SymbolFrame
from .nlpr import NlprCoefficients
from .optimize import OptimizerSettings, TrainingSet, optimize_coefficients

__version__ = "0.1.0"
