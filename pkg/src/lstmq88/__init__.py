"""Bit-accurate Q8.8 model of a streaming FPGA LSTM accelerator."""

from .fixq import Acc32, Q88, acc_add, decode, encode, mul, rescale
from .pwl import Activation, PwlTable, build_table, max_abs_error
from .lstm import GateParams, LayerParams, LstmState, ProjectionParams, lstm_step
from .dataflow import EngineConfig, LstmEngine, PerfCounters
from .model_io import CharModel, SamplerConfig, Vocab, generate, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "Acc32", "Q88", "acc_add", "decode", "encode", "mul", "rescale",
    "Activation", "PwlTable", "build_table", "max_abs_error",
    "GateParams", "LayerParams", "LstmState", "ProjectionParams", "lstm_step",
    "EngineConfig", "LstmEngine", "PerfCounters",
    "CharModel", "SamplerConfig", "Vocab", "generate", "load_model", "save_model",
]
