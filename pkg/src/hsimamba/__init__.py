"""Bidirectional spectral state-space classifier for hyperspectral patches."""
from .block import BlockConfig, BlockOutput, BlockParams, block_forward, init_params
from .data import HsiCube, SplitManifest, build_split, gen_synthetic, read_cube, write_cube
from .model import ABLATIONS, ModelConfig, ModelParams, init_model, model_forward, predict
from .train import RunReport, TrainConfig, metrics, train

__version__ = "0.1.0"
