"""Data, configuration, training, evaluation and output files."""
from .config import ConfigError, RunConfig, format_config, parse_config
from .data import Dataset, IdxFormatError, augment, load_idx, load_mnist, synth_dataset
from .export import canvas_grid, compose_grid, export_image, quantize, read_pnm, write_pnm
from .train import TrainResult, evaluate, load_splits, run_train
from .evaluate import EvalReport, run_eval
