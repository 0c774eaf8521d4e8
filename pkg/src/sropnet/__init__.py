"""Super-resolution operator networks for heat-equation data, built on a small numpy autodiff core."""

from .datagen import DatasetConfig, Dataset, SampleRecord, build_dataset, generate_dataset, read_dataset, write_dataset
from .errors import ConfigError, DataFormatError, NumericalError
from .model import ModelParams, ModelSpec, SubnetSpec, TruthOracle, init_params, load_checkpoint, save_checkpoint, sropnet_eval
from .training import EvalReport, TrainConfig, evaluate, train

__version__ = "0.1.0"
