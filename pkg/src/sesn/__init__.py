"""Self-contained NumPy toolkit for squeeze-excitation residual networks
on acoustic scenes: autodiff engine, blocks, audio front end, training
protocol and significance analysis.
"""

from .blocks import (BlockKind, BlockSpec, SeParams, block_forward, cse,
                     init_block, init_se, scse, sse)
from .data import (SCENE_LABELS, Manifest, batcher, load_manifest, one_hot,
                   save_manifest, synth_dataset)
from .errors import (ConfigError, DegenerateVarianceError, InputError,
                     NumericError, ParseError, SesnError, ShapeError)
from .evaluation import (ContingencyTable, ConfusionMatrix, McNemarMethod,
                         McNemarResult, confusion, mcnemar,
                         mcnemar_from_counts, significance_grid)
from .network import (BlockConfig, Model, NetworkConfig, build_model,
                      load_network_config, save_network_config)
from .tensor import Tensor
from .training import (RunRecord, RunSummary, SplitData, TrainConfig,
                       evaluate_accuracy, summarize_runs, train_multi,
                       train_one)

__version__ = "0.1.0"

__all__ = [
    "BlockConfig", "BlockKind", "BlockSpec", "ConfigError", "ConfusionMatrix",
    "ContingencyTable", "DegenerateVarianceError", "InputError", "Manifest",
    "McNemarMethod", "McNemarResult", "Model", "NetworkConfig", "NumericError",
    "ParseError", "RunRecord", "RunSummary", "SCENE_LABELS", "SeParams",
    "SesnError", "ShapeError", "SplitData", "Tensor", "TrainConfig",
    "batcher", "block_forward", "build_model", "confusion", "cse",
    "evaluate_accuracy", "init_block", "init_se", "load_manifest",
    "load_network_config", "mcnemar", "mcnemar_from_counts", "one_hot",
    "save_manifest", "save_network_config", "scse", "significance_grid",
    "sse", "summarize_runs", "synth_dataset", "train_multi", "train_one",
]
