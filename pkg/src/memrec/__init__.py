"""Memory-efficient categorical embeddings via dual Bloom-filter encoding,
with a toy CTR training pipeline, reference baselines, and lookup benchmarks."""

__version__ = "0.1.0"

from .bench import BenchReport, BenchSpec, run_bench, sweep_table_sizes
from .data import (
    Dataset,
    Record,
    load_tsv,
    parse_criteo_tsv,
    split_temporal,
    synth_generate,
)
from .encoder import (
    EncoderConfig,
    Signature,
    TokenSignature,
    WeightSignature,
    densify,
    encode_token,
    encode_weight,
    pool_signatures,
    sparsify,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    MemrecError,
    UndefinedMetricError,
)
from .estimator import CTRClassifier
from .metrics import collision_stats, compression_ratio, count_params, roc_auc
from .model import ModelParams, bce_loss, forward, load_model, save_model, train
from .schemes import make_scheme
from .tables import (
    EmbeddingGrad,
    TokenTable,
    WeightTable,
    alpha,
    apply_grad,
    embed,
    embed_backward,
    init_tables,
    load_tables,
    save_tables,
)

__all__ = [
    "__version__",
    "BenchReport",
    "BenchSpec",
    "CTRClassifier",
    "ConfigError",
    "DataError",
    "Dataset",
    "DivergenceError",
    "EmbeddingGrad",
    "EncoderConfig",
    "MemrecError",
    "ModelParams",
    "Record",
    "Signature",
    "TokenSignature",
    "TokenTable",
    "UndefinedMetricError",
    "WeightSignature",
    "WeightTable",
    "alpha",
    "apply_grad",
    "bce_loss",
    "collision_stats",
    "compression_ratio",
    "count_params",
    "densify",
    "embed",
    "embed_backward",
    "encode_token",
    "encode_weight",
    "forward",
    "init_tables",
    "load_model",
    "load_tables",
    "load_tsv",
    "make_scheme",
    "parse_criteo_tsv",
    "pool_signatures",
    "roc_auc",
    "run_bench",
    "save_model",
    "save_tables",
    "sparsify",
    "split_temporal",
    "sweep_table_sizes",
    "synth_generate",
    "train",
]
