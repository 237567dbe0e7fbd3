"""Task-aligned generative zero-shot learning on numpy."""
from .alignment import AlignmentReport, fit_alignment, mean_discrepancy, measure_alignment, skew_episode
from .config import RunConfig, parse_config, parse_config_text
from .data import (
    Dataset,
    Episode,
    SplitSpec,
    SyntheticSpec,
    fuse_datasets,
    load_dataset,
    make_synthetic,
    sample_episode,
    save_dataset,
    split_classes,
)
from .errors import (
    CompatibilityError,
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    SamplingError,
    TGMZError,
    TrainingDivergedError,
)
from .evaluation import (
    HeadConfig,
    MetricsReport,
    SynthesisSpec,
    eval_fusion,
    eval_gzsl,
    eval_zsl,
    export_projection,
    harmonic_mean,
    per_class_top1,
    synthesize_set,
    train_head,
)
from .mgan import MetaConfig
from .model import TGMZModel, TrainState, build_model, fit, rng_streams, train_episode
from .tae import TAEConfig

__version__ = "0.1.0"
