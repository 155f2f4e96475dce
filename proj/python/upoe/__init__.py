"""Under-complete product-of-experts density models."""

from ._upoe import (
    ExpertRecord,
    FreezeMask,
    GaussianUnit,
    IterationRecord,
    MixtureT,
    PreprocessTransform,
    SequentialConfig,
    StudentT,
    TrainConfig,
    TrainReport,
    UpoeError,
    UpoeModel,
    __version__,
    dip_statistic,
    expert_log_density,
    expert_log_normalizer,
    fit_mixture,
    fit_preprocess,
    load_data,
    projection_index,
    sample_expert,
    save_data,
    sphering_error,
    train_growing,
    train_parallel,
    train_sequential,
)

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
