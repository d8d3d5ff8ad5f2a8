from .loop import (
    LOG_HEADER,
    DivergenceError,
    Example,
    TrainConfig,
    TrainingLog,
    evaluate,
    predict,
    prepare_examples,
    regression_loss,
    split_dataset,
    train,
)
from .optim import NesterovSGD, PlateauScheduler
from .synthetic import Sample, SyntheticCase, SyntheticSpec, make_synthetic, tag_label_correlation
