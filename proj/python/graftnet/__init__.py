"""Cross-model grafting network for salient object detection, CPU reference."""

from ._core import (
    CapacityError,
    ConfigError,
    DimensionError,
    DomainError,
    Error,
    IoError,
    Model,
    NumericError,
    agl,
    attn_matrix,
    bde,
    bilinear_resize,
    boundary_count,
    e_measure,
    evaluate,
    f_measure,
    gradcheck,
    gradcheck_names,
    learning_rate,
    mae,
    parse_config,
    read_pnm,
    s_measure,
    synth_generate,
    synth_sample,
    total_loss,
    train,
    write_pnm,
)

__all__ = [name for name in dir() if not name.startswith("_")]
