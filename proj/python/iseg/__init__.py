"""Click-based interactive segmentation with sparse click graphs."""

from ._iseg import (
    ArgumentError,
    ContractError,
    DimensionError,
    DuplicateClickError,
    FormatError,
    IoError,
    Model,
    OutOfBoundsError,
    Session,
    dense_nonlocal,
    generate_scene,
    iou,
    rle_decode,
    rle_encode,
    sgm_attention,
    sgm_forward,
    simulate_next_click,
)

__all__ = [
    "ArgumentError",
    "ContractError",
    "DimensionError",
    "DuplicateClickError",
    "FormatError",
    "IoError",
    "Model",
    "OutOfBoundsError",
    "Session",
    "dense_nonlocal",
    "generate_scene",
    "iou",
    "rle_decode",
    "rle_encode",
    "sgm_attention",
    "sgm_forward",
    "simulate_next_click",
]
