from ._core import (
    Error,
    attention_entropy,
    centroid_distance,
    diagnose,
    evaluate,
    generate_dataset,
    median,
    normalize_config,
    purity,
    recall_at,
    sinusoidal_distance_map,
    sinusoidal_encoding,
    train,
)

__all__ = [
    "Error",
    "attention_entropy",
    "centroid_distance",
    "diagnose",
    "evaluate",
    "generate_dataset",
    "median",
    "normalize_config",
    "purity",
    "recall_at",
    "sinusoidal_distance_map",
    "sinusoidal_encoding",
    "train",
]
