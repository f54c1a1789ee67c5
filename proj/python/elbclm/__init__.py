"""Python bindings for the elbclm face-alignment library."""

from ._core import (
    Error,
    FormatError,
    Model,
    ParseError,
    PdmModel,
    ced_curve,
    face_template_pdm,
    format_pts,
    generalized_procrustes,
    normalized_error,
    parse_pts,
    procrustes_align_pair,
    synthetic_corpus,
    train_cascade,
    train_pdm,
)

__all__ = [
    "Error",
    "FormatError",
    "Model",
    "ParseError",
    "PdmModel",
    "ced_curve",
    "face_template_pdm",
    "format_pts",
    "generalized_procrustes",
    "normalized_error",
    "parse_pts",
    "procrustes_align_pair",
    "synthetic_corpus",
    "train_cascade",
    "train_pdm",
]
