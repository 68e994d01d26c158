from .annotations import (
    HEADER,
    AnnotationError,
    ClipRecord,
    Instance,
    load_annotations,
    save_annotations,
)
from .degrade import DegradationError, DegradationSpec, degrade, degrade_clip, frame_indices, random_bijection
from .synthetic import CLASSES, ID_DEPENDENT, SyntheticTaskSpec, generate_clip, generate_dataset

__all__ = [
    "HEADER",
    "AnnotationError",
    "ClipRecord",
    "Instance",
    "load_annotations",
    "save_annotations",
    "DegradationError",
    "DegradationSpec",
    "degrade",
    "degrade_clip",
    "frame_indices",
    "random_bijection",
    "CLASSES",
    "ID_DEPENDENT",
    "SyntheticTaskSpec",
    "generate_clip",
    "generate_dataset",
]
