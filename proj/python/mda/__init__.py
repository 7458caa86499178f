"""Infrared-visible image fusion with multi-scale dual attention."""

try:
    from ._mda import (
        IntegrityError,
        PreconditionError,
        ShapeError,
        VersionError,
        fuse,
        image_weights,
        init_model,
        metric,
        metric_names,
        patch_weights,
        synthetic_pair,
    )
except ImportError:
    from _mda import (  # built in-tree: build/python/_mda*.so
        IntegrityError,
        PreconditionError,
        ShapeError,
        VersionError,
        fuse,
        image_weights,
        init_model,
        metric,
        metric_names,
        patch_weights,
        synthetic_pair,
    )

__all__ = [
    "IntegrityError",
    "PreconditionError",
    "ShapeError",
    "VersionError",
    "fuse",
    "image_weights",
    "init_model",
    "metric",
    "metric_names",
    "patch_weights",
    "synthetic_pair",
]
__version__ = "0.1.0"
