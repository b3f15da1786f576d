"""Surface vision transformer on icospheric meshes.

Subpackages:

- ``sit.geometry``: icosphere construction, triangular patching, point
  location, and binary surface file formats.
- ``sit.autodiff``: a small reverse-mode tape over numpy arrays, plus
  checkpoint serialization.
- ``sit.model``: transformer encoder, regression and masked-prediction
  heads.
- ``sit.training``: optimizers, schedules, losses, masked-patch
  corruption, confound encoding, and the training loops.
- ``sit.data``: synthetic cohort generation and manifest-driven loading.
- ``sit.attention``: attention rollout and vertex-space attention maps.
"""

from .errors import (
    ConfigError,
    DataError,
    NumericError,
    ParseError,
    ShapeError,
    SitError,
    StateError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "ParseError",
    "ShapeError",
    "SitError",
    "StateError",
    "__version__",
]
