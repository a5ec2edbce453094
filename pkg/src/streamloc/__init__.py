"""Online temporal action localization with future frame generation.

Subpackages: :mod:`streamloc.tensor` (autograd kernels and optimizers),
:mod:`streamloc.networks`, :mod:`streamloc.data`; modules
:mod:`streamloc.augment`, :mod:`streamloc.pipeline`,
:mod:`streamloc.evaluation`, :mod:`streamloc.training`,
:mod:`streamloc.estimator` and :mod:`streamloc.cli`.
"""

__version__ = "0.1.0"

from .events import DetectionEvent
from .exceptions import StreamlocError

__all__ = ["DetectionEvent", "StreamlocError", "__version__"]
