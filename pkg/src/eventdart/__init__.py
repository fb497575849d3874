"""Distribution aware retinal transform (DART) descriptors for event cameras.

Modules: ``events`` (I/O), ``filtering``, ``dart`` (descriptor engine),
``encoding`` (codebooks, pooling, kernel map), ``classify``, ``elot``
(long-term tracking), ``matching``, ``metrics``, ``synth`` (scene generator),
``render`` and ``cli``.
"""

from .dart import DartDescriptor, DartEngine, LogPolarGrid, build_grid, circular_shift
from .errors import DartError
from .events import AnnotationTrack, BoundingBox, Event, EventStream

__version__ = "0.1.0"

__all__ = [
    "AnnotationTrack", "BoundingBox", "DartDescriptor", "DartEngine", "DartError", "Event",
    "EventStream", "LogPolarGrid", "build_grid", "circular_shift",
]
