"""lumos: coded time-division-multiplexing light field display simulator.

Simulates a light field display end to end with Fourier optics and jointly
optimizes its coded aperture patterns and a light-field encoding network
by gradient descent, so that the perceived focal stack matches a
dense-light-field ground truth.
"""

__version__ = "0.1.0"

from . import autodiff, display, encoder, lfdata, metrics, optics, trainer  # noqa: F401
from .errors import LumosError  # noqa: F401
