"""Background-acoustics analysis toolkit: degraded-speech synthesis with exact
ground truth, a compact multi-task network with a 128-d explainable embedding,
and evaluation of both the parameter estimates and the embedding quality."""

__version__ = "0.1.0"

SAMPLE_RATE = 16000
SEGMENT_SAMPLES = 16000  # analysis unit: 1.0 s

from xane.errors import XaneError, AudioFormatError, ConfigError, NumericsError  # noqa: F401
