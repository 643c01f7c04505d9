"""Vocal-burst type classification pipeline.

Two approaches over a shared preprocessing front end: a multi-path
convolutional network on fixed-length log-mel spectrograms, and a small
dense network on average-pooled acoustic embedding vectors.  Training,
evaluation (UAR), and multi-model label fusion are included; the network
engine is implemented directly on numpy.
"""

from vburst.labels import CLASS_NAMES, N_CLASSES

__version__ = "0.1.0"

__all__ = ["CLASS_NAMES", "N_CLASSES", "__version__"]
