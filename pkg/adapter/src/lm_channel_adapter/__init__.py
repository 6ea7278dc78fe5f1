"""Reference adapter exposing a pretrained autoregressive language model as
a covertext channel over the newline-delimited JSON wire protocol."""

from .backend import TransformersBackend
from .server import AdapterConfig, AdapterServer, truncate_probs

__version__ = "0.1.0"

__all__ = ["AdapterConfig", "AdapterServer", "TransformersBackend",
           "truncate_probs"]
