"""Object-aware causal decoding in a synthetic multimodal testbed."""

__version__ = "0.1.0"
