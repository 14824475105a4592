"""Self-supervised visual speech recognition on a synthetic audio-visual corpus."""

__version__ = "0.1.0"
