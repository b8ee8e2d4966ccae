"""Hand-object dynamics narration tooling and a dual-framerate video-text model."""

__version__ = "0.1.0"
