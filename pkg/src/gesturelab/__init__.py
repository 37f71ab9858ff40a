"""Transfer learning toolkit for hand-gesture video classification."""

__version__ = "0.1.0"

DEFAULT_CLASSES = ("Fingers Interlaced", "Fingers Interlocked", "Palm2Palm")
