"""Multi-view static features for Android app classification."""

__version__ = "0.1.0"
