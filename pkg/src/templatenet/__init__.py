"""Template-guided pre-training for 1-D biosignal classifiers."""

__version__ = "0.1.0"
