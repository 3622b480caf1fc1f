"""Open-vocabulary video instance segmentation on a synthetic video world."""

__version__ = "0.1.0"
