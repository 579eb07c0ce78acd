"""Video instance tracking by selecting, per associated pair, the better of a
detected and a propagated mask, with forward/backward track merging."""

__version__ = "0.1.0"
