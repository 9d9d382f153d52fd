"""Settlement damage quantification from pre/post-disaster imagery."""

__version__ = "0.1.0"
