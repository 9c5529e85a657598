"""Vertebrae labelling on sagittal/coronal reformations with a butterfly network."""

__version__ = "1.0.0"
