"""altlab: desk-scale study of action memorization in diffusion policies and
an explicit lookup-table alternative with OOD detection."""

__version__ = "0.1.0"
