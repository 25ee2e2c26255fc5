"""Sequential fine-tuning vs stateful replay on phase-wise streams."""
__version__ = "0.1.0"
