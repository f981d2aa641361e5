"""Layer-wise saturation diagnostics and selective LoRA injection on a miniature transformer encoder."""
__version__ = "0.1.0"
