"""EEG neural tokenizer with a circular (sin/cos) phase reconstruction loss."""

__version__ = "0.1.0"
