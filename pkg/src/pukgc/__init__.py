"""Knowledge graph completion with PU risk estimation and adversarial augmentation."""

__version__ = "0.1.0"
