"""All-in-one image restoration steered by natural-language instructions."""

__version__ = "0.1.0"
