"""Map-tile fusion pipeline: synthetic tiles, two-phase autoencoder, evaluation."""

__version__ = "0.1.0"
