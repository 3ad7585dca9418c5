"""Self-supervised contrastive pretraining and deformation detection for wrapped interferogram patches."""

__version__ = "0.1.0"
