"""Multimodal VAE laboratory.

Trains per-modality encoder/decoder networks joined in one latent space under
four KL-weight schedules and quantifies multimodal integration with
KL-divergence measures between full-input and muted-input reconstructions.
"""

__version__ = "0.1.0"
