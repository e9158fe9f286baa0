"""Latent-space active sensing with a joint multi-modal VAE and per-modality DQN agents."""

__version__ = "0.1.0"
