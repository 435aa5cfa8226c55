"""Text-based speech editing with a conditional mel-spectrogram diffusion model."""

__version__ = "0.1.0"
