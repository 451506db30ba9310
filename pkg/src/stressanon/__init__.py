"""Stress detection on anonymized speech.

Feature extraction, WSOLA-based voice anonymization, class-balanced
augmentation and CNN / CRNN / CRNN+Attention classifiers built on a small
numpy autodiff engine.
"""

from stressanon.audio import AudioClip, read_wav, resample, write_wav

__all__ = ["AudioClip", "read_wav", "write_wav", "resample"]
__version__ = "0.1.0"
