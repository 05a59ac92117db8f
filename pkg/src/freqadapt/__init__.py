"""Frequency-domain unsupervised domain adaptation at desk scale.

Core pieces: dense volume container with exact binary I/O, centered
Fourier amplitude/phase manipulation, a plateau-driven region scheduler
for amplitude mixup, a small exact-gradient neural stack, and a synthetic
two-domain benchmark that measures the adaptation uplift.
"""

__version__ = "0.1.0"
