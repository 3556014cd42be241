"""Chirp mixture parameter estimation via Langevin Monte Carlo samplers."""

from chirpest.kernel import backend_name as kernel_backend
from chirpest.signal import (
    ChirpParams,
    ComplexSignal,
    MixtureConfig,
    add_complex_gaussian_noise,
    max_instantaneous_frequency,
    snr_to_noise_variance,
    synthesize_mixture,
    truncate_prefix,
)

__version__ = "0.1.0"
