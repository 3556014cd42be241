"""Synthesis of multi-component polynomial-phase chirp mixtures.

A mixture is a sum of chirps, each with a polynomial instantaneous phase
(order P, no constant term, coefficients in cycles) and a polynomial
instantaneous amplitude (order A_c).  Sample n sits at time t = n / f_s
with n starting at 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ChirpParams",
    "MixtureConfig",
    "ComplexSignal",
    "synthesize_mixture",
    "max_instantaneous_frequency",
    "snr_to_noise_variance",
    "add_complex_gaussian_noise",
    "truncate_prefix",
]


@dataclass(frozen=True)
class MixtureConfig:
    """Dimensions of a chirp mixture and its estimation problem.

    Attributes:
        num_samples: signal length N.
        sample_rate: f_s in Hz.
        num_chirps: number of mixture components N_c.
        phase_order: polynomial phase order P (>= 1), shared by all chirps.
        amp_orders: per-chirp amplitude polynomial order A_c (>= 0).
        regularization: ridge weight gamma for the amplitude subproblem;
            None selects the scaled default (see ``default_regularization``).
    """

    num_samples: int
    sample_rate: float
    num_chirps: int
    phase_order: int
    amp_orders: tuple[int, ...]
    regularization: float | None = None

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if self.num_chirps < 1:
            raise ValueError("num_chirps must be positive")
        if self.phase_order < 1:
            raise ValueError("phase_order must be >= 1")
        object.__setattr__(self, "amp_orders", tuple(int(a) for a in self.amp_orders))
        if len(self.amp_orders) != self.num_chirps:
            raise ValueError("amp_orders must have one entry per chirp")
        if any(a < 0 for a in self.amp_orders):
            raise ValueError("amplitude orders must be nonnegative")
        if self.num_samples < self.num_basis_columns:
            raise ValueError(
                f"num_samples={self.num_samples} smaller than the "
                f"{self.num_basis_columns} basis columns; system underdetermined"
            )
        if self.regularization is not None and self.regularization < 0:
            raise ValueError("regularization must be nonnegative")

    @property
    def num_basis_columns(self) -> int:
        """Total amplitude parameters M = sum_c (A_c + 1)."""
        return sum(a + 1 for a in self.amp_orders)

    @property
    def num_phase_params(self) -> int:
        return self.num_chirps * self.phase_order

    @property
    def duration(self) -> float:
        """Time of the last sample, (N - 1) / f_s."""
        return (self.num_samples - 1) / self.sample_rate

    def time_grid(self, num_samples: int | None = None) -> np.ndarray:
        n = self.num_samples if num_samples is None else num_samples
        return np.arange(n) / self.sample_rate


@dataclass(frozen=True)
class ChirpParams:
    """Ground-truth (or estimated) chirp parameters.

    ``phase_coeffs`` is an (N_c, P) array; row c holds the coefficients of
    t, t^2, ..., t^P of chirp c's phase polynomial in cycles.
    ``amp_coeffs`` is ragged: row c has A_c + 1 real coefficients of
    1, t, ..., t^{A_c}.
    """

    phase_coeffs: np.ndarray
    amp_coeffs: tuple[np.ndarray, ...]

    def __post_init__(self):
        phase = np.atleast_2d(np.asarray(self.phase_coeffs, dtype=float))
        amps = tuple(np.asarray(row, dtype=float).ravel() for row in self.amp_coeffs)
        object.__setattr__(self, "phase_coeffs", phase)
        object.__setattr__(self, "amp_coeffs", amps)
        if phase.ndim != 2 or phase.shape[1] < 1:
            raise ValueError("phase_coeffs must be an (N_c, P) array with P >= 1")
        if len(amps) != phase.shape[0]:
            raise ValueError("phase_coeffs and amp_coeffs disagree on chirp count")
        if not np.all(np.isfinite(phase)) or any(
            not np.all(np.isfinite(a)) for a in amps
        ):
            raise ValueError("chirp parameters must be finite")

    @property
    def num_chirps(self) -> int:
        return self.phase_coeffs.shape[0]

    @property
    def phase_order(self) -> int:
        return self.phase_coeffs.shape[1]

    def flat_phase(self) -> np.ndarray:
        """Chirp-major flattening [phi_{1,1}..phi_{1,P}, phi_{2,1}, ...]."""
        return self.phase_coeffs.ravel().copy()

    def matches(self, config: MixtureConfig) -> bool:
        return (
            self.num_chirps == config.num_chirps
            and self.phase_order == config.phase_order
            and tuple(len(a) - 1 for a in self.amp_coeffs) == config.amp_orders
        )


@dataclass(frozen=True)
class ComplexSignal:
    """Complex baseband samples plus their sample rate."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        object.__setattr__(
            self, "samples", np.asarray(self.samples, dtype=np.complex128)
        )
        if self.samples.ndim != 1:
            raise ValueError("samples must be a 1-D vector")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def mean_power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


def _check_dims(params: ChirpParams, config: MixtureConfig):
    if not params.matches(config):
        raise ValueError(
            "chirp parameters do not match the mixture config "
            f"(N_c={params.num_chirps} vs {config.num_chirps}, "
            f"P={params.phase_order} vs {config.phase_order})"
        )


def synthesize_mixture(params: ChirpParams, config: MixtureConfig) -> ComplexSignal:
    """Render the noiseless mixture sum_c A_c(t) exp(j 2 pi phase_c(t)).

    Sample n is evaluated at t = n / f_s; the amplitude polynomial includes
    the constant term, the phase polynomial starts at t^1.
    """
    _check_dims(params, config)
    t = config.time_grid()
    total = np.zeros(config.num_samples, dtype=np.complex128)
    for c in range(config.num_chirps):
        # polyval wants highest-order first; phase has no constant term
        phase = np.polyval(np.append(params.phase_coeffs[c][::-1], 0.0), t)
        amp = np.polyval(params.amp_coeffs[c][::-1], t)
        total += amp * np.exp(2j * np.pi * phase)
    return ComplexSignal(total, config.sample_rate)


def max_instantaneous_frequency(
    params: ChirpParams, config: MixtureConfig, grid_size: int = 4096
) -> float:
    """Largest |d(phase)/dt| in Hz over all chirps and t in [0, (N-1)/f_s].

    The derivative polynomial is evaluated on a dense grid and at its own
    critical points, so the returned value is the exact polynomial maximum
    up to roundoff, not a grid approximation.
    """
    t_end = config.duration
    worst = 0.0
    for c in range(params.num_chirps):
        # d/dt of sum_p phi_p t^p  ->  coefficients p * phi_p for t^{p-1}
        p = np.arange(1, params.phase_order + 1)
        deriv = params.phase_coeffs[c] * p
        candidates = [np.linspace(0.0, t_end, grid_size)]
        second = deriv[1:] * p[:-1]
        if second.size and np.any(second != 0.0):
            crit = np.roots(second[::-1])
            crit = crit[np.isreal(crit)].real
            candidates.append(crit[(crit >= 0.0) & (crit <= t_end)])
        tt = np.concatenate(candidates)
        vals = np.abs(np.polyval(deriv[::-1], tt))
        worst = max(worst, float(vals.max()))
    return worst


def snr_to_noise_variance(signal: ComplexSignal, snr_db: float) -> float:
    """Total complex noise variance that hits the requested SNR.

    SNR is defined against the empirical mean power of ``signal``;
    the returned sigma^2 is the total variance of the circular complex
    noise (sigma^2 / 2 per quadrature).
    """
    power = signal.mean_power
    if power == 0.0:
        raise ValueError("cannot set an SNR against a zero-power signal")
    return power / 10.0 ** (snr_db / 10.0)


def add_complex_gaussian_noise(
    signal: ComplexSignal, variance: float, seed: int
) -> ComplexSignal:
    """Add circular complex Gaussian noise of the given total variance.

    Deterministic given the seed.  ``variance`` is split evenly between the
    real and imaginary parts.
    """
    if variance < 0:
        raise ValueError("noise variance must be nonnegative")
    if variance == 0.0:
        return ComplexSignal(signal.samples.copy(), signal.sample_rate)
    rng = np.random.default_rng(seed)
    scale = np.sqrt(variance / 2.0)
    n = len(signal)
    noise = scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    return ComplexSignal(signal.samples + noise, signal.sample_rate)


def truncate_prefix(signal: ComplexSignal, new_length: int) -> ComplexSignal:
    """First ``new_length`` samples at the same rate (for chain priming)."""
    if not 0 < new_length <= len(signal):
        raise ValueError(
            f"new_length must be in [1, {len(signal)}], got {new_length}"
        )
    return ComplexSignal(signal.samples[:new_length].copy(), signal.sample_rate)
