"""Variable-projection objective for chirp mixtures.

For a phase vector phi the amplitude coefficients are eliminated in closed
form: with basis H(phi), ridge gamma, and G = H*H + gamma I,

    b_hat = G^{-1} H* y,    J(phi) = Re(y* (y - H b_hat)) = y* P_H^perp y.

The module evaluates J, its analytic gradient, Gaussian-smoothed gradient
samples, and the Stein-lemma estimate of the smoothed Hessian trace.  All
heavy lifting goes through the selected kernel backend (see ``kernel``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from chirpest.kernel import backend as _kernel
from chirpest.signal import ComplexSignal, MixtureConfig

__all__ = [
    "RankDeficiencyError",
    "ObjectiveContext",
    "BasisFactorization",
    "SmoothedGradientSample",
    "ProjectionObjective",
    "make_context",
    "prefix_context",
    "default_regularization",
    "build_basis_matrix",
    "build_basis_derivative",
    "solve_amplitudes",
    "objective_value",
    "objective_gradient",
    "value_and_gradient",
    "smoothed_gradient_sample",
    "hessian_trace_estimate",
    "recover_amplitudes",
]


class RankDeficiencyError(np.linalg.LinAlgError):
    """The regularized normal matrix G is singular (gamma=0, deficient H)."""


def default_regularization(config: MixtureConfig) -> float:
    """Scaled ridge 1e-8 * tr(H*H) / M.

    The basis carriers have unit modulus, so tr(H*H) = sum_c sum_a sum_n
    t_n^{2a} independently of phi; the default is a fixed number per config.
    """
    t = config.time_grid()
    trace = sum(
        float(np.sum(t ** (2 * a)))
        for a_c in config.amp_orders
        for a in range(a_c + 1)
    )
    return 1e-8 * trace / config.num_basis_columns


@dataclass(frozen=True)
class ObjectiveContext:
    """Immutable bundle: measured signal, precomputed time powers, config.

    ``time_powers[p]`` is the vector [(0/f_s)^p, ..., ((N-1)/f_s)^p] for
    p = 0 .. max(P, max A_c).  Shareable across chains; all operations on
    it are stateless.
    """

    y: np.ndarray
    time_powers: np.ndarray
    config: MixtureConfig
    gamma: float
    # kernel-ready views, derived once in make_context
    t_phase: np.ndarray
    t_amp: np.ndarray
    amp_orders_arr: np.ndarray
    col_offsets: np.ndarray

    @property
    def num_samples(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        """Length of the flattened phase vector N_c * P."""
        return self.config.num_phase_params

    def signal_power(self) -> float:
        return float(np.mean(np.abs(self.y) ** 2))


def make_context(
    signal: ComplexSignal | np.ndarray,
    config: MixtureConfig,
    num_samples: int | None = None,
) -> ObjectiveContext:
    """Precompute everything J and its gradient need.

    ``num_samples`` permits contexts over a stated prefix length (priming);
    by default the signal must have exactly config.num_samples samples.
    """
    y = signal.samples if isinstance(signal, ComplexSignal) else np.asarray(signal)
    y = np.ascontiguousarray(y, dtype=np.complex128)
    n = config.num_samples if num_samples is None else int(num_samples)
    if len(y) != n:
        raise ValueError(f"signal has {len(y)} samples, expected {n}")
    if n < config.num_basis_columns:
        raise ValueError("prefix too short for the basis column count")
    if isinstance(signal, ComplexSignal) and signal.sample_rate != config.sample_rate:
        raise ValueError("signal and config disagree on sample_rate")

    max_pow = max(config.phase_order, max(config.amp_orders))
    t = np.arange(n) / config.sample_rate
    time_powers = np.empty((max_pow + 1, n))
    for p in range(max_pow + 1):
        time_powers[p] = t**p

    t_phase = np.ascontiguousarray(time_powers[1 : config.phase_order + 1].T)
    t_amp = np.ascontiguousarray(time_powers[: max(config.amp_orders) + 1].T)
    amp_orders_arr = np.asarray(config.amp_orders, dtype=np.intp)
    col_offsets = np.zeros(config.num_chirps + 1, dtype=np.intp)
    np.cumsum(amp_orders_arr + 1, out=col_offsets[1:])

    gamma = config.regularization
    if gamma is None:
        gamma = default_regularization(config)

    return ObjectiveContext(
        y=y,
        time_powers=time_powers,
        config=config,
        gamma=float(gamma),
        t_phase=t_phase,
        t_amp=t_amp,
        amp_orders_arr=amp_orders_arr,
        col_offsets=col_offsets,
    )


def prefix_context(ctx: ObjectiveContext, new_length: int) -> ObjectiveContext:
    """Context over the first ``new_length`` samples of the same signal."""
    if not 0 < new_length <= ctx.num_samples:
        raise ValueError("prefix length out of range")
    return make_context(ctx.y[:new_length], ctx.config, num_samples=new_length)


def _check_phi(phi, ctx) -> np.ndarray:
    phi = np.ascontiguousarray(phi, dtype=np.float64).ravel()
    if len(phi) != ctx.dim:
        raise ValueError(f"phi has {len(phi)} entries, expected {ctx.dim}")
    if not np.all(np.isfinite(phi)):
        raise ValueError("phi must be finite")
    return phi


def build_basis_matrix(phi, ctx: ObjectiveContext) -> np.ndarray:
    """Complex basis H(phi), shape (N, M), blocks ordered by chirp.

    Column (c, a) holds (n/f_s)^a exp(j 2 pi sum_p phi_{c,p} (n/f_s)^p).
    """
    phi = _check_phi(phi, ctx)
    return _kernel.build_basis(
        phi, ctx.t_phase, ctx.t_amp, ctx.amp_orders_arr, ctx.col_offsets
    )


def build_basis_derivative(phi, chirp: int, power: int, ctx) -> np.ndarray:
    """dH/dphi_{chirp,power}: zero except block ``chirp``.

    ``chirp`` is 0-based, ``power`` is the polynomial degree in [1, P].
    The nonzero block equals j 2 pi diag(t^power) H_chirp.
    """
    phi = _check_phi(phi, ctx)
    if not 0 <= chirp < ctx.config.num_chirps:
        raise IndexError(f"chirp index {chirp} out of range")
    if not 1 <= power <= ctx.config.phase_order:
        raise IndexError(f"power {power} outside [1, {ctx.config.phase_order}]")
    h = build_basis_matrix(phi, ctx)
    out = np.zeros_like(h)
    lo, hi = int(ctx.col_offsets[chirp]), int(ctx.col_offsets[chirp + 1])
    out[:, lo:hi] = (2j * np.pi) * ctx.time_powers[power][:, None] * h[:, lo:hi]
    return out


@dataclass(frozen=True)
class BasisFactorization:
    """H, the Cholesky factor of G = H*H + gamma I, and the LS solution."""

    h: np.ndarray
    chol_lower: np.ndarray
    b_hat: np.ndarray
    residual: np.ndarray
    gamma: float

    def solve_g(self, v: np.ndarray) -> np.ndarray:
        """Apply G^{-1} using the stored factorization."""
        z = np.linalg.solve(self.chol_lower, v)
        return np.linalg.solve(self.chol_lower.conj().T, z)


def solve_amplitudes(h: np.ndarray, ctx: ObjectiveContext) -> BasisFactorization:
    """Regularized amplitude subproblem b_hat = (H*H + gamma I)^{-1} H* y."""
    h = np.asarray(h, dtype=np.complex128)
    if h.shape[0] != ctx.num_samples:
        raise ValueError("H row count does not match the context signal")
    m = h.shape[1]
    g = h.conj().T @ h
    if ctx.gamma != 0.0:
        g.flat[:: m + 1] += ctx.gamma
    try:
        low = np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(
            "amplitude system is rank deficient; increase gamma or reduce "
            "the basis"
        ) from exc
    z = np.linalg.solve(low, h.conj().T @ ctx.y)
    b_hat = np.linalg.solve(low.conj().T, z)
    residual = ctx.y - h @ b_hat
    return BasisFactorization(
        h=h, chol_lower=low, b_hat=b_hat, residual=residual, gamma=ctx.gamma
    )


def _eval(phi, ctx, want_grad):
    phi = _check_phi(phi, ctx)
    try:
        return _kernel.eval_objective(
            phi,
            ctx.y,
            ctx.t_phase,
            ctx.t_amp,
            ctx.amp_orders_arr,
            ctx.col_offsets,
            ctx.gamma,
            want_grad,
        )
    except RankDeficiencyError:
        raise
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError(str(exc)) from exc


def objective_value(phi, ctx: ObjectiveContext) -> float:
    """J(phi) = y* P_H^perp y, a real scalar in [0, ||y||^2]."""
    return _eval(phi, ctx, want_grad=False)[0]


def objective_gradient(phi, ctx: ObjectiveContext) -> np.ndarray:
    """Analytic gradient of J; entry (c,p) = -2 Re[r* dH/dphi_{c,p} b_hat].

    Ordering matches the chirp-major flattening of phi.
    """
    return _eval(phi, ctx, want_grad=True)[1]


def value_and_gradient(phi, ctx: ObjectiveContext) -> tuple[float, np.ndarray]:
    """J and its gradient from one basis construction."""
    j, grad, _, _ = _eval(phi, ctx, want_grad=True)
    return j, grad


@dataclass(frozen=True)
class SmoothedGradientSample:
    """One Monte Carlo draw of the Gaussian-smoothed gradient.

    ``gradient`` is the exact gradient at the perturbed point
    theta + sigma_used * perturbation; averaging such samples over the
    standard-normal perturbation yields the smoothed gradient field.
    """

    gradient: np.ndarray
    perturbation: np.ndarray
    sigma_used: float


def smoothed_gradient_sample(
    theta, sigma: float, seed, ctx: ObjectiveContext | None = None, grad_fn=None
) -> SmoothedGradientSample:
    """Draw eps ~ N(0, I) and evaluate the gradient at theta + sigma*eps.

    ``grad_fn`` overrides the context gradient (tests wire analytic
    surrogates through it); exactly one of ctx/grad_fn is required.
    With sigma = 0 this reduces to the plain gradient at theta.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if grad_fn is None:
        if ctx is None:
            raise ValueError("need an ObjectiveContext or a grad_fn")
        grad_fn = lambda x: objective_gradient(x, ctx)  # noqa: E731
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    eps = rng.standard_normal(theta.shape)
    gradient = np.asarray(grad_fn(theta + sigma * eps), dtype=np.float64)
    return SmoothedGradientSample(
        gradient=gradient, perturbation=eps, sigma_used=float(sigma)
    )


def hessian_trace_estimate(sample: SmoothedGradientSample) -> float:
    """Single-sample Stein estimator (1/sigma) eps . grad(theta + sigma eps).

    Its expectation over the perturbation is tr of the smoothed Hessian;
    no objective evaluations beyond the one already inside ``sample``.
    """
    if sample.sigma_used <= 0.0:
        raise ValueError("trace estimator undefined for sigma_used = 0")
    return float(sample.perturbation @ sample.gradient) / sample.sigma_used


def recover_amplitudes(phi_hat, ctx: ObjectiveContext):
    """Amplitude coefficients at a fixed phase estimate.

    Returns (rho_hat, b_hat): rho_hat is the real-constrained LS solution
    as a tuple of per-chirp arrays (the model defines rho as real), solved
    on the stacked real system [Re H; Im H] with the same ridge; b_hat is
    the unconstrained complex solution for diagnostics.
    """
    phi_hat = _check_phi(phi_hat, ctx)
    h = build_basis_matrix(phi_hat, ctx)
    fact = solve_amplitudes(h, ctx)
    m = h.shape[1]
    a_real = np.vstack([h.real, h.imag])
    y_real = np.concatenate([ctx.y.real, ctx.y.imag])
    if ctx.gamma != 0.0:
        a_real = np.vstack([a_real, np.sqrt(ctx.gamma) * np.eye(m)])
        y_real = np.concatenate([y_real, np.zeros(m)])
    rho_flat, _, rank, _ = np.linalg.lstsq(a_real, y_real, rcond=None)
    if rank < m:
        raise RankDeficiencyError("real-stacked amplitude system is rank deficient")
    rho = tuple(
        rho_flat[int(ctx.col_offsets[c]) : int(ctx.col_offsets[c + 1])].copy()
        for c in range(ctx.config.num_chirps)
    )
    return rho, fact.b_hat


class ProjectionObjective:
    """Callable-objective view of a context, for the samplers.

    Anything with ``dim``, ``value`` and ``value_and_grad`` can drive a
    chain; this is the production implementation backed by the kernel.
    ``in_support`` bounds the chain to phase vectors whose instantaneous
    frequency stays below Nyquist (the uniform-prior support of the
    estimation problem); outside it the model aliases and the objective
    carries no usable information.
    """

    _SUPPORT_MARGIN = 1.2

    def __init__(self, ctx: ObjectiveContext):
        self.ctx = ctx
        self.dim = ctx.dim
        cfg = ctx.config
        # coarse grid over the full observation window (priming contexts
        # still enforce the full-signal support)
        t = np.linspace(0.0, (cfg.num_samples - 1) / cfg.sample_rate, 65)
        p = np.arange(1, cfg.phase_order + 1)
        self._if_basis = p * t[:, None] ** (p - 1)  # (65, P)
        self._if_cap = self._SUPPORT_MARGIN * cfg.sample_rate / 2.0
        # coefficient box matching the diffused-initialization prior;
        # without it, short-prefix chains drift along IF-cancelling
        # coefficient combinations into extrapolation garbage
        self._first_lo = -self._SUPPORT_MARGIN * cfg.sample_rate / 20.0
        self._first_hi = self._SUPPORT_MARGIN * cfg.sample_rate / 2.0
        self._higher_cap = self._SUPPORT_MARGIN * cfg.sample_rate / 8.0

    def value(self, phi) -> float:
        return objective_value(phi, self.ctx)

    def value_and_grad(self, phi) -> tuple[float, np.ndarray]:
        return value_and_gradient(phi, self.ctx)

    def in_support(self, phi) -> bool:
        rows = np.asarray(phi, dtype=float).reshape(
            self.ctx.config.num_chirps, self.ctx.config.phase_order
        )
        if np.any(rows[:, 0] < self._first_lo) or np.any(rows[:, 0] > self._first_hi):
            return False
        if rows.shape[1] > 1 and np.abs(rows[:, 1:]).max() > self._higher_cap:
            return False
        worst = np.abs(self._if_basis @ rows.T).max()
        return bool(worst <= self._if_cap)
