"""Langevin Monte Carlo chains over the projection objective.

Three variants share one update loop and differ only in how the smoothing
level sigma evolves:

    LMC     sigma = 0 throughout (plain Langevin / MALA),
    NA-LMC  sigma follows a fixed stepwise-decreasing schedule,
    CG-LMC  sigma shrinks by mu_sigma * |trace-of-Hessian estimate|,
            clamped at sigma_min.

With sigma > 0 the drift gradient is evaluated at the Gaussian-perturbed
point theta + sigma*eps (the single-sample smoothed gradient); the same
eps feeds the Stein trace estimator.  The optional Metropolis-Hastings
step targets the unsmoothed pi ~ exp(-beta J), treating the perturbation
as part of the proposal.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from chirpest import objective as _objective
from chirpest.objective import ObjectiveContext, ProjectionObjective
from chirpest.signal import ChirpParams, max_instantaneous_frequency

__all__ = [
    "Variant",
    "PrimingConfig",
    "SamplerConfig",
    "ChainState",
    "ChainTrace",
    "lmc_propose",
    "mala_log_acceptance",
    "sigma_update",
    "na_lmc_sigma",
    "run_chain",
    "draw_initial_phi",
    "multistart_primed_init",
    "select_best_run",
]

# spawn keys for the independent RNG streams of one chain
_ROLE_EPS, _ROLE_XI, _ROLE_MH, _ROLE_INIT = 0, 1, 2, 3


class Variant(Enum):
    LMC = "LMC"
    NA_LMC = "NA-LMC"
    CG_LMC = "CG-LMC"

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, cls):
            return name
        key = str(name).upper().replace("_", "-")
        for v in cls:
            if v.value == key:
                return v
        raise ValueError(f"unknown sampler variant {name!r}")


@dataclass(frozen=True)
class PrimingConfig:
    """Multistart/priming settings.

    ``prefix_length`` of None selects ceil(N/4) of the target signal.
    ``priming_iters`` = 0 disables priming (raw draws are returned).
    """

    num_starts: int = 8
    priming_iters: int = 0
    prefix_length: int | None = None

    def __post_init__(self):
        if self.num_starts < 1:
            raise ValueError("num_starts must be >= 1")
        if self.priming_iters < 0:
            raise ValueError("priming_iters must be >= 0")
        if self.prefix_length is not None and self.prefix_length < 1:
            raise ValueError("prefix_length must be positive")


@dataclass(frozen=True)
class SamplerConfig:
    """Hyperparameters of one chain.

    ``anneal_schedule`` is a tuple of (sigma, iteration_count) pairs with
    strictly decreasing sigma levels; only NA-LMC reads it.  ``trace_ema``
    in (0, 1) smooths the Stein estimate before the sigma update (0 = raw
    single-sample estimate, the default).
    """

    step_size: float
    inverse_temperature: float
    sigma0: float = 0.0
    sigma_min: float = 0.0
    sigma_step: float = 0.0
    max_iters: int = 1000
    anneal_schedule: tuple[tuple[float, int], ...] = ()
    mh_enabled: bool = True
    priming: PrimingConfig = field(default_factory=PrimingConfig)
    seed: int = 0
    trace_ema: float = 0.0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.inverse_temperature <= 0:
            raise ValueError("inverse_temperature must be positive")
        if self.sigma0 < 0 or self.sigma_min < 0 or self.sigma_step < 0:
            raise ValueError("sigma0, sigma_min, sigma_step must be >= 0")
        if self.sigma_min > self.sigma0:
            raise ValueError("sigma_min must not exceed sigma0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        sched = tuple((float(s), int(k)) for s, k in self.anneal_schedule)
        object.__setattr__(self, "anneal_schedule", sched)
        levels = [s for s, _ in sched]
        if any(k <= 0 for _, k in sched):
            raise ValueError("anneal_schedule iteration counts must be positive")
        if any(b >= a for a, b in zip(levels, levels[1:])):
            raise ValueError("anneal_schedule sigma levels must strictly decrease")
        if any(s < 0 for s in levels):
            raise ValueError("anneal_schedule sigma levels must be >= 0")
        if not 0.0 <= self.trace_ema < 1.0:
            raise ValueError("trace_ema must be in [0, 1)")


@dataclass
class ChainState:
    phi: np.ndarray
    sigma: float
    iteration: int
    last_j: float
    last_trace_estimate: float


@dataclass
class ChainTrace:
    """Per-iteration chain record plus the final state.

    Row k describes the state *after* update k: ``phi[k]`` and ``j[k]``
    reflect the accept/reject outcome, ``sigma[k]`` and
    ``trace_hess[k]`` are the smoothing level and Stein estimate used
    during the update.
    """

    phi: np.ndarray          # (K, d)
    j: np.ndarray            # (K,)
    sigma: np.ndarray        # (K,)
    trace_hess: np.ndarray   # (K,)
    accepted: np.ndarray     # (K,) bool
    final_state: ChainState
    wall_time: float
    aborted: bool = False
    abort_reason: str = ""

    def __len__(self) -> int:
        return len(self.j)

    @property
    def iters(self) -> np.ndarray:
        return np.arange(len(self.j))

    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if len(self.accepted) else 0.0


def _chain_rngs(seed: int):
    ss = np.random.SeedSequence(seed)
    eps, xi, mh, _ = ss.spawn(4)
    return (
        np.random.default_rng(eps),
        np.random.default_rng(xi),
        np.random.default_rng(mh),
    )


def _derive_seed(seed: int, tag: int) -> int:
    """Stable integer sub-seed for a named role under a base seed."""
    return int(np.random.SeedSequence((seed, tag)).generate_state(1, dtype=np.uint64)[0])


def _as_objective(objective):
    if hasattr(objective, "value") and hasattr(objective, "value_and_grad"):
        return objective
    if isinstance(objective, ObjectiveContext):
        return ProjectionObjective(objective)
    raise TypeError(
        "objective must be an ObjectiveContext or expose value/value_and_grad"
    )


def lmc_propose(phi, grad, config: SamplerConfig, rng) -> np.ndarray:
    """One Euler-Maruyama step: phi - eta*grad + sqrt(2 eta/beta) xi."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    phi = np.asarray(phi, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient must be finite")
    noise_scale = math.sqrt(2.0 * config.step_size / config.inverse_temperature)
    xi = rng.standard_normal(phi.shape)
    return phi - config.step_size * grad + noise_scale * xi


def _log_q(dst, src, grad_src, eta, beta):
    # Gaussian drift kernel density of Eq.-16 moves, up to the constant
    diff = dst - (src - eta * grad_src)
    return -beta / (4.0 * eta) * float(diff @ diff)


def mala_log_acceptance(
    phi_old, phi_new, grad_old, grad_new, j_old, j_new, config: SamplerConfig
) -> float:
    """log of the Metropolis-Hastings ratio for the Langevin proposal.

    Target pi ~ exp(-beta J); proposal q(x'|x) = N(x - eta grad(x),
    (2 eta / beta) I).  Returns min(0, log ratio).
    """
    eta = config.step_size
    beta = config.inverse_temperature
    log_pi_ratio = -beta * (j_new - j_old)
    log_q_rev = _log_q(np.asarray(phi_old), np.asarray(phi_new),
                       np.asarray(grad_new), eta, beta)
    log_q_fwd = _log_q(np.asarray(phi_new), np.asarray(phi_old),
                       np.asarray(grad_old), eta, beta)
    return min(0.0, log_pi_ratio + log_q_rev - log_q_fwd)


def sigma_update(sigma: float, trace_estimate: float, config: SamplerConfig) -> float:
    """Curvature-driven shrink: max(sigma_min, sigma - mu*|trace|)."""
    return max(config.sigma_min, sigma - config.sigma_step * abs(trace_estimate))


def na_lmc_sigma(iteration: int, config: SamplerConfig) -> float:
    """Piecewise-constant sigma from the anneal schedule (tail held)."""
    if not config.anneal_schedule:
        raise ValueError("NA-LMC requires a nonempty anneal_schedule")
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    edge = 0
    for level, count in config.anneal_schedule:
        edge += count
        if iteration < edge:
            return level
    return config.anneal_schedule[-1][0]


def run_chain(variant, objective, init_phi, config: SamplerConfig) -> ChainTrace:
    """Run one chain; deterministic given config.seed.

    ``objective`` is an ObjectiveContext or any object with ``value`` /
    ``value_and_grad``.  Aborts (with the partial trace) if the objective
    turns non-finite.
    """
    variant = Variant.parse(variant)
    obj = _as_objective(objective)
    in_support = getattr(obj, "in_support", None)
    rng_eps, rng_xi, rng_mh = _chain_rngs(config.seed)

    phi = np.asarray(init_phi, dtype=np.float64).ravel().copy()
    if not np.all(np.isfinite(phi)):
        raise ValueError("initial phi must be finite")
    d = phi.shape[0]
    eta = config.step_size
    beta = config.inverse_temperature
    noise_scale = math.sqrt(2.0 * eta / beta)
    kmax = config.max_iters

    rec_phi = np.empty((kmax, d))
    rec_j = np.empty(kmax)
    rec_sigma = np.empty(kmax)
    rec_trace = np.empty(kmax)
    rec_accept = np.zeros(kmax, dtype=bool)

    if variant is Variant.CG_LMC:
        sigma = config.sigma0
    elif variant is Variant.NA_LMC:
        sigma = na_lmc_sigma(0, config)
    else:
        sigma = 0.0

    t_start = time.perf_counter()
    j_cur, grad_cur = obj.value_and_grad(phi)
    ema = 0.0
    aborted = False
    reason = ""
    n_done = 0

    for k in range(kmax):
        if variant is Variant.NA_LMC:
            sigma = na_lmc_sigma(k, config)
        sigma_used = sigma

        eps = rng_eps.standard_normal(d)
        if sigma_used == 0.0:
            if grad_cur is None:
                j_cur, grad_cur = obj.value_and_grad(phi)
            j_z, grad = j_cur, grad_cur
        else:
            j_z, grad = obj.value_and_grad(phi + sigma_used * eps)
        if not (np.isfinite(j_z) and np.all(np.isfinite(grad))):
            aborted, reason = True, f"non-finite objective at iteration {k}"
            break
        trace_est = float(eps @ grad) / sigma_used if sigma_used > 0.0 else 0.0

        xi = rng_xi.standard_normal(d)
        prop = phi - eta * grad + noise_scale * xi

        if in_support is not None and not in_support(prop):
            # out of the prior support (aliased model): zero target density
            accept = False
        else:
            if sigma_used == 0.0:
                j_prop, grad_prop = obj.value_and_grad(prop)
            else:
                j_prop = obj.value(prop)
                # reverse-move gradient reuses the same eps so sigma -> 0
                # degenerates exactly to plain MALA
                grad_prop = (
                    obj.value_and_grad(prop + sigma_used * eps)[1]
                    if config.mh_enabled
                    else None
                )
            if not np.isfinite(j_prop):
                aborted, reason = True, f"non-finite objective at iteration {k}"
                break

            if config.mh_enabled:
                log_alpha = mala_log_acceptance(
                    phi, prop, grad, grad_prop, j_cur, j_prop, config
                )
                accept = math.log(rng_mh.uniform()) < log_alpha
            else:
                accept = True

        if accept:
            phi = prop
            j_cur = j_prop
            grad_cur = grad_prop if sigma_used == 0.0 else None

        if variant is Variant.CG_LMC:
            if config.trace_ema > 0.0:
                ema = config.trace_ema * ema + (1.0 - config.trace_ema) * trace_est
                sigma = sigma_update(sigma_used, ema, config)
            else:
                sigma = sigma_update(sigma_used, trace_est, config)

        rec_phi[k] = phi
        rec_j[k] = j_cur
        rec_sigma[k] = sigma_used
        rec_trace[k] = trace_est
        rec_accept[k] = accept
        n_done = k + 1

    wall = time.perf_counter() - t_start
    state = ChainState(
        phi=phi.copy(),
        sigma=sigma,
        iteration=n_done,
        last_j=j_cur,
        last_trace_estimate=float(rec_trace[n_done - 1]) if n_done else 0.0,
    )
    return ChainTrace(
        phi=rec_phi[:n_done].copy(),
        j=rec_j[:n_done].copy(),
        sigma=rec_sigma[:n_done].copy(),
        trace_hess=rec_trace[:n_done].copy(),
        accepted=rec_accept[:n_done].copy(),
        final_state=state,
        wall_time=wall,
        aborted=aborted,
        abort_reason=reason,
    )


def draw_initial_phi(rng: np.random.Generator, ctx: ObjectiveContext) -> np.ndarray:
    """One diffused random start.

    First-order coefficients are uniform on [0, f_s/2]; higher orders
    uniform on [-f_s/8, f_s/8], redrawn (shrinking the box if necessary)
    until the instantaneous-frequency bound f_s/2 holds.
    """
    cfg = ctx.config
    fs = cfg.sample_rate
    box = fs / 8.0
    for attempt in range(200):
        phi = np.empty((cfg.num_chirps, cfg.phase_order))
        phi[:, 0] = rng.uniform(0.0, fs / 2.0, cfg.num_chirps)
        if cfg.phase_order > 1:
            phi[:, 1:] = rng.uniform(-box, box, (cfg.num_chirps, cfg.phase_order - 1))
        params = ChirpParams(
            phase_coeffs=phi,
            amp_coeffs=tuple(np.zeros(a + 1) for a in cfg.amp_orders),
        )
        if max_instantaneous_frequency(params, cfg) <= fs / 2.0:
            return phi.ravel()
        if attempt and attempt % 40 == 0:
            box *= 0.5
    raise RuntimeError("could not draw an initialization inside the IF bound")


def multistart_primed_init(
    ctx: ObjectiveContext, config: SamplerConfig
) -> list[np.ndarray]:
    """Diffused random starts, primed on a signal prefix, ranked by J.

    Start s draws from seed config.seed + s, then runs priming_iters of
    CG-LMC against the prefix-truncated context; endpoints are returned
    sorted by their full-signal objective (best first).
    """
    prim = config.priming
    starts = []
    for s in range(prim.num_starts):
        seed_s = config.seed + s
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed_s, spawn_key=(_ROLE_INIT,))
        )
        starts.append((seed_s, draw_initial_phi(rng, ctx)))

    if prim.priming_iters > 0:
        n = ctx.num_samples
        prefix_len = prim.prefix_length or math.ceil(n / 4)
        prefix_len = max(prefix_len, ctx.config.num_basis_columns)
        # ladder of shorter-length signals: prefix, 2*prefix, ... < N.
        # Short prefixes have broad basins that capture the low-order
        # phase parameters; each doubling hands a tighter basin a start
        # that is already inside it.  The full-length signal is handled
        # by the main chain afterwards.
        rungs = []
        length = prefix_len
        while length <= n // 2:
            rungs.append(length)
            length *= 2
        rungs = rungs or [min(prefix_len, n)]
        # wall-time-balanced budgets: iterations per rung fall off like
        # 1/length, giving the cheap exploratory first rung the bulk of
        # the steps and the refinement rungs a few thousand each
        weights = [rungs[0] / r for r in rungs]
        total_w = sum(weights)
        budgets = [
            max(1, int(round(prim.priming_iters * w / total_w))) for w in weights
        ]
        endpoints = [phi0 for _, phi0 in starts]
        for r_ix, length in enumerate(rungs):
            pobj = ProjectionObjective(_objective.prefix_context(ctx, length))
            # prefix objectives are shallower, wider, and smaller in
            # magnitude, so each rung reweights the chain: basin curvature
            # falls like (length/N)^3, so the step grows by ratio^3 (spike
            # jumps then match the widened lobes); smoothing follows the
            # lobe width (ratio); temperature drops by ratio for mobility
            # across the prefix's shallow ripples; the curvature-trace
            # step compensates for both the smaller traces and wider
            # sigma range (ratio^2.5 keeps the shrink rate comparable).
            ratio = float(n) / float(length)
            for s, (seed_s, _) in enumerate(starts):
                pconf = replace(
                    config,
                    seed=_derive_seed(seed_s, r_ix + 1),
                    max_iters=budgets[r_ix],
                    step_size=config.step_size * ratio**3,
                    sigma0=config.sigma0 * ratio,
                    sigma_min=config.sigma_min * ratio,
                    sigma_step=config.sigma_step * ratio**2.5,
                    inverse_temperature=config.inverse_temperature / ratio,
                )
                trace = run_chain(Variant.CG_LMC, pobj, endpoints[s], pconf)
                endpoints[s] = trace.final_state.phi
    else:
        endpoints = [phi0 for _, phi0 in starts]

    full = ProjectionObjective(ctx)
    ranked = sorted(
        range(len(endpoints)), key=lambda i: (full.value(endpoints[i]), i)
    )
    return [endpoints[i] for i in ranked]


def select_best_run(traces, objective) -> tuple[np.ndarray, ChainTrace]:
    """Final state with the lowest full-signal J; ties keep the first."""
    if not traces:
        raise ValueError("need at least one chain trace")
    obj = _as_objective(objective)
    best_i = None
    best_j = math.inf
    for i, trace in enumerate(traces):
        j = obj.value(trace.final_state.phi)
        if not np.isfinite(j):
            continue
        if j < best_j:
            best_i, best_j = i, j
    if best_i is None:
        raise ValueError("all chains ended at non-finite objectives")
    return traces[best_i].final_state.phi.copy(), traces[best_i]
