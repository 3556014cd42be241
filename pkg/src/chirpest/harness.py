"""Experiment engine: seeded multi-run estimation and reporting.

One *cell* is (algorithm, snr, run).  Each run gets a fresh noise
realization, a multistart primed initialization, one chain per start, and
best-run selection; statistics (mean, SD with n-1 denominator, MAE) are
computed per phase parameter across runs.

Seed derivation (documented so independent implementations agree):

    run_seed(r)   = base_seed * 10**6 + r * 10**3
    chain s       -> run_seed(r) + s
    noise         -> run_seed(r) + 999

Outputs under the spec's output directory:

    resolved_spec.json   echoed config; feeding it back reproduces the run
    summary.json         stats + per-run records (byte-stable across reruns)
    timings.json         wall-clock seconds (kept out of summary.json)
    traces/*.csv         per-chain records: iter,J,sigma,trace_hess,accepted,phi_*
    plots/*.csv          per-chain J / sigma / trace-vs-iteration series
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import permutations
from pathlib import Path

import numpy as np

from chirpest import objective as _objective
from chirpest.io import ExperimentSpec, read_signal, spec_to_dict
from chirpest.objective import make_context, recover_amplitudes
from chirpest.samplers import (
    ChainTrace,
    SamplerConfig,
    Variant,
    multistart_primed_init,
    run_chain,
    select_best_run,
)
from chirpest.signal import (
    ChirpParams,
    ComplexSignal,
    MixtureConfig,
    add_complex_gaussian_noise,
    snr_to_noise_variance,
    synthesize_mixture,
)

NOISE_LANE = 999

_ALGO_SLUG = {"LMC": "lmc", "NA-LMC": "na_lmc", "CG-LMC": "cg_lmc"}


def run_seed_for(base_seed: int, run: int) -> int:
    return base_seed * 10**6 + run * 10**3


def snr_tag(snr_db: float) -> str:
    return f"{snr_db:g}".replace(".", "p").replace("-", "m")


def parameter_names(config: MixtureConfig) -> list[str]:
    return [
        f"phi_{c + 1}_{p + 1}"
        for c in range(config.num_chirps)
        for p in range(config.phase_order)
    ]


@dataclass
class RunEstimate:
    """Outcome of one estimation run (one noise realization)."""

    phi_hat: np.ndarray
    rho_hat: tuple
    b_hat: np.ndarray
    final_j: float
    traces: list[ChainTrace]
    best_chain: int
    iterations: int
    wall_time: float


def estimate_from_context(ctx, algorithm, config: SamplerConfig) -> RunEstimate:
    """Multistart chains on a prepared context, then best-run selection."""
    variant = Variant.parse(algorithm)
    t0 = time.perf_counter()
    inits = multistart_primed_init(ctx, config)
    traces = []
    for s, phi0 in enumerate(inits):
        traces.append(
            run_chain(variant, ctx, phi0, replace(config, seed=config.seed + s))
        )
    phi_hat, best = select_best_run(traces, ctx)
    rho_hat, b_hat = recover_amplitudes(phi_hat, ctx)
    return RunEstimate(
        phi_hat=phi_hat,
        rho_hat=rho_hat,
        b_hat=b_hat,
        final_j=best.final_state.last_j,
        traces=traces,
        best_chain=traces.index(best),
        iterations=int(sum(len(t) for t in traces)),
        wall_time=time.perf_counter() - t0,
    )


def align_to_truth(phi_hat, truth: ChirpParams, amp_orders) -> tuple[np.ndarray, tuple]:
    """Permute estimated chirp blocks to best match the ground truth.

    Chirp labels are exchangeable in the mixture model, so estimates are
    aligned (minimal total squared phase difference) before statistics.
    Only permutations preserving the amplitude orders are considered.
    """
    n_c, p_order = truth.phase_coeffs.shape
    est = np.asarray(phi_hat, dtype=float).reshape(n_c, p_order)
    best_perm = None
    best_cost = math.inf
    for perm in permutations(range(n_c)):
        if any(amp_orders[perm[c]] != amp_orders[c] for c in range(n_c)):
            continue
        cost = float(np.sum((est[list(perm)] - truth.phase_coeffs) ** 2))
        if cost < best_cost:
            best_cost, best_perm = cost, perm
    return est[list(best_perm)].ravel(), best_perm


def compute_statistics(estimates, truth_flat=None) -> dict:
    """Per-parameter sample mean, SD (n-1), and MAE against the truth.

    A single run gets SD = 0 by convention.  With no truth the MAE and
    truth fields are omitted.
    """
    arr = np.asarray(list(estimates), dtype=float)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("need at least one estimate")
    n = arr.shape[0]
    mean = arr.mean(axis=0)
    sd = arr.std(axis=0, ddof=1) if n > 1 else np.zeros(arr.shape[1])
    out = {}
    for i in range(arr.shape[1]):
        rec = {"mean": float(mean[i]), "sd": float(sd[i]), "count": n}
        if truth_flat is not None:
            rec["truth"] = float(truth_flat[i])
            rec["mae"] = float(np.mean(np.abs(arr[:, i] - truth_flat[i])))
        out[i] = rec
    return out


# ---------------------------------------------------------------------------
# experiment driver


def _build_context(spec: ExperimentSpec, snr_db, run: int):
    """Signal for one cell: synthesized noisy mixture or ingested file."""
    if spec.truth is not None:
        clean = synthesize_mixture(spec.truth, spec.mixture)
        noise_seed = run_seed_for(spec.base_seed, run) + NOISE_LANE
        variance = snr_to_noise_variance(clean, snr_db)
        noisy = add_complex_gaussian_noise(clean, variance, noise_seed)
        return make_context(noisy, spec.mixture), noise_seed
    signal, _ = read_signal(spec.signal_path)
    if len(signal) != spec.mixture.num_samples:
        raise ValueError(
            f"ingested signal has {len(signal)} samples, spec says "
            f"{spec.mixture.num_samples}"
        )
    return make_context(signal, spec.mixture), None


def _run_cell(spec: ExperimentSpec, algorithm, snr_db, run: int) -> dict:
    t0 = time.perf_counter()
    run_seed = run_seed_for(spec.base_seed, run)
    cell = {
        "algorithm": algorithm,
        "snr_db": snr_db,
        "run": run,
        "run_seed": run_seed,
        "estimate": None,
        "error": None,
        "noise_seed": None,
        "wall_time": 0.0,
    }
    try:
        ctx, noise_seed = _build_context(spec, snr_db, run)
        cell["noise_seed"] = noise_seed
        config = replace(spec.samplers[algorithm], seed=run_seed)
        cell["estimate"] = estimate_from_context(ctx, algorithm, config)
    except Exception as exc:  # per-run failures are recorded, not fatal
        cell["error"] = f"{type(exc).__name__}: {exc}"
    cell["wall_time"] = time.perf_counter() - t0
    return cell


def _max_workers() -> int:
    raw = os.environ.get("CHIRPEST_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_experiment(spec: ExperimentSpec, output_dir=None) -> dict:
    """Execute every cell, write outputs, and return the summary dict.

    Fully deterministic given the spec (wall-clock goes to a separate
    timings file).  Cells may run in parallel (CHIRPEST_THREADS); the
    aggregation order is fixed by cell index, not completion order.
    """
    out_dir = Path(output_dir if output_dir is not None else spec.output_dir)
    cells_ix = [
        (a, s, r)
        for a in spec.algorithms
        for s in (spec.snr_db or (None,))
        for r in range(spec.runs_per_cell)
    ]
    workers = _max_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_cell, spec, a, s, r) for a, s, r in cells_ix]
            cells = [f.result() for f in futures]
    else:
        cells = [_run_cell(spec, a, s, r) for a, s, r in cells_ix]

    for a in spec.algorithms:
        for s in spec.snr_db or (None,):
            group = [c for c in cells if c["algorithm"] == a and c["snr_db"] == s]
            if all(c["error"] is not None for c in group):
                raise RuntimeError(
                    f"every run of cell ({a}, snr={s}) failed; first error: "
                    f"{group[0]['error']}"
                )

    summary = build_summary(spec, cells)
    write_outputs(cells, summary, spec, out_dir)
    return summary


def build_summary(spec: ExperimentSpec, cells) -> dict:
    names = parameter_names(spec.mixture)
    truth_flat = spec.truth.flat_phase() if spec.truth is not None else None
    results = {}
    for a in spec.algorithms:
        results[a] = {}
        for s in spec.snr_db or (None,):
            group = [c for c in cells if c["algorithm"] == a and c["snr_db"] == s]
            runs_out = []
            aligned = []
            for c in sorted(group, key=lambda c: c["run"]):
                rec = {
                    "run": c["run"],
                    "run_seed": c["run_seed"],
                    "noise_seed": c["noise_seed"],
                    "error": c["error"],
                }
                est: RunEstimate | None = c["estimate"]
                if est is not None:
                    if spec.truth is not None:
                        phi_aligned, perm = align_to_truth(
                            est.phi_hat, spec.truth, spec.mixture.amp_orders
                        )
                        rec["chirp_permutation"] = list(perm)
                    else:
                        phi_aligned, perm = est.phi_hat, tuple(
                            range(spec.mixture.num_chirps)
                        )
                    aligned.append(phi_aligned)
                    n_c, p = spec.mixture.num_chirps, spec.mixture.phase_order
                    rec["phi_hat"] = phi_aligned.reshape(n_c, p).tolist()
                    rec["rho_hat"] = [
                        est.rho_hat[perm[c2]].tolist() for c2 in range(n_c)
                    ]
                    rec["b_hat_re"] = est.b_hat.real.tolist()
                    rec["b_hat_im"] = est.b_hat.imag.tolist()
                    rec["final_J"] = est.final_j
                    rec["iterations"] = est.iterations
                    rec["best_chain"] = est.best_chain
                    rec["chain_final_J"] = [
                        t.final_state.last_j for t in est.traces
                    ]
                runs_out.append(rec)
            key = snr_tag(s) if s is not None else "ingested"
            entry = {"runs": runs_out}
            if aligned:
                stats = compute_statistics(aligned, truth_flat)
                entry["parameters"] = {
                    names[i]: stats[i] for i in range(len(names))
                }
            results[a][key] = entry
    return {
        "schema": "chirpest-summary-v1",
        "spec": spec_to_dict(spec),
        "results": results,
    }


# ---------------------------------------------------------------------------
# output files


def _fmt(x) -> str:
    return repr(float(x))


def write_trace_csv(path: Path, trace: ChainTrace, config: MixtureConfig):
    header = ["iter", "J", "sigma", "trace_hess", "accepted"]
    header += parameter_names(config)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for k in range(len(trace)):
            row = [
                k,
                _fmt(trace.j[k]),
                _fmt(trace.sigma[k]),
                _fmt(trace.trace_hess[k]),
                int(trace.accepted[k]),
            ]
            row += [_fmt(v) for v in trace.phi[k]]
            w.writerow(row)


def _write_series_csv(path: Path, name: str, values):
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["iter", name])
        for k, v in enumerate(values):
            w.writerow([k, _fmt(v)])


def write_outputs(cells, summary: dict, spec: ExperimentSpec, out_dir: Path):
    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    (out_dir / "plots").mkdir(parents=True, exist_ok=True)

    for c in cells:
        est: RunEstimate | None = c["estimate"]
        if est is None:
            continue
        tag = snr_tag(c["snr_db"]) if c["snr_db"] is not None else "ingested"
        base = f"{_ALGO_SLUG[c['algorithm']]}_snr{tag}_run{c['run']}"
        for s, trace in enumerate(est.traces):
            stem = f"{base}_chain{s}"
            write_trace_csv(out_dir / "traces" / f"{stem}.csv", trace, spec.mixture)
            _write_series_csv(out_dir / "plots" / f"{stem}_J.csv", "J", trace.j)
            _write_series_csv(
                out_dir / "plots" / f"{stem}_sigma.csv", "sigma", trace.sigma
            )
            _write_series_csv(
                out_dir / "plots" / f"{stem}_trace_hess.csv",
                "trace_hess",
                trace.trace_hess,
            )

    (out_dir / "resolved_spec.json").write_text(
        json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    timings = {}
    for c in cells:
        tag = snr_tag(c["snr_db"]) if c["snr_db"] is not None else "ingested"
        timings.setdefault(c["algorithm"], {}).setdefault(tag, []).append(
            round(c["wall_time"], 3)
        )
    (out_dir / "timings.json").write_text(
        json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
