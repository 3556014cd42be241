"""Command-line entry points.

Subcommands:
    simulate    synthesize a (noisy) mixture and write a signal file
    estimate    estimate chirp parameters from a signal file
    benchmark   run a full experiment spec (the study behind the tables)
    gradcheck   finite-difference audit of the analytic gradient

Exit codes: 0 success, 1 validation/estimation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from chirpest import harness, io
from chirpest.io import SpecError
from chirpest.objective import make_context, objective_value, value_and_gradient
from chirpest.samplers import Variant, draw_initial_phi
from chirpest.signal import (
    add_complex_gaussian_noise,
    snr_to_noise_variance,
    synthesize_mixture,
)


def _load_spec(arg: str) -> io.ExperimentSpec:
    return io.load_experiment(io.resolve_config_path(arg))


def _cmd_simulate(args) -> int:
    spec = _load_spec(args.config)
    if spec.truth is None:
        raise SpecError("simulate needs ground-truth chirp parameters in the config")
    clean = synthesize_mixture(spec.truth, spec.mixture)
    provenance = {
        "mixture": io.spec_to_dict(spec)["mixture"],
        "snr_db": args.snr,
        "noise_seed": args.seed if args.snr is not None else None,
    }
    if args.snr is None:
        out_sig = clean
    else:
        variance = snr_to_noise_variance(clean, args.snr)
        out_sig = add_complex_gaussian_noise(clean, variance, args.seed)
        provenance["noise_variance"] = variance
    io.write_signal(args.out, out_sig, provenance=provenance, seed=args.seed)
    print(f"wrote {len(out_sig)} samples to {args.out}")
    return 0


def _model_from_provenance(header: dict):
    prov = header.get("provenance") or {}
    mix = prov.get("mixture")
    if not mix:
        raise SpecError(
            "signal file carries no mixture provenance; pass --config with "
            "the model dimensions"
        )
    return mix


def _cmd_estimate(args) -> int:
    signal, header = io.read_signal(args.signal)
    if args.config is not None:
        spec = _load_spec(args.config)
        mix_dict = io.spec_to_dict(spec)["mixture"]
        samplers = spec.samplers
    else:
        mix_dict = _model_from_provenance(header)
        samplers = {}
    algo = Variant.parse(args.algo).value

    # model dimensions only; any ground-truth coefficients are ignored
    from chirpest.signal import MixtureConfig

    config = MixtureConfig(
        num_samples=len(signal),
        sample_rate=signal.sample_rate,
        num_chirps=int(mix_dict["num_chirps"]),
        phase_order=int(mix_dict["phase_order"]),
        amp_orders=tuple(mix_dict["amp_orders"]),
        regularization=mix_dict.get("regularization"),
    )
    sconf = samplers.get(algo) or io.default_sampler_config(algo, len(signal))
    sconf = replace(sconf, seed=harness.run_seed_for(args.seed, 0))

    ctx = make_context(signal, config)
    est = harness.estimate_from_context(ctx, algo, sconf)
    n_c, p = config.num_chirps, config.phase_order
    result = {
        "algorithm": algo,
        "seed": args.seed,
        "final_J": est.final_j,
        "phi_hat": est.phi_hat.reshape(n_c, p).tolist(),
        "rho_hat": [row.tolist() for row in est.rho_hat],
        "b_hat_re": est.b_hat.real.tolist(),
        "b_hat_im": est.b_hat.imag.tolist(),
        "chains": len(est.traces),
        "best_chain": est.best_chain,
        "signal": str(args.signal),
    }
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        print(f"wrote estimate to {args.out}")
    else:
        print(text)
    return 0


def _cmd_benchmark(args) -> int:
    spec = _load_spec(args.config)
    if args.seed is not None:
        spec = replace(spec, base_seed=args.seed)
    out_dir = args.out if args.out is not None else spec.output_dir
    spec = replace(spec, output_dir=str(out_dir))
    harness.run_experiment(spec)
    print(f"experiment '{spec.name}' complete; outputs in {out_dir}")
    return 0


def _cmd_gradcheck(args) -> int:
    spec = _load_spec(args.config)
    snr = args.snr if args.snr is not None else (
        spec.snr_db[0] if spec.snr_db else None
    )
    if spec.truth is None:
        signal, _ = io.read_signal(spec.signal_path)
    else:
        signal = synthesize_mixture(spec.truth, spec.mixture)
        if snr is not None:
            variance = snr_to_noise_variance(signal, snr)
            signal = add_complex_gaussian_noise(signal, variance, args.seed)
    ctx = make_context(signal, spec.mixture)

    rng = np.random.default_rng(args.seed)
    delta = 1e-5
    worst = 0.0
    for _ in range(args.points):
        phi = draw_initial_phi(rng, ctx)
        _, grad = value_and_gradient(phi, ctx)
        fd = np.empty_like(grad)
        for i in range(len(phi)):
            step = np.zeros_like(phi)
            step[i] = delta
            fd[i] = (
                objective_value(phi + step, ctx) - objective_value(phi - step, ctx)
            ) / (2 * delta)
        floor = 1e-12 + 1e-8 * float(np.max(np.abs(fd)))
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), floor)
        worst = max(worst, float(rel.max()))
    print(f"gradcheck: {args.points} points, dims {ctx.dim}, "
          f"max relative error {worst:.3e} (tolerance 1e-4)")
    return 0 if worst <= 1e-4 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chirpest",
        description="Polynomial-phase chirp mixture estimation via "
        "Langevin Monte Carlo",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a mixture signal file")
    p.add_argument("--config", required=True,
                   help="experiment spec (path or bundled name)")
    p.add_argument("--snr", type=float, default=None,
                   help="target SNR in dB (omit for a noiseless signal)")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--out", required=True, help="output signal file")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("estimate", help="estimate parameters from a signal file")
    p.add_argument("signal", help="signal file (chirpest-signal-v1)")
    p.add_argument("--config", default=None,
                   help="experiment spec for model dims and sampler settings "
                        "(default: model from the signal file provenance)")
    p.add_argument("--algo", default="CG-LMC",
                   help="LMC, NA-LMC, or CG-LMC (default CG-LMC)")
    p.add_argument("--seed", type=int, default=0, help="estimation base seed")
    p.add_argument("--out", default=None, help="write the estimate JSON here")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("benchmark", help="run a full experiment spec")
    p.add_argument("--config", required=True,
                   help="experiment spec (path or bundled name)")
    p.add_argument("--seed", type=int, default=None, help="override base_seed")
    p.add_argument("--out", default=None, help="override output directory")
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("gradcheck",
                       help="audit the analytic gradient against finite differences")
    p.add_argument("--config", required=True,
                   help="experiment spec (path or bundled name)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", type=float, default=None,
                   help="SNR for the audited instance (default: first in spec)")
    p.add_argument("--points", type=int, default=20)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main():  # console_scripts hook
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
