"""File formats: signal files and experiment specs.

Signal file (``chirpest-signal-v1``): a one-line JSON header followed by
plain-text ``re,im`` columns, one sample per row.  Text floats keep the
format diffable and portable across languages:

    {"schema": "chirpest-signal-v1", "num_samples": 4, "sample_rate": ...}
    re,im
    1.0,0.0
    ...

Experiment spec (``chirpest-experiment-v1``): JSON describing the mixture
(ground truth or an ingested signal path), SNR grid, algorithms, run
count, seeds, and per-algorithm sampler settings.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from chirpest.samplers import PrimingConfig, SamplerConfig, Variant
from chirpest.signal import (
    ChirpParams,
    ComplexSignal,
    MixtureConfig,
    max_instantaneous_frequency,
)
from chirpest import objective as _objective

SIGNAL_SCHEMA = "chirpest-signal-v1"
EXPERIMENT_SCHEMA = "chirpest-experiment-v1"

ALGORITHMS = tuple(v.value for v in Variant)


class SpecError(ValueError):
    """An experiment/signal file failed validation."""


# ---------------------------------------------------------------------------
# signal files


def write_signal(path, signal: ComplexSignal, provenance: dict | None = None,
                 seed: int | None = None):
    """Write a signal file; floats use shortest round-trip repr."""
    header = {
        "schema": SIGNAL_SCHEMA,
        "num_samples": len(signal),
        "sample_rate": signal.sample_rate,
        "seed": seed,
        "provenance": provenance or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        f.write("re,im\n")
        for z in signal.samples:
            f.write(f"{z.real!r},{z.imag!r}\n")


def read_signal(path) -> tuple[ComplexSignal, dict]:
    """Read a signal file back; returns (signal, header)."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as f:
        try:
            header = json.loads(f.readline())
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: bad JSON header: {exc}") from exc
        if header.get("schema") != SIGNAL_SCHEMA:
            raise SpecError(f"{path}: not a {SIGNAL_SCHEMA} file")
        cols = f.readline().strip()
        if cols != "re,im":
            raise SpecError(f"{path}: expected 're,im' column header, got {cols!r}")
        data = np.loadtxt(f, delimiter=",", ndmin=2)
    n = int(header["num_samples"])
    if data.shape != (n, 2):
        raise SpecError(
            f"{path}: header says {n} samples, file has {data.shape[0]}"
        )
    samples = data[:, 0] + 1j * data[:, 1]
    return ComplexSignal(samples, float(header["sample_rate"])), header


# ---------------------------------------------------------------------------
# experiment specs


@dataclass(frozen=True)
class ExperimentSpec:
    """Validated, fully-defaulted description of one benchmark study."""

    name: str
    mixture: MixtureConfig
    truth: ChirpParams | None
    signal_path: str | None
    snr_db: tuple[float, ...]
    algorithms: tuple[str, ...]
    runs_per_cell: int
    base_seed: int
    samplers: dict  # algorithm name -> SamplerConfig
    output_dir: str

    @property
    def num_cells(self) -> int:
        return len(self.algorithms) * len(self.snr_db) * self.runs_per_cell


def default_sampler_config(algorithm, num_samples: int = 128) -> SamplerConfig:
    """Shipped defaults, tuned once on the single-sinusoid smoke problem.

    Bundled experiment files override these; they are starting points,
    not per-experiment calibrations.
    """
    algorithm = Variant.parse(algorithm)
    priming = PrimingConfig(num_starts=6, priming_iters=400, prefix_length=None)
    base = dict(
        step_size=2e-5,
        inverse_temperature=2.0,
        max_iters=2000,
        mh_enabled=True,
        priming=priming,
        seed=0,
    )
    if algorithm is Variant.LMC:
        return SamplerConfig(**base)
    if algorithm is Variant.NA_LMC:
        return SamplerConfig(
            **base,
            sigma0=8.0,
            anneal_schedule=((8.0, 500), (4.0, 500), (2.0, 300),
                             (1.0, 300), (0.25, 200), (0.05, 200)),
        )
    return SamplerConfig(
        **base, sigma0=8.0, sigma_min=0.02, sigma_step=2e-5,
    )


def _require(mapping, key, path, kind=None):
    if key not in mapping:
        raise SpecError(f"{path}: missing required field {key!r}")
    value = mapping[key]
    if kind is not None and not isinstance(value, kind):
        raise SpecError(f"{path}: field {key!r} has wrong type "
                        f"({type(value).__name__})")
    return value


def _parse_mixture(d: dict, where: str) -> tuple[MixtureConfig, ChirpParams | None]:
    try:
        config = MixtureConfig(
            num_samples=int(_require(d, "num_samples", where)),
            sample_rate=float(_require(d, "sample_rate", where)),
            num_chirps=int(_require(d, "num_chirps", where)),
            phase_order=int(_require(d, "phase_order", where)),
            amp_orders=tuple(_require(d, "amp_orders", where, list)),
            regularization=(
                None if d.get("regularization") is None
                else float(d["regularization"])
            ),
        )
    except ValueError as exc:
        raise SpecError(f"{where}: {exc}") from exc
    truth = None
    if "phase_coeffs" in d:
        try:
            truth = ChirpParams(
                phase_coeffs=np.asarray(d["phase_coeffs"], dtype=float),
                amp_coeffs=tuple(
                    np.asarray(row, dtype=float)
                    for row in _require(d, "amp_coeffs", where, list)
                ),
            )
        except ValueError as exc:
            raise SpecError(f"{where}: bad chirp parameters: {exc}") from exc
        if not truth.matches(config):
            raise SpecError(f"{where}: chirp parameter shapes do not match "
                            "the mixture dimensions")
        max_if = max_instantaneous_frequency(truth, config)
        nyquist = config.sample_rate / 2.0
        if max_if > nyquist:
            raise SpecError(
                f"{where}: max instantaneous frequency {max_if:.1f} Hz "
                f"exceeds f_s/2 = {nyquist:.1f} Hz"
            )
    return config, truth


def _parse_sampler(d: dict, where: str, num_samples: int) -> SamplerConfig:
    d = dict(d)
    prim = d.pop("priming", {})
    priming = PrimingConfig(
        num_starts=int(prim.get("num_starts", 6)),
        priming_iters=int(prim.get("priming_iters", 0)),
        prefix_length=(
            None if prim.get("prefix_length") is None
            else int(prim["prefix_length"])
        ),
    )
    if priming.prefix_length is None and priming.priming_iters > 0:
        priming = PrimingConfig(
            num_starts=priming.num_starts,
            priming_iters=priming.priming_iters,
            prefix_length=math.ceil(num_samples / 4),
        )
    sched = tuple(
        (float(s), int(k)) for s, k in d.pop("anneal_schedule", ())
    )
    try:
        return SamplerConfig(
            step_size=float(_require(d, "step_size", where)),
            inverse_temperature=float(_require(d, "inverse_temperature", where)),
            sigma0=float(d.get("sigma0", 0.0)),
            sigma_min=float(d.get("sigma_min", 0.0)),
            sigma_step=float(d.get("sigma_step", 0.0)),
            max_iters=int(d.get("max_iters", 1000)),
            anneal_schedule=sched,
            mh_enabled=bool(d.get("mh_enabled", True)),
            priming=priming,
            seed=int(d.get("seed", 0)),
            trace_ema=float(d.get("trace_ema", 0.0)),
        )
    except ValueError as exc:
        raise SpecError(f"{where}: {exc}") from exc


def load_experiment(source) -> ExperimentSpec:
    """Parse and validate an experiment spec (path, JSON text, or dict).

    All defaults are filled in; ``spec_to_dict`` of the result reproduces
    the run exactly when loaded again.
    """
    if isinstance(source, dict):
        raw, where = source, "<dict>"
    else:
        path = Path(source)
        where = str(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise SpecError(f"{where}: no such file") from None
        except json.JSONDecodeError as exc:
            raise SpecError(
                f"{where}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}"
            ) from exc

    schema = raw.get("schema")
    if schema != EXPERIMENT_SCHEMA:
        raise SpecError(f"{where}: schema {schema!r} is not {EXPERIMENT_SCHEMA}")

    mixture, truth = _parse_mixture(_require(raw, "mixture", where, dict), where)
    signal_path = raw.get("signal_path")
    if truth is None and signal_path is None:
        raise SpecError(f"{where}: need ground-truth chirp parameters or a "
                        "signal_path to estimate from")

    snr_raw = raw.get("snr_db", [])
    snr_db = tuple(float(s) for s in snr_raw)
    if truth is not None and not snr_db:
        raise SpecError(f"{where}: snr_db list must not be empty")

    algorithms = tuple(
        Variant.parse(a).value for a in raw.get("algorithms", ALGORITHMS)
    )
    if not algorithms:
        raise SpecError(f"{where}: algorithms list must not be empty")

    runs = int(raw.get("runs_per_cell", 1))
    if runs < 1:
        raise SpecError(f"{where}: runs_per_cell must be >= 1")
    base_seed = int(raw.get("base_seed", 0))
    if base_seed < 0:
        raise SpecError(f"{where}: base_seed must be >= 0")

    sampler_raw = raw.get("sampler", {})
    samplers = {}
    for algo in algorithms:
        if algo in sampler_raw:
            samplers[algo] = _parse_sampler(
                sampler_raw[algo], f"{where}:sampler.{algo}", mixture.num_samples
            )
        else:
            samplers[algo] = default_sampler_config(algo, mixture.num_samples)

    # echo-friendly resolved values
    if mixture.regularization is None:
        mixture = MixtureConfig(
            num_samples=mixture.num_samples,
            sample_rate=mixture.sample_rate,
            num_chirps=mixture.num_chirps,
            phase_order=mixture.phase_order,
            amp_orders=mixture.amp_orders,
            regularization=_objective.default_regularization(mixture),
        )

    return ExperimentSpec(
        name=str(raw.get("name", "experiment")),
        mixture=mixture,
        truth=truth,
        signal_path=signal_path,
        snr_db=snr_db,
        algorithms=algorithms,
        runs_per_cell=runs,
        base_seed=base_seed,
        samplers=samplers,
        output_dir=str(raw.get("output_dir", "out")),
    )


def sampler_to_dict(c: SamplerConfig) -> dict:
    return {
        "step_size": c.step_size,
        "inverse_temperature": c.inverse_temperature,
        "sigma0": c.sigma0,
        "sigma_min": c.sigma_min,
        "sigma_step": c.sigma_step,
        "max_iters": c.max_iters,
        "anneal_schedule": [[s, k] for s, k in c.anneal_schedule],
        "mh_enabled": c.mh_enabled,
        "priming": {
            "num_starts": c.priming.num_starts,
            "priming_iters": c.priming.priming_iters,
            "prefix_length": c.priming.prefix_length,
        },
        "trace_ema": c.trace_ema,
    }


def spec_to_dict(spec: ExperimentSpec) -> dict:
    """Round-trippable echo of a resolved spec (provenance record)."""
    mix = {
        "num_samples": spec.mixture.num_samples,
        "sample_rate": spec.mixture.sample_rate,
        "num_chirps": spec.mixture.num_chirps,
        "phase_order": spec.mixture.phase_order,
        "amp_orders": list(spec.mixture.amp_orders),
        "regularization": spec.mixture.regularization,
    }
    if spec.truth is not None:
        mix["phase_coeffs"] = spec.truth.phase_coeffs.tolist()
        mix["amp_coeffs"] = [row.tolist() for row in spec.truth.amp_coeffs]
    return {
        "schema": EXPERIMENT_SCHEMA,
        "name": spec.name,
        "mixture": mix,
        "signal_path": spec.signal_path,
        "snr_db": list(spec.snr_db),
        "algorithms": list(spec.algorithms),
        "runs_per_cell": spec.runs_per_cell,
        "base_seed": spec.base_seed,
        "sampler": {a: sampler_to_dict(spec.samplers[a]) for a in spec.algorithms},
        "output_dir": spec.output_dir,
    }


def bundled_experiment_path(name: str) -> Path | None:
    """Resolve a bundled experiment name like 'table1' to its file."""
    from importlib.resources import files

    stem = name[:-5] if name.endswith(".json") else name
    candidate = files("chirpest") / "experiments" / f"{stem}.json"
    try:
        if candidate.is_file():
            return Path(str(candidate))
    except (OSError, TypeError):
        pass
    return None


def resolve_config_path(arg: str) -> Path:
    """A --config argument: an existing path, or a bundled spec name."""
    p = Path(arg)
    if p.is_file():
        return p
    bundled = bundled_experiment_path(arg)
    if bundled is not None:
        return bundled
    raise SpecError(f"config {arg!r} is neither a file nor a bundled experiment")
