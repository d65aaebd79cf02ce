"""Oscillator phase noise (Wiener model) and additive white Gaussian noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .signal import SIM_RATE_HZ, SampleBuffer, dbm_to_w, require_rate

WIENER = "wiener"
NO_PHASE_NOISE = "none"

# Per-sample increment variance (rad^2) at the simulation rate.
DEFAULT_SIGMA_EPS_SQ = 8.5095e-5
DEFAULT_NOISE_FLOOR_DBM = -90.0


@dataclass(frozen=True)
class PhaseNoiseModel:
    """Wiener phase noise: increments of variance ``sigma_eps_sq`` every
    ``1 / model_rate_hz`` seconds."""

    sigma_eps_sq: float = DEFAULT_SIGMA_EPS_SQ
    model_rate_hz: float = SIM_RATE_HZ
    kind: str = WIENER

    def __post_init__(self):
        if self.kind not in (WIENER, NO_PHASE_NOISE):
            raise ConfigurationError(f"unknown phase noise kind {self.kind!r}")
        if self.kind == WIENER and not self.sigma_eps_sq > 0:
            raise ConfigurationError("sigma_eps_sq must be positive for a Wiener model")
        if not self.model_rate_hz > 0:
            raise ConfigurationError("model_rate_hz must be positive")

    @classmethod
    def disabled(cls) -> "PhaseNoiseModel":
        return cls(kind=NO_PHASE_NOISE)

    @property
    def enabled(self) -> bool:
        return self.kind == WIENER


@dataclass(frozen=True, eq=False)
class PhaseNoiseTrace:
    phi: np.ndarray
    rate_hz: float

    def __len__(self):
        return self.phi.size


@dataclass(frozen=True)
class NoiseModel:
    floor_dbm: float = DEFAULT_NOISE_FLOOR_DBM
    applies_to: str = "rx_chain"

    def __post_init__(self):
        if self.applies_to not in ("rx_chain", "ref_chain"):
            raise ConfigurationError(f"unknown noise target {self.applies_to!r}")

    @property
    def power_w(self) -> float:
        return float(dbm_to_w(self.floor_dbm))


def gen_phase_trace(model: PhaseNoiseModel, length: int, seed) -> PhaseNoiseTrace:
    """Draw a phase trajectory with ``phi[0] = 0`` at ``model.model_rate_hz``."""
    if length <= 0:
        raise ConfigurationError(f"trace length must be positive, got {length}")
    phi = np.zeros(length)
    if model.enabled:
        rng = np.random.default_rng(seed)
        steps = rng.normal(0.0, np.sqrt(model.sigma_eps_sq), size=length - 1)
        np.cumsum(steps, out=phi[1:])
    phi.setflags(write=False)
    return PhaseNoiseTrace(phi, model.model_rate_hz)


def apply_phase_noise(x: SampleBuffer, trace: PhaseNoiseTrace) -> SampleBuffer:
    require_rate(x, trace.rate_hz, "signal (phase noise trace rate)")
    if len(trace) < len(x):
        raise ConfigurationError(
            f"phase trace has {len(trace)} samples, signal needs {len(x)}"
        )
    return x.replace(x.samples * np.exp(1j * trace.phi[: len(x)]))


def awgn(n: int, power_w: float, seed) -> np.ndarray:
    """Circular complex Gaussian samples with E|w|^2 = ``power_w``."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((2, n))
    return np.sqrt(power_w / 2.0) * (w[0] + 1j * w[1])


def add_awgn(x: SampleBuffer, noise: NoiseModel, seed) -> SampleBuffer:
    return x.replace(x.samples + awgn(len(x), noise.power_w, seed))


def diff_process_variance(model: PhaseNoiseModel, delta_s: float) -> float:
    """Variance of phi(t) - phi(t - delta) for the Wiener model, in rad^2."""
    if not model.enabled:
        return 0.0
    return model.sigma_eps_sq * abs(delta_s) * model.model_rate_hz


def coherence_weight(model: PhaseNoiseModel, delta_s: float) -> float:
    """Mean phasor E[exp(j theta)] of the Gaussian difference process."""
    return float(np.exp(-diff_process_variance(model, delta_s) / 2.0))
