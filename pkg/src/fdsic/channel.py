"""Static multipath self-interference channel and analog reference taps.

Delays are realised as whole samples at the buffer rate, rounding to the
nearest sample (half-way cases round up).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .signal import SIM_RATE_HZ, SampleBuffer, require_rate


def delay_samples(delay_ns: float, rate_hz: float) -> int:
    return int(math.floor(delay_ns * 1e-9 * rate_hz + 0.5))


def realized_delay_ns(delay_ns: float, rate_hz: float = SIM_RATE_HZ) -> float:
    return delay_samples(delay_ns, rate_hz) / rate_hz * 1e9


@dataclass(frozen=True)
class PathSpec:
    gain_db: float = 0.0
    delay_ns: float = 0.0
    phase_rad: float = 0.0

    def __post_init__(self):
        if not self.delay_ns >= 0:
            raise ConfigurationError(f"path delay_ns must be >= 0, got {self.delay_ns}")
        if not np.isfinite(self.gain_db) or not np.isfinite(self.phase_rad):
            raise ConfigurationError("path gain and phase must be finite")

    @property
    def gain(self) -> complex:
        return 10.0 ** (self.gain_db / 20.0) * complex(np.exp(1j * self.phase_rad))


@dataclass(frozen=True)
class MultipathChannel:
    paths: tuple

    def __post_init__(self):
        paths = tuple(sorted(self.paths, key=lambda p: p.delay_ns))
        if not paths:
            raise ConfigurationError("a channel needs at least one path")
        object.__setattr__(self, "paths", paths)

    @property
    def strongest(self) -> PathSpec:
        return max(self.paths, key=lambda p: p.gain_db)

    @property
    def delay_spread_ns(self) -> float:
        return self.paths[-1].delay_ns - self.paths[0].delay_ns


@dataclass(frozen=True)
class ReferenceTapBank:
    taps: tuple

    def __post_init__(self):
        taps = tuple(self.taps)
        if not taps:
            raise ConfigurationError("a reference tap bank needs at least one tap")
        d = [t.delay_ns for t in taps]
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ConfigurationError(f"reference delays must be strictly increasing, got {d}")
        object.__setattr__(self, "taps", taps)

    @classmethod
    def equally_spaced(cls, n: int, span_ns: float = 100.0, gain_db: float = 0.0):
        """``n`` references with delays spread evenly over ``[0, span_ns]``."""
        if n < 1:
            raise ConfigurationError("need at least one reference")
        if n == 1:
            return cls((PathSpec(gain_db, 0.0),))
        return cls(tuple(PathSpec(gain_db, span_ns * i / (n - 1)) for i in range(n)))

    @property
    def delays_ns(self) -> list:
        return [t.delay_ns for t in self.taps]

    def __len__(self):
        return len(self.taps)


def apply_path(x: SampleBuffer, p: PathSpec) -> SampleBuffer:
    require_rate(x, SIM_RATE_HZ)
    d = delay_samples(p.delay_ns, x.rate_hz)
    return x.replace(p.gain * _shift(x.samples, d))


def apply_channel(x: SampleBuffer, ch: MultipathChannel) -> SampleBuffer:
    require_rate(x, SIM_RATE_HZ)
    out = np.zeros(len(x), dtype=np.complex128)
    for p in ch.paths:
        out += p.gain * _shift(x.samples, delay_samples(p.delay_ns, x.rate_hz))
    return x.replace(out)


def digital_delay(x: SampleBuffer, delta_prime_ns: float, max_ref_delay_ns: float = 0.0) -> SampleBuffer:
    """Delay ``x`` by ``delta_prime_ns`` rounded to whole samples at its own rate."""
    if delta_prime_ns < max_ref_delay_ns:
        raise ConfigurationError(
            f"digital_delay must be >= max reference delay "
            f"({delta_prime_ns} ns < {max_ref_delay_ns} ns)"
        )
    return x.replace(_shift(x.samples, delay_samples(delta_prime_ns, x.rate_hz)))


def _shift(s: np.ndarray, d: int) -> np.ndarray:
    out = np.zeros_like(s)
    if d < s.size:
        out[d:] = s[: s.size - d]
    return out
