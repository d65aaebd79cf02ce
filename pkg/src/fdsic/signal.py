"""Transmit OFDM generation and the 30.72 <-> 122.88 MHz rate conversions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal as sps

from .errors import ConfigurationError, ContractError

SYMBOL_RATE_HZ = 30.72e6
SIM_RATE_HZ = 122.88e6

# Shaping filter: Kaiser-windowed sinc designed at the simulation rate.
# Passband edge 10 MHz, stopband from 15.36 MHz (Nyquist of the symbol-rate domain).
SHAPING_TAPS = 129
SHAPING_CUTOFF_HZ = 12.68e6
SHAPING_BETA = 7.0

QPSK = "QPSK"
QAM16 = "QAM16"


@dataclass(frozen=True, eq=False)
class SampleBuffer:
    """Complex baseband samples tagged with their sample rate.

    Sample magnitudes are in sqrt(W), so ``mean(|samples|**2)`` is a power in watts.
    """

    samples: np.ndarray
    rate_hz: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.ndim != 1 or s.size == 0:
            raise ContractError("SampleBuffer needs a non-empty 1-D sample array")
        if not self.rate_hz > 0:
            raise ContractError(f"rate_hz must be positive, got {self.rate_hz}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    def power_w(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def power_dbm(self) -> float:
        return w_to_dbm(self.power_w())

    def replace(self, samples) -> "SampleBuffer":
        return SampleBuffer(samples, self.rate_hz)


def dbm_to_w(p_dbm):
    return 10.0 ** ((np.asarray(p_dbm, dtype=float) - 30.0) / 10.0)


def w_to_dbm(p_w):
    return 10.0 * np.log10(p_w) + 30.0


def require_rate(x: SampleBuffer, rate_hz: float, what: str = "input"):
    if not np.isclose(x.rate_hz, rate_hz, rtol=1e-12, atol=0.0):
        raise ContractError(
            f"{what} must be sampled at {rate_hz / 1e6:g} MHz, got {x.rate_hz / 1e6:g} MHz"
        )


@dataclass(frozen=True)
class OfdmConfig:
    fft_size: int = 2048
    num_symbols: int = 200
    cp_len: int = 144
    occupied_subcarriers: int = 1333
    upsample_factor: int = 4
    constellation: str = QPSK
    # None leaves the frame at unit mean power.
    tx_power_dbm: float | None = None

    def validate(self):
        if self.fft_size <= 0 or self.num_symbols <= 0:
            raise ConfigurationError("fft_size and num_symbols must be positive")
        if self.cp_len < 0 or self.cp_len > self.fft_size:
            raise ConfigurationError("cp_len must be in [0, fft_size]")
        if not 0 < self.occupied_subcarriers <= self.fft_size:
            raise ConfigurationError(
                f"occupied_subcarriers must be in [1, fft_size={self.fft_size}], "
                f"got {self.occupied_subcarriers}"
            )
        if self.upsample_factor <= 0:
            raise ConfigurationError("upsample_factor must be positive")
        if self.constellation not in (QPSK, QAM16):
            raise ConfigurationError(f"unknown constellation {self.constellation!r}")

    @property
    def symbol_len(self) -> int:
        return self.fft_size + self.cp_len

    def active_bins(self) -> np.ndarray:
        """FFT bin indices carrying data: centred on DC, DC itself nulled."""
        n = self.occupied_subcarriers
        k = np.arange(-(n // 2), n - n // 2)
        return np.mod(k[k != 0], self.fft_size)


def _map_symbols(rng: np.random.Generator, n: int, constellation: str) -> np.ndarray:
    if constellation == QPSK:
        bits = rng.integers(0, 2, size=(2, n))
        return ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1])) / np.sqrt(2.0)
    levels = np.array([-3.0, -1.0, 1.0, 3.0])
    sym = levels[rng.integers(0, 4, size=n)] + 1j * levels[rng.integers(0, 4, size=n)]
    return sym / np.sqrt(10.0)


def generate_ofdm(config: OfdmConfig, seed: int) -> SampleBuffer:
    """Generate ``num_symbols`` CP-OFDM symbols at 30.72 MHz.

    Each symbol body has exactly unit mean power; if ``config.tx_power_dbm``
    is set the frame is rescaled to that power afterwards.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    bins = config.active_bins()
    n_fft = config.fft_size

    grid = np.zeros((config.num_symbols, n_fft), dtype=np.complex128)
    grid[:, bins] = _map_symbols(rng, config.num_symbols * bins.size, config.constellation).reshape(
        config.num_symbols, bins.size
    )
    body = np.fft.ifft(grid, axis=1) * (n_fft / np.sqrt(bins.size))
    if config.cp_len:
        body = np.concatenate([body[:, -config.cp_len:], body], axis=1)
    x = SampleBuffer(body.reshape(-1), SYMBOL_RATE_HZ)
    if config.tx_power_dbm is not None:
        x = set_power(x, config.tx_power_dbm)
    return x


def set_power(x: SampleBuffer, p_dbm: float) -> SampleBuffer:
    """Rescale ``x`` so that its mean power is ``p_dbm``."""
    p = x.power_w()
    if p == 0:
        raise ContractError("cannot set the power of an all-zero buffer")
    return x.replace(x.samples * np.sqrt(dbm_to_w(p_dbm) / p))


@lru_cache(maxsize=None)
def shaping_filter() -> np.ndarray:
    """Real, symmetric lowpass prototype with unit DC gain at the high rate."""
    h = sps.firwin(SHAPING_TAPS, SHAPING_CUTOFF_HZ, window=("kaiser", SHAPING_BETA), fs=SIM_RATE_HZ)
    h.setflags(write=False)
    return h


def cascade_delay(factor: int = 4) -> int:
    """Group delay of upsample_shape -> downsample_matched, in low-rate samples."""
    total = SHAPING_TAPS - 1  # two symmetric filters, (taps-1)/2 each, at the high rate
    if total % factor:
        raise ConfigurationError(
            f"shaping filter delay {total} is not a multiple of factor {factor}"
        )
    return total // factor


def upsample_shape(x: SampleBuffer, factor: int = 4) -> SampleBuffer:
    """Zero-stuff by ``factor`` and interpolate with the shaping filter.

    Output keeps the filter's (taps-1)/2 high-rate-sample delay and is
    truncated to ``len(x) * factor``.
    """
    _check_factor(factor)
    require_rate(x, SYMBOL_RATE_HZ)
    h = factor * shaping_filter()
    y = sps.upfirdn(h, x.samples, up=factor)[: len(x) * factor]
    return SampleBuffer(y, x.rate_hz * factor)


def downsample_matched(y: SampleBuffer, factor: int = 4) -> SampleBuffer:
    """Matched-filter with the (symmetric, real) shaping filter and decimate."""
    _check_factor(factor)
    require_rate(y, SYMBOL_RATE_HZ * factor)
    h = shaping_filter()
    n_out = len(y) // factor
    if n_out == 0:
        raise ContractError(f"need at least {factor} samples to downsample")
    z = sps.upfirdn(h[::-1].conj(), y.samples, down=factor)[:n_out]
    return SampleBuffer(z, y.rate_hz / factor)


def _check_factor(factor: int):
    if factor != 4:
        raise ConfigurationError(
            f"only factor 4 is supported (30.72 <-> 122.88 MHz), got {factor}"
        )
