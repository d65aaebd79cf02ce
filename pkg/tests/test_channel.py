import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fdsic.channel import (
    MultipathChannel,
    PathSpec,
    ReferenceTapBank,
    apply_channel,
    apply_path,
    delay_samples,
    digital_delay,
    realized_delay_ns,
)
from fdsic.errors import ConfigurationError, ContractError
from fdsic.signal import SIM_RATE_HZ, SYMBOL_RATE_HZ, SampleBuffer

TS_SIM_NS = 1e9 / SIM_RATE_HZ


def _noise(n, seed=0, rate=SIM_RATE_HZ):
    rng = np.random.default_rng(seed)
    return SampleBuffer(rng.standard_normal(n) + 1j * rng.standard_normal(n), rate)


class TestDelayQuantisation:
    def test_one_sample(self):
        assert delay_samples(8.1380, SIM_RATE_HZ) == 1
        assert realized_delay_ns(8.1380) == pytest.approx(TS_SIM_NS)

    def test_half_rounds_up(self):
        assert delay_samples(TS_SIM_NS / 2, SIM_RATE_HZ) == 1
        assert delay_samples(TS_SIM_NS * 0.49, SIM_RATE_HZ) == 0

    def test_reference_delays(self):
        assert [delay_samples(d, SIM_RATE_HZ) for d in (0, 100 / 3, 200 / 3, 100)] == [0, 4, 8, 12]

    @given(st.floats(0, 1e4, allow_nan=False))
    def test_realized_within_half_sample(self, d):
        assert abs(realized_delay_ns(d) - d) <= TS_SIM_NS / 2 + 1e-9


class TestPaths:
    def test_identity(self):
        x = _noise(64)
        assert np.array_equal(apply_path(x, PathSpec(0.0, 0.0, 0.0)).samples, x.samples)

    def test_one_sample_shift(self):
        x = _noise(64)
        y = apply_path(x, PathSpec(0.0, 8.1380))
        assert y.samples[0] == 0
        assert np.array_equal(y.samples[1:], x.samples[:-1])

    def test_gain_and_phase(self):
        x = _noise(64)
        y = apply_path(x, PathSpec(-50.0, 0.0, np.pi / 2))
        assert np.allclose(y.samples, 1j * 10 ** (-2.5) * x.samples)

    def test_negative_delay_rejected(self):
        with pytest.raises(ConfigurationError):
            PathSpec(0.0, -1.0)

    def test_rate_contract(self):
        with pytest.raises(ContractError):
            apply_path(_noise(8, rate=SYMBOL_RATE_HZ), PathSpec())


class TestChannel:
    def test_single_path_equals_apply_path(self):
        x, p = _noise(128), PathSpec(-7.0, 40.0, 0.3)
        assert np.array_equal(apply_channel(x, MultipathChannel((p,))).samples, apply_path(x, p).samples)

    def test_superposition(self):
        x = _noise(64)
        g = 10 ** (-3 / 20)
        y = apply_channel(x, MultipathChannel((PathSpec(-3.0), PathSpec(-3.0))))
        assert np.allclose(y.samples, 2 * g * x.samples)

    def test_two_path_power(self):
        x = _noise(1 << 16, seed=3)
        ch = MultipathChannel((PathSpec(-50.0, 0.0, 0.0), PathSpec(-60.0, 0.0, 0.0)))
        gain_db = 10 * np.log10(apply_channel(x, ch).power_w() / x.power_w())
        # Coherent paths: |10^-2.5 + 10^-3|^2; the incoherent sum would be -49.59 dB.
        assert gain_db == pytest.approx(20 * np.log10(10 ** -2.5 + 10 ** -3), abs=1e-9)

    def test_two_path_power_quadrature(self):
        x = _noise(1 << 16, seed=3)
        ch = MultipathChannel((PathSpec(-50.0, 0.0, 0.0), PathSpec(-60.0, 0.0, np.pi / 2)))
        gain_db = 10 * np.log10(apply_channel(x, ch).power_w() / x.power_w())
        assert gain_db == pytest.approx(-49.586, abs=1e-3)

    def test_sorted_and_metadata(self):
        ch = MultipathChannel((PathSpec(-60.0, 80.0), PathSpec(-50.0, 10.0)))
        assert [p.delay_ns for p in ch.paths] == [10.0, 80.0]
        assert ch.strongest.gain_db == -50.0
        assert ch.delay_spread_ns == 70.0

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            MultipathChannel(())

    @settings(max_examples=30, deadline=None)
    @given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
           st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
           st.lists(st.tuples(st.floats(-80, 0), st.floats(0, 200), st.floats(-np.pi, np.pi)),
                    min_size=1, max_size=4))
    def test_linearity(self, a, b, paths):
        ch = MultipathChannel(tuple(PathSpec(*p) for p in paths))
        x, y = _noise(96, 1), _noise(96, 2)
        lhs = apply_channel(x.replace(a * x.samples + b * y.samples), ch).samples
        rhs = a * apply_channel(x, ch).samples + b * apply_channel(y, ch).samples
        assert np.allclose(lhs, rhs, atol=1e-9)


class TestTapBank:
    def test_equally_spaced(self):
        assert ReferenceTapBank.equally_spaced(4).delays_ns == pytest.approx([0, 100 / 3, 200 / 3, 100])
        assert ReferenceTapBank.equally_spaced(2).delays_ns == [0.0, 100.0]
        assert ReferenceTapBank.equally_spaced(1).delays_ns == [0.0]

    def test_default_unit_gain(self):
        assert all(t.gain == 1 for t in ReferenceTapBank.equally_spaced(3).taps)

    def test_strictly_increasing(self):
        with pytest.raises(ConfigurationError):
            ReferenceTapBank((PathSpec(0, 10.0), PathSpec(0, 10.0)))


class TestDigitalDelay:
    def test_identity(self):
        x = _noise(32, rate=SYMBOL_RATE_HZ)
        assert np.array_equal(digital_delay(x, 0.0).samples, x.samples)

    def test_100ns_low_rate(self):
        x = _noise(32, rate=SYMBOL_RATE_HZ)
        y = digital_delay(x, 100.0, max_ref_delay_ns=100.0)
        assert not np.any(y.samples[:3])
        assert np.array_equal(y.samples[3:], x.samples[:-3])

    def test_below_max_reference_rejected(self):
        x = _noise(32, rate=SYMBOL_RATE_HZ)
        with pytest.raises(ConfigurationError, match="digital_delay must be >= max reference delay"):
            digital_delay(x, 50.0, max_ref_delay_ns=100.0)
