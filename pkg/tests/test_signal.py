import numpy as np
import pytest
from scipy import signal as sps

from fdsic.errors import ConfigurationError, ContractError
from fdsic.signal import (
    QAM16,
    SIM_RATE_HZ,
    SYMBOL_RATE_HZ,
    OfdmConfig,
    SampleBuffer,
    cascade_delay,
    downsample_matched,
    generate_ofdm,
    set_power,
    shaping_filter,
    upsample_shape,
)


class TestSampleBuffer:
    def test_read_only_complex(self):
        b = SampleBuffer([1, 2, 3], SYMBOL_RATE_HZ)
        assert b.samples.dtype == np.complex128
        with pytest.raises(ValueError):
            b.samples[0] = 5

    def test_rejects_empty_and_bad_rate(self):
        with pytest.raises(ContractError):
            SampleBuffer([], SYMBOL_RATE_HZ)
        with pytest.raises(ContractError):
            SampleBuffer([1.0], 0.0)

    def test_power_dbm(self):
        b = SampleBuffer(np.full(10, np.sqrt(1e-3)), SYMBOL_RATE_HZ)
        assert b.power_dbm() == pytest.approx(0.0)


class TestGenerateOfdm:
    def test_length(self):
        x = generate_ofdm(OfdmConfig(num_symbols=10, fft_size=2048, cp_len=144), seed=0)
        assert len(x) == 21920
        assert x.rate_hz == SYMBOL_RATE_HZ

    def test_deterministic(self):
        cfg = OfdmConfig(num_symbols=4)
        a, b = generate_ofdm(cfg, 7), generate_ofdm(cfg, 7)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, generate_ofdm(cfg, 8).samples)

    def test_unit_power(self):
        x = generate_ofdm(OfdmConfig(num_symbols=100), seed=3)
        assert x.power_w() == pytest.approx(1.0, abs=0.05)

    def test_qam16_unit_power(self):
        x = generate_ofdm(OfdmConfig(num_symbols=100, constellation=QAM16), seed=3)
        assert x.power_w() == pytest.approx(1.0, abs=0.05)

    def test_occupied_band_centred_dc_nulled(self):
        cfg = OfdmConfig(num_symbols=1, cp_len=0)
        spec = np.abs(np.fft.fft(generate_ofdm(cfg, 1).samples)) ** 2
        active = np.flatnonzero(spec > 1e-9)
        assert active.size == cfg.occupied_subcarriers - 1
        assert spec[0] < 1e-20
        k = np.where(active >= 1024, active - 2048, active)
        assert k.min() == -666 and k.max() == 666

    def test_tx_power(self):
        x = generate_ofdm(OfdmConfig(num_symbols=2, tx_power_dbm=-20.0), 1)
        assert x.power_dbm() == pytest.approx(-20.0, abs=1e-9)

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            generate_ofdm(OfdmConfig(num_symbols=1, occupied_subcarriers=4096), 0)
        with pytest.raises(ConfigurationError):
            generate_ofdm(OfdmConfig(num_symbols=1, constellation="BPSK"), 0)

    def test_set_power_zero_buffer(self):
        with pytest.raises(ContractError):
            set_power(SampleBuffer(np.zeros(4), SYMBOL_RATE_HZ), 0.0)


class TestShaping:
    def test_filter_symmetric_unit_dc(self):
        h = shaping_filter()
        assert h.size == 129
        assert np.allclose(h, h[::-1])
        assert h.sum() == pytest.approx(1.0, abs=1e-12)

    def test_stopband(self):
        # Images of the 10 MHz band start at 30.72 - 10 = 20.72 MHz.
        w, H = sps.freqz(shaping_filter(), worN=8192, fs=SIM_RATE_HZ)
        stop = np.abs(H[w >= 20.72e6])
        assert 20 * np.log10(stop.max()) <= -40.0

    def test_lengths(self):
        x = generate_ofdm(OfdmConfig(num_symbols=10), 0)
        y = upsample_shape(x)
        assert len(y) == 87680 and y.rate_hz == SIM_RATE_HZ
        z = downsample_matched(y)
        assert len(z) == 21920 and z.rate_hz == SYMBOL_RATE_HZ

    def test_dc_passband(self):
        y = upsample_shape(SampleBuffer(np.ones(400), SYMBOL_RATE_HZ))
        steady = y.samples[200:-200]
        assert 10 * np.log10(np.mean(np.abs(steady) ** 2)) == pytest.approx(0.0, abs=0.1)

    def test_out_of_band_suppression(self):
        y = upsample_shape(generate_ofdm(OfdmConfig(num_symbols=20), 2))
        f = np.fft.fftfreq(len(y), 1 / SIM_RATE_HZ)
        p = np.abs(np.fft.fft(y.samples)) ** 2
        inband = p[np.abs(f) < 10e6].mean()
        image = p[(np.abs(f) > 20.72e6)].mean()
        assert 10 * np.log10(inband / image) >= 40.0

    def test_cascade_reconstruction(self):
        x = generate_ofdm(OfdmConfig(num_symbols=10), 5)
        z = downsample_matched(upsample_shape(x))
        d = cascade_delay()
        assert d == 32
        ref, out = x.samples[: len(x) - d], z.samples[d:]
        trim = slice(64, -64)
        err = np.mean(np.abs(out[trim] - ref[trim]) ** 2) / np.mean(np.abs(ref[trim]) ** 2)
        assert 10 * np.log10(err) <= -40.0

    def test_zero_in_zero_out(self):
        z = downsample_matched(SampleBuffer(np.zeros(400), SIM_RATE_HZ))
        assert not np.any(z.samples)

    def test_rate_contract(self):
        with pytest.raises(ContractError):
            upsample_shape(SampleBuffer(np.ones(8), SIM_RATE_HZ))
        with pytest.raises(ContractError):
            downsample_matched(SampleBuffer(np.ones(8), SYMBOL_RATE_HZ))

    def test_only_factor_four(self):
        with pytest.raises(ConfigurationError):
            upsample_shape(SampleBuffer(np.ones(8), SYMBOL_RATE_HZ), factor=2)
