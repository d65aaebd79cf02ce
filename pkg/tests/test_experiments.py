import dataclasses
import math

import numpy as np
import pytest

from fdsic import experiments as ex
from fdsic.channel import MultipathChannel, PathSpec, apply_channel
from fdsic.errors import ConfigurationError, DivergenceError
from fdsic.experiments import (
    DELAY_SPREAD,
    PATH_DELAY,
    Curve,
    TheoryNotApplicable,
    get_preset,
    noise_level_dbm,
    preset_fig2,
    preset_fig3,
    preset_fig5,
    preset_fig6,
    resolve_point,
    run_scenario,
    theory_overlay,
)
from fdsic.impairments import apply_phase_noise
from fdsic.signal import OfdmConfig, dbm_to_w, downsample_matched, w_to_dbm

TS_NS = 1e9 / 30.72e6


def _small(preset, values=(0.0, 50.0), seeds=(1, 2), symbols=30):
    return preset.replace(sweep_values=values, seeds=seeds, signal=OfdmConfig(num_symbols=symbols))


class TestPresets:
    def test_fig2(self):
        p = preset_fig2().validate()
        assert p.sweep_variable == PATH_DELAY
        assert p.sweep_values == tuple(float(v) for v in range(0, 151, 10))
        assert [c.p_i_dbm for c in p.curves] == [-30.0, -40.0]
        assert len(p.seeds) >= 1

    def test_fig3_gains(self):
        p = preset_fig3().validate()
        assert [q.gain_db for q in p.channel.paths] == [-50.0, -60.0]
        assert p.sweep_variable == DELAY_SPREAD

    def test_fig5_reference_delays(self):
        p = preset_fig5().validate()
        assert p.tap_bank(4).delays_ns == pytest.approx([0, 33.33, 66.67, 100], abs=0.005)
        assert p.tap_bank(2).delays_ns == [0.0, 100.0]
        assert sorted({c.n_refs for c in p.curves}) == [1, 2, 4]

    def test_fig6(self):
        p = preset_fig6().validate()
        assert any(not c.phase_noise for c in p.curves)

    def test_get_preset(self):
        assert get_preset("fig3").name == "fig3"
        with pytest.raises(ConfigurationError, match="unknown preset"):
            get_preset("fig4")

    def test_validation(self):
        p = preset_fig2()
        with pytest.raises(ConfigurationError):
            p.replace(sweep_variable="gain_db").validate()
        with pytest.raises(ConfigurationError):
            p.replace(seeds=()).validate()
        with pytest.raises(ConfigurationError):
            p.replace(channel=preset_fig3().channel).validate()
        with pytest.raises(ConfigurationError):
            p.replace(curves=(Curve("a"), Curve("a"))).validate()


class TestResolvePoint:
    def test_single_tap(self):
        ch, bank, cfg = resolve_point(preset_fig2(), Curve("x", ref_delay=0.0), 40.0)
        assert ch.paths[0].delay_ns == 40.0
        assert bank.delays_ns == [0.0]
        assert cfg.digital_delay_ns == pytest.approx(15 * TS_NS)

    def test_multi_tap_digital_delay(self):
        _, bank, cfg = resolve_point(preset_fig5(), Curve("x", n_refs=4), 40.0)
        assert cfg.digital_delay_ns == 100.0 and cfg.n_refs == 4

    def test_spread_references(self):
        p = preset_fig3()
        ch, bank, _ = resolve_point(p, Curve("h", ref_delay=ex.HALF_SPREAD), 80.0)
        assert [q.delay_ns for q in ch.paths] == [0.0, 80.0]
        assert bank.delays_ns == [40.0]
        _, bank, _ = resolve_point(p, Curve("l", ref_delay=ex.LAST_PATH), 80.0)
        assert bank.delays_ns == [80.0]

    def test_tx_power_anchor(self):
        ch = MultipathChannel((PathSpec(-50.0), PathSpec(-60.0, 10.0)))
        assert ex.tx_power_dbm(Curve("x", p_i_dbm=-30.0), ch) == 20.0


class TestTheoryOverlay:
    def test_multipath_not_applicable(self):
        with pytest.raises(TheoryNotApplicable):
            theory_overlay(preset_fig3())

    def test_matched_delay_is_noise_level(self):
        p = preset_fig2()
        rows = theory_overlay(p)
        ch, bank, _ = resolve_point(p, p.curves[0], 0.0)
        assert rows[0][3] == pytest.approx(noise_level_dbm(p, p.curves[0], ch, bank), abs=1e-12)
        # -90 dBm receiver noise, 1/3 misadjustment and -90 dBm reference noise at |h_IR|^2 = -50 dB.
        assert rows[0][3] == pytest.approx(10 * np.log10(1e-9 * (1 + 1 / 3 + 1e-5)), abs=1e-9)

    def test_monotone(self):
        rows = [r for r in theory_overlay(preset_fig2()) if r[0] == "P_I=-30dBm"]
        vals = [r[3] for r in rows]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_tabulated_values(self):
        rows = {r[1]: r for r in theory_overlay(preset_fig2()) if r[0] == "P_I=-30dBm"}
        n_mw = 1e-9 * (1 + 1 / 3 + 1e-5)
        # Realised path delays: 6, 12 and 18 samples at 122.88 MHz.
        for v, samples, frozen in ((50.0, 6, -62.91), (100.0, 12, -59.91), (150.0, 18, -58.15)):
            oracle = 10 * math.log10(1e-3 * (1 - math.exp(-8.5095e-5 * samples)) + n_mw)
            assert rows[v][2] == pytest.approx(samples / 122.88e6 * 1e9)
            assert rows[v][3] == pytest.approx(oracle, abs=1e-9)
            assert rows[v][3] == pytest.approx(frozen, abs=0.005)


class TestChains:
    def test_linear_shortcut_matches_direct_chain(self):
        p = _small(preset_fig3())
        src = ex._SeedChains(p, 3)
        tx, rx_trace = src._impaired_tx(True)
        ch = MultipathChannel((PathSpec(-50.0, 0.0, 0.0), PathSpec(-60.0, 57.0, 0.0)))
        direct = downsample_matched(apply_phase_noise(apply_channel(tx, ch), rx_trace)).samples
        summed = sum(q.gain * src.chain(q.delay_ns, True) for q in ch.paths)
        assert np.allclose(summed, direct, rtol=0, atol=1e-12 * np.max(np.abs(direct)))

    def test_chain_cache_keyed_by_samples(self):
        src = ex._SeedChains(_small(preset_fig2()), 1)
        assert src.chain(99.0, True) is src.chain(100.0, True)

    def test_ref_noise_independent_per_branch(self):
        src = ex._SeedChains(_small(preset_fig2()), 1)
        a, b = src.ref_noise(0), src.ref_noise(1)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, src.rx_noise())


@pytest.fixture(scope="module")
def small_fig5():
    return _small(preset_fig5(), values=(0.0, 100.0), seeds=(1, 2))


@pytest.fixture(scope="module")
def result(small_fig5):
    return run_scenario(small_fig5)


class TestRunScenario:
    def test_shape_and_order(self, small_fig5, result):
        assert len(result.rows) == len(small_fig5.curves) * 2
        assert result.labels() == [c.label for c in small_fig5.curves]
        assert [r.sweep_value_ns for r in result.curve("P_I=-30dBm N=2")] == [0.0, 100.0]

    def test_linear_mean(self, result):
        for r in result.rows:
            assert r.residual_dbm_mean == pytest.approx(float(w_to_dbm(np.mean(dbm_to_w(r.residual_dbm_seeds)))))
            assert np.all(np.isfinite(r.residual_dbm_seeds))

    def test_realized_delays_and_theory(self, result):
        r = result.curve("P_I=-30dBm N=4")[1]
        assert r.realized_delay_ns == pytest.approx(12 / 122.88e6 * 1e9)
        assert r.theory_dbm is None
        assert result.curve("P_I=-30dBm single-tap")[0].theory_dbm is not None

    def test_deterministic(self, small_fig5, result):
        again = run_scenario(small_fig5)
        assert [r.residual_dbm_seeds for r in again.rows] == [r.residual_dbm_seeds for r in result.rows]

    def test_parallel_matches_serial(self, small_fig5, result):
        par = run_scenario(small_fig5, jobs=2)
        assert [r.residual_dbm_seeds for r in par.rows] == [r.residual_dbm_seeds for r in result.rows]

    def test_divergence_flagged(self, monkeypatch):
        p = _small(preset_fig2(), values=(0.0, 10.0), seeds=(1,), symbols=4)
        real = ex.run_point

        def flaky(preset, curve, value, src):
            if value == 10.0:
                raise DivergenceError("forced")
            return real(preset, curve, value, src)

        monkeypatch.setattr(ex, "run_point", flaky)
        res = run_scenario(p)
        rows = res.curve("P_I=-30dBm")
        assert not rows[0].diverged and rows[1].diverged
        assert math.isnan(rows[1].residual_dbm_mean)

    def test_replace_keeps_frozen(self):
        p = preset_fig2()
        with pytest.raises(dataclasses.FrozenInstanceError):
            p.name = "x"
