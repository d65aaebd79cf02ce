"""Scenario presets and sweep drivers for residual self-interference versus delay.

A preset describes one sweep (path delay or delay spread) and a set of
curves, each curve being one canceller configuration. Every (seed, curve,
sweep value) point runs the full chain

    OFDM -> shaping -> TX phase noise -> channel / reference taps
         -> shared RX phase noise -> matched filter + decimation -> AWGN
         -> digital delay -> canceller

The chain is linear between the TX phase noise and the decimator, so each
distinct delay is pushed through the receive chain once per seed and the
received / reference signals are formed as weighted sums of those outputs.
All curves of a seed share the same frame, phase traces and noise draws.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .canceller import (
    CancellerConfig,
    nlms_misadjustment,
    residual_theory,
    run_multi_tap,
    run_single_tap,
)
from .channel import (
    MultipathChannel,
    PathSpec,
    ReferenceTapBank,
    apply_path,
    delay_samples,
    digital_delay,
    realized_delay_ns,
)
from .errors import ConfigurationError, DivergenceError
from .impairments import NoiseModel, PhaseNoiseModel, apply_phase_noise, awgn, gen_phase_trace
from .signal import (
    SIM_RATE_HZ,
    SYMBOL_RATE_HZ,
    OfdmConfig,
    SampleBuffer,
    dbm_to_w,
    downsample_matched,
    generate_ofdm,
    upsample_shape,
    w_to_dbm,
)

log = logging.getLogger(__name__)

PATH_DELAY = "path_delay_ns"
DELAY_SPREAD = "delay_spread_ns"
SWEEP_VARIABLES = (PATH_DELAY, DELAY_SPREAD)

HALF_SPREAD = "half_spread"
LAST_PATH = "last_path"

# 15 samples at 30.72 MHz: centres the 32-tap single-reference filter so that
# both positive and negative reference/path offsets are reachable.
SINGLE_TAP_DIGITAL_DELAY_NS = 15 / SYMBOL_RATE_HZ * 1e9
DEFAULT_SWEEP_NS = tuple(float(v) for v in range(0, 151, 10))
DEFAULT_SEEDS = (1, 2, 3, 4)
DEFAULT_SYMBOLS = 800


class TheoryNotApplicable(ConfigurationError):
    """The closed-form residual model only covers single-path channels."""


@dataclass(frozen=True)
class Curve:
    """One canceller configuration drawn across the sweep.

    ``n_refs == 1`` selects the single-reference canceller, whose reference
    delay is ``ref_delay``: a value in ns, ``"half_spread"`` or ``"last_path"``.
    Multi-reference curves use the preset's tap bank for ``n_refs``.
    """

    label: str
    n_refs: int = 1
    p_i_dbm: float = -30.0
    ref_delay: float | str = 0.0
    phase_noise: bool = True

    def __post_init__(self):
        if "," in self.label or "\n" in self.label:
            raise ConfigurationError(f"curve label may not contain commas/newlines: {self.label!r}")
        if self.n_refs < 1:
            raise ConfigurationError("n_refs must be >= 1")
        if isinstance(self.ref_delay, str) and self.ref_delay not in (HALF_SPREAD, LAST_PATH):
            raise ConfigurationError(
                f"ref_delay must be a number or one of {HALF_SPREAD!r}, {LAST_PATH!r}"
            )

    @property
    def single_tap(self) -> bool:
        return self.n_refs == 1


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    channel: MultipathChannel
    sweep_variable: str
    sweep_values: tuple
    curves: tuple
    seeds: tuple = DEFAULT_SEEDS
    signal: OfdmConfig = field(default_factory=lambda: OfdmConfig(num_symbols=DEFAULT_SYMBOLS))
    phase_noise: PhaseNoiseModel = field(default_factory=PhaseNoiseModel)
    tx_phase_noise: bool = True
    rx_phase_noise: bool = True
    rx_noise: NoiseModel = field(default_factory=lambda: NoiseModel(-90.0, "rx_chain"))
    ref_noise: NoiseModel = field(default_factory=lambda: NoiseModel(-90.0, "ref_chain"))
    tap_span_ns: float = 100.0
    # Explicit multi-reference delays; only valid for curves with matching n_refs.
    ref_delays_ns: tuple | None = None
    ref_gain_db: float = 0.0
    taps_per_branch: int = 32
    step_size: float = 0.5
    single_tap_digital_delay_ns: float = SINGLE_TAP_DIGITAL_DELAY_NS
    # None: the largest reference delay of the curve's tap bank.
    multi_tap_digital_delay_ns: float | None = None
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sweep_values", tuple(float(v) for v in self.sweep_values))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "curves", tuple(self.curves))
        if self.ref_delays_ns is not None:
            object.__setattr__(self, "ref_delays_ns", tuple(float(d) for d in self.ref_delays_ns))

    def validate(self) -> "ScenarioPreset":
        if self.sweep_variable not in SWEEP_VARIABLES:
            raise ConfigurationError(
                f"sweep variable must be one of {SWEEP_VARIABLES}, got {self.sweep_variable!r}"
            )
        if self.sweep_variable == PATH_DELAY and len(self.channel.paths) != 1:
            raise ConfigurationError(f"{PATH_DELAY} sweeps need a single-path channel")
        if self.sweep_variable == DELAY_SPREAD and len(self.channel.paths) < 2:
            raise ConfigurationError(f"{DELAY_SPREAD} sweeps need at least two paths")
        if not self.sweep_values:
            raise ConfigurationError("sweep needs at least one value")
        if any(v < 0 for v in self.sweep_values):
            raise ConfigurationError("sweep values must be >= 0 ns")
        if not self.seeds:
            raise ConfigurationError("at least one seed is required")
        if not self.curves:
            raise ConfigurationError("at least one curve is required")
        labels = [c.label for c in self.curves]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"duplicate curve labels: {labels}")
        self.signal.validate()
        for curve in self.curves:
            for v in self.sweep_values:
                resolve_point(self, curve, v)
        return self

    def tap_bank(self, n_refs: int) -> ReferenceTapBank:
        if self.ref_delays_ns is not None and n_refs > 1:
            if len(self.ref_delays_ns) != n_refs:
                raise ConfigurationError(
                    f"explicit ref_delays_ns has {len(self.ref_delays_ns)} entries, curve needs {n_refs}"
                )
            return ReferenceTapBank(tuple(PathSpec(self.ref_gain_db, d) for d in self.ref_delays_ns))
        return ReferenceTapBank.equally_spaced(n_refs, self.tap_span_ns, self.ref_gain_db)

    def replace(self, **changes) -> "ScenarioPreset":
        return dataclasses.replace(self, **changes)


def swept_channel(preset: ScenarioPreset, value: float) -> MultipathChannel:
    paths = list(preset.channel.paths)
    if preset.sweep_variable == PATH_DELAY:
        paths[0] = dataclasses.replace(paths[0], delay_ns=value)
    else:
        paths[-1] = dataclasses.replace(paths[-1], delay_ns=paths[0].delay_ns + value)
    return MultipathChannel(tuple(paths))


def _single_ref_delay(curve: Curve, ch: MultipathChannel) -> float:
    if curve.ref_delay == HALF_SPREAD:
        return ch.paths[0].delay_ns + ch.delay_spread_ns / 2
    if curve.ref_delay == LAST_PATH:
        return ch.paths[-1].delay_ns
    return float(curve.ref_delay)


def resolve_point(preset: ScenarioPreset, curve: Curve, value: float):
    """Channel, reference tap bank and canceller config for one sweep point."""
    ch = swept_channel(preset, value)
    if curve.single_tap:
        bank = ReferenceTapBank((PathSpec(preset.ref_gain_db, _single_ref_delay(curve, ch)),))
        dd = preset.single_tap_digital_delay_ns
    else:
        bank = preset.tap_bank(curve.n_refs)
        dd = preset.multi_tap_digital_delay_ns
        if dd is None:
            dd = max(bank.delays_ns)
    cfg = CancellerConfig(
        n_refs=len(bank),
        taps_per_branch=preset.taps_per_branch,
        ref_delays_ns=tuple(bank.delays_ns),
        digital_delay_ns=dd,
        step_size=preset.step_size,
    )
    return ch, bank, cfg


def tx_power_dbm(curve: Curve, ch: MultipathChannel) -> float:
    """TX power that puts the strongest path at the curve's P_I."""
    return curve.p_i_dbm - ch.strongest.gain_db


def noise_level_dbm(preset: ScenarioPreset, curve: Curve, ch: MultipathChannel, bank) -> float:
    """Receiver noise plus the NLMS regeneration noise for a one-path match.

    The regeneration term is the NLMS excess error driven by the receiver
    noise, ``mu / (2 - mu) * N_I``, plus reference noise scaled by |h_I/h_R|^2.
    """
    n_i = preset.rx_noise.power_w
    h_ir_sq = 10 ** ((ch.strongest.gain_db - bank.taps[0].gain_db) / 10)
    n_r = nlms_misadjustment(preset.step_size) * n_i + h_ir_sq * preset.ref_noise.power_w
    return float(w_to_dbm(n_i + n_r))


def point_theory_dbm(preset: ScenarioPreset, curve: Curve, value: float) -> float:
    if len(preset.channel.paths) != 1:
        raise TheoryNotApplicable("the closed-form residual is derived for single-path channels only")
    if not curve.single_tap:
        raise TheoryNotApplicable("the closed-form residual covers the single-reference canceller only")
    ch, bank, _ = resolve_point(preset, curve, value)
    delta_ir_ns = realized_delay_ns(ch.paths[0].delay_ns) - realized_delay_ns(bank.taps[0].delay_ns)
    model = preset.phase_noise if (curve.phase_noise and preset.rx_phase_noise) else PhaseNoiseModel.disabled()
    return residual_theory(curve.p_i_dbm, model, delta_ir_ns * 1e-9, noise_level_dbm(preset, curve, ch, bank))


def theory_overlay(preset: ScenarioPreset) -> list:
    """Rows of (curve, sweep value, realized delay, theory dBm) for single-reference curves."""
    if len(preset.channel.paths) != 1:
        raise TheoryNotApplicable("the closed-form residual is derived for single-path channels only")
    rows = []
    for curve in preset.curves:
        if not curve.single_tap:
            continue
        for v in preset.sweep_values:
            rows.append((curve.label, v, _realized_sweep_value(preset, v), point_theory_dbm(preset, curve, v)))
    return rows


def _realized_sweep_value(preset: ScenarioPreset, value: float) -> float:
    ch = swept_channel(preset, value)
    if preset.sweep_variable == PATH_DELAY:
        return realized_delay_ns(ch.paths[0].delay_ns)
    return realized_delay_ns(ch.paths[-1].delay_ns) - realized_delay_ns(ch.paths[0].delay_ns)


# --------------------------------------------------------------------------- running


@dataclass
class PointResult:
    residual_dbm: float
    converged: bool
    diverged: bool = False


@dataclass
class SweepRow:
    curve: str
    sweep_value_ns: float
    realized_delay_ns: float
    residual_dbm_mean: float
    residual_dbm_seeds: list
    theory_dbm: float | None
    converged: list
    diverged: bool = False


@dataclass
class SweepResult:
    preset: str
    seeds: tuple
    rows: list

    def curve(self, label: str) -> list:
        return [r for r in self.rows if r.curve == label]

    def series(self, label: str) -> np.ndarray:
        return np.array([r.residual_dbm_mean for r in self.curve(label)])

    def labels(self) -> list:
        seen = []
        for r in self.rows:
            if r.curve not in seen:
                seen.append(r.curve)
        return seen


class _SeedChains:
    """Per-seed signal source: decimated receive chains keyed by delay in samples."""

    def __init__(self, preset: ScenarioPreset, seed: int):
        self.preset = preset
        ss = np.random.SeedSequence(seed)
        sig_ss, txpn_ss, rxpn_ss, rxn_ss, refn_ss = ss.spawn(5)
        x = generate_ofdm(dataclasses.replace(preset.signal, tx_power_dbm=None), sig_ss)
        self.tx = upsample_shape(x, preset.signal.upsample_factor)
        self._seeds = (txpn_ss, rxpn_ss)
        self._noise_seeds = (rxn_ss, refn_ss)
        self._pn = {}
        self._chains = {}
        self.n = len(x)

    def _impaired_tx(self, pn: bool):
        if pn not in self._pn:
            p = self.preset
            n = len(self.tx)
            txpn, rxpn = (_fresh(s) for s in self._seeds)
            on = p.phase_noise if pn else PhaseNoiseModel.disabled()
            tx = self.tx
            if p.tx_phase_noise and on.enabled:
                tx = apply_phase_noise(tx, _on_rate(gen_phase_trace(on, n, txpn), tx))
            rx = _on_rate(gen_phase_trace(on if p.rx_phase_noise else PhaseNoiseModel.disabled(), n, rxpn), tx)
            self._pn[pn] = (tx, rx)
        return self._pn[pn]

    def chain(self, delay_ns: float, pn: bool) -> np.ndarray:
        """Unit-gain path at ``delay_ns`` through RX phase noise and the matched filter."""
        key = (delay_samples(delay_ns, SIM_RATE_HZ), pn)
        if key not in self._chains:
            tx, rx_trace = self._impaired_tx(pn)
            y = apply_path(tx, PathSpec(0.0, delay_ns))
            y = apply_phase_noise(y, rx_trace)
            self._chains[key] = downsample_matched(y, self.preset.signal.upsample_factor).samples
        return self._chains[key]

    def rx_noise(self) -> np.ndarray:
        if "rx" not in self._chains:
            self._chains["rx"] = awgn(self.n, self.preset.rx_noise.power_w, _fresh(self._noise_seeds[0]))
        return self._chains["rx"]

    def ref_noise(self, i: int) -> np.ndarray:
        key = ("ref", i)
        if key not in self._chains:
            s = self._noise_seeds[1]
            self._chains[key] = awgn(self.n, self.preset.ref_noise.power_w, _fresh(s, i))
        return self._chains[key]


def _fresh(s: np.random.SeedSequence, *extra) -> np.random.SeedSequence:
    # SeedSequence objects are stateful under spawn(); rebuild so each use is reproducible.
    return np.random.SeedSequence(s.entropy, spawn_key=s.spawn_key + extra)


def _on_rate(trace, x: SampleBuffer):
    if not math.isclose(trace.rate_hz, x.rate_hz, rel_tol=1e-12):
        raise ConfigurationError(
            f"phase noise model rate {trace.rate_hz / 1e6:g} MHz must equal the "
            f"simulation rate {x.rate_hz / 1e6:g} MHz"
        )
    return trace


def run_point(preset: ScenarioPreset, curve: Curve, value: float, src: _SeedChains):
    """Simulate one (curve, sweep value) point for the seed behind ``src``."""
    ch, bank, cfg = resolve_point(preset, curve, value)
    amp = math.sqrt(float(dbm_to_w(tx_power_dbm(curve, ch))))
    pn = curve.phase_noise

    y_i = sum(p.gain * src.chain(p.delay_ns, pn) for p in ch.paths) * amp + src.rx_noise()
    refs = [
        SampleBuffer(t.gain * amp * src.chain(t.delay_ns, pn) + src.ref_noise(i), SYMBOL_RATE_HZ)
        for i, t in enumerate(bank.taps)
    ]
    y_i = digital_delay(SampleBuffer(y_i, SYMBOL_RATE_HZ), cfg.digital_delay_ns, max(cfg.ref_delays_ns))
    if curve.single_tap:
        report = run_single_tap(y_i, refs[0], cfg)
    else:
        report = run_multi_tap(y_i, refs, cfg)
    return report


def _run_seed(preset: ScenarioPreset, seed: int) -> dict:
    src = _SeedChains(preset, seed)
    out = {}
    for ci, curve in enumerate(preset.curves):
        for vi, v in enumerate(preset.sweep_values):
            try:
                rep = run_point(preset, curve, v, src)
                out[ci, vi] = PointResult(rep.residual_power_dbm, rep.converged)
            except DivergenceError as exc:
                log.warning("seed %d curve %r value %g diverged: %s", seed, curve.label, v, exc)
                out[ci, vi] = PointResult(float("nan"), False, diverged=True)
    return out


def run_scenario(preset: ScenarioPreset, jobs: int | None = 1) -> SweepResult:
    """Run every (curve, sweep value, seed) point and average in linear power."""
    preset.validate()
    jobs = jobs or os.cpu_count() or 1
    if jobs > 1 and len(preset.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(preset.seeds))) as ex:
            per_seed = list(ex.map(_run_seed, [preset] * len(preset.seeds), preset.seeds))
    else:
        per_seed = [_run_seed(preset, s) for s in preset.seeds]

    single_path = len(preset.channel.paths) == 1
    rows = []
    for ci, curve in enumerate(preset.curves):
        for vi, v in enumerate(preset.sweep_values):
            pts = [d[ci, vi] for d in per_seed]
            ok = [p.residual_dbm for p in pts if not p.diverged]
            mean = float(w_to_dbm(np.mean(dbm_to_w(ok)))) if ok else float("nan")
            theory = point_theory_dbm(preset, curve, v) if (single_path and curve.single_tap) else None
            rows.append(SweepRow(
                curve=curve.label,
                sweep_value_ns=v,
                realized_delay_ns=_realized_sweep_value(preset, v),
                residual_dbm_mean=mean,
                residual_dbm_seeds=[p.residual_dbm for p in pts],
                theory_dbm=theory,
                converged=[p.converged for p in pts],
                diverged=not ok,
            ))
    return SweepResult(preset.name, preset.seeds, rows)


# --------------------------------------------------------------------------- presets


def _curves(*specs) -> tuple:
    return tuple(Curve(*s) if isinstance(s, tuple) else s for s in specs)


def preset_fig2() -> ScenarioPreset:
    return ScenarioPreset(
        name="fig2",
        description="single-reference canceller, single-path channel, path delay swept, reference at 0 ns",
        channel=MultipathChannel((PathSpec(-50.0, 0.0),)),
        sweep_variable=PATH_DELAY,
        sweep_values=DEFAULT_SWEEP_NS,
        curves=_curves(
            Curve("P_I=-30dBm", 1, -30.0, 0.0),
            Curve("P_I=-40dBm", 1, -40.0, 0.0),
        ),
    )


def preset_fig3() -> ScenarioPreset:
    return ScenarioPreset(
        name="fig3",
        description="single-reference canceller, 2-path channel (-50/-60 dB), delay spread swept",
        channel=MultipathChannel((PathSpec(-50.0, 0.0), PathSpec(-60.0, 0.0))),
        sweep_variable=DELAY_SPREAD,
        sweep_values=DEFAULT_SWEEP_NS,
        curves=_curves(
            Curve("Delta_R=0", 1, -30.0, 0.0),
            Curve("Delta_R=spread/2", 1, -30.0, HALF_SPREAD),
            Curve("Delta_R=Delta_I2", 1, -30.0, LAST_PATH),
        ),
    )


def preset_fig5() -> ScenarioPreset:
    return ScenarioPreset(
        name="fig5",
        description="single vs multi-reference cancellers, single-path channel, references on [0, 100] ns",
        channel=MultipathChannel((PathSpec(-50.0, 0.0),)),
        sweep_variable=PATH_DELAY,
        sweep_values=DEFAULT_SWEEP_NS,
        curves=_curves(
            Curve("P_I=-30dBm single-tap", 1, -30.0),
            Curve("P_I=-30dBm N=2", 2, -30.0),
            Curve("P_I=-30dBm N=4", 4, -30.0),
            Curve("P_I=-40dBm single-tap", 1, -40.0),
            Curve("P_I=-40dBm N=2", 2, -40.0),
            Curve("P_I=-40dBm N=4", 4, -40.0),
        ),
    )


def preset_fig6() -> ScenarioPreset:
    return ScenarioPreset(
        name="fig6",
        description="single vs multi-reference cancellers, 2-path channel (-50/-60 dB), delay spread swept",
        channel=MultipathChannel((PathSpec(-50.0, 0.0), PathSpec(-60.0, 0.0))),
        sweep_variable=DELAY_SPREAD,
        sweep_values=DEFAULT_SWEEP_NS,
        curves=_curves(
            Curve("single-tap", 1, -30.0),
            Curve("N=2", 2, -30.0),
            Curve("N=4", 4, -30.0),
            Curve("no phase noise", 1, -30.0, phase_noise=False),
        ),
    )


PRESETS = {
    "fig2": preset_fig2,
    "fig3": preset_fig3,
    "fig5": preset_fig5,
    "fig6": preset_fig6,
}


def get_preset(name: str) -> ScenarioPreset:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
