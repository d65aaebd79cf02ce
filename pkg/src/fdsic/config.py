"""Scenario files (INI) and the JSON-ready dictionary form used by run manifests.

Every physical key carries its unit as a suffix. A scenario file looks like::

    [scenario]
    name = custom
    sweep_variable = path_delay_ns
    sweep_values_ns = 0, 50, 100
    seeds = 1, 2

    [channel]
    path.1 = gain_db=-50, delay_ns=0

    [tap_bank]
    span_ns = 100

    [canceller]
    taps_per_branch = 32
    step_size = 0.5

    [curve:P_I=-30dBm]
    n_refs = 1
    p_i_dbm = -30
    ref_delay_ns = 0

Omitted sections and keys take the preset defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
import io

from .channel import MultipathChannel, PathSpec
from .errors import ConfigurationError
from .experiments import (
    HALF_SPREAD,
    LAST_PATH,
    SINGLE_TAP_DIGITAL_DELAY_NS,
    Curve,
    ScenarioPreset,
)
from .impairments import NoiseModel, PhaseNoiseModel
from .signal import OfdmConfig

_SECTIONS = {
    "scenario": {"name", "description", "sweep_variable", "sweep_values_ns", "seeds"},
    "signal": {"fft_size", "num_symbols", "cp_len", "occupied_subcarriers", "constellation"},
    "channel": set(),  # path.<k> keys, checked separately
    "tap_bank": {"span_ns", "gain_db", "ref_delays_ns"},
    "canceller": {"taps_per_branch", "step_size", "single_tap_digital_delay_ns", "digital_delay_ns"},
    "phase_noise": {"kind", "sigma_eps_sq_rad2", "model_rate_hz", "tx", "rx"},
    "noise": {"rx_floor_dbm", "ref_floor_dbm"},
}
_CURVE_KEYS = {"n_refs", "p_i_dbm", "ref_delay_ns", "ref_delay", "phase_noise"}


# --------------------------------------------------------------------------- dict form


def preset_to_dict(p: ScenarioPreset) -> dict:
    """Plain-JSON view of a preset; floats survive a JSON round trip exactly."""
    return {
        "name": p.name,
        "description": p.description,
        "channel": [dataclasses.asdict(path) for path in p.channel.paths],
        "sweep_variable": p.sweep_variable,
        "sweep_values_ns": list(p.sweep_values),
        "curves": [dataclasses.asdict(c) for c in p.curves],
        "seeds": list(p.seeds),
        "signal": dataclasses.asdict(p.signal),
        "phase_noise": dataclasses.asdict(p.phase_noise),
        "tx_phase_noise": p.tx_phase_noise,
        "rx_phase_noise": p.rx_phase_noise,
        "rx_noise": dataclasses.asdict(p.rx_noise),
        "ref_noise": dataclasses.asdict(p.ref_noise),
        "tap_span_ns": p.tap_span_ns,
        "ref_delays_ns": None if p.ref_delays_ns is None else list(p.ref_delays_ns),
        "ref_gain_db": p.ref_gain_db,
        "taps_per_branch": p.taps_per_branch,
        "step_size": p.step_size,
        "single_tap_digital_delay_ns": p.single_tap_digital_delay_ns,
        "multi_tap_digital_delay_ns": p.multi_tap_digital_delay_ns,
    }


def preset_from_dict(d: dict) -> ScenarioPreset:
    try:
        return ScenarioPreset(
            name=d["name"],
            description=d.get("description", ""),
            channel=MultipathChannel(tuple(PathSpec(**path) for path in d["channel"])),
            sweep_variable=d["sweep_variable"],
            sweep_values=tuple(d["sweep_values_ns"]),
            curves=tuple(Curve(**c) for c in d["curves"]),
            seeds=tuple(d["seeds"]),
            signal=OfdmConfig(**d["signal"]),
            phase_noise=PhaseNoiseModel(**d["phase_noise"]),
            tx_phase_noise=d["tx_phase_noise"],
            rx_phase_noise=d["rx_phase_noise"],
            rx_noise=NoiseModel(**d["rx_noise"]),
            ref_noise=NoiseModel(**d["ref_noise"]),
            tap_span_ns=d["tap_span_ns"],
            ref_delays_ns=None if d["ref_delays_ns"] is None else tuple(d["ref_delays_ns"]),
            ref_gain_db=d["ref_gain_db"],
            taps_per_branch=d["taps_per_branch"],
            step_size=d["step_size"],
            single_tap_digital_delay_ns=d["single_tap_digital_delay_ns"],
            multi_tap_digital_delay_ns=d["multi_tap_digital_delay_ns"],
        )
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed preset description: {exc}") from None


# --------------------------------------------------------------------------- INI form


def _floats(text: str, key: str) -> tuple:
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(f"{key}: expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str, key: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigurationError(f"{key}: expected a comma-separated list of integers, got {text!r}") from None


def _get(section, key: str, conv, default):
    if key not in section:
        return default
    try:
        if conv is bool:
            return section.getboolean(key)
        return conv(section[key])
    except ValueError:
        raise ConfigurationError(f"[{section.name}] {key}: cannot parse {section[key]!r}") from None


def _parse_path(key: str, text: str) -> PathSpec:
    fields = {}
    for item in text.split(","):
        if not item.strip():
            continue
        name, sep, value = item.partition("=")
        name = name.strip()
        if not sep or name not in ("gain_db", "delay_ns", "phase_rad"):
            raise ConfigurationError(
                f"[channel] {key}: expected 'gain_db=<dB>, delay_ns=<ns>[, phase_rad=<rad>]', got {text!r}"
            )
        try:
            fields[name] = float(value)
        except ValueError:
            raise ConfigurationError(f"[channel] {key}: {name} is not a number") from None
    return PathSpec(**fields)


def _check_keys(cp: configparser.ConfigParser):
    for name in cp.sections():
        if name.startswith("curve:"):
            allowed = _CURVE_KEYS
        elif name in _SECTIONS:
            allowed = _SECTIONS[name]
        else:
            raise ConfigurationError(f"unknown section [{name}]")
        for key in cp[name]:
            if name == "channel" and key.startswith("path."):
                continue
            if key not in allowed:
                raise ConfigurationError(f"unknown key {key!r} in [{name}]")


def _parse_curve(label: str, s) -> Curve:
    if "ref_delay_ns" in s and "ref_delay" in s:
        raise ConfigurationError(f"[curve:{label}] give ref_delay_ns or ref_delay, not both")
    ref_delay = 0.0
    if "ref_delay_ns" in s:
        ref_delay = _get(s, "ref_delay_ns", float, 0.0)
    elif "ref_delay" in s:
        ref_delay = s["ref_delay"].strip()
        if ref_delay not in (HALF_SPREAD, LAST_PATH):
            raise ConfigurationError(
                f"[curve:{label}] ref_delay must be {HALF_SPREAD!r} or {LAST_PATH!r}; use ref_delay_ns for numbers"
            )
    return Curve(
        label=label,
        n_refs=_get(s, "n_refs", int, 1),
        p_i_dbm=_get(s, "p_i_dbm", float, -30.0),
        ref_delay=ref_delay,
        phase_noise=_get(s, "phase_noise", bool, True),
    )


def parse_config(text: str, source: str = "<string>") -> ScenarioPreset:
    """Build and validate a preset from scenario-file text."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse {source}: {exc}") from None
    _check_keys(cp)

    sc = cp["scenario"] if cp.has_section("scenario") else {}
    if "sweep_variable" not in sc or "sweep_values_ns" not in sc:
        raise ConfigurationError("[scenario] needs sweep_variable and sweep_values_ns")
    if not cp.has_section("channel") or not any(k.startswith("path.") for k in cp["channel"]):
        raise ConfigurationError("[channel] needs at least one path.<k> entry")
    curves = [s for s in cp.sections() if s.startswith("curve:")]
    if not curves:
        raise ConfigurationError("at least one [curve:<label>] section is required")

    base = ScenarioPreset(
        name="custom",
        channel=MultipathChannel((PathSpec(),)),
        sweep_variable=sc["sweep_variable"],
        sweep_values=(0.0,),
        curves=(),
    )
    sig = cp["signal"] if cp.has_section("signal") else {}
    signal = OfdmConfig(
        fft_size=_get(sig, "fft_size", int, base.signal.fft_size),
        num_symbols=_get(sig, "num_symbols", int, base.signal.num_symbols),
        cp_len=_get(sig, "cp_len", int, base.signal.cp_len),
        occupied_subcarriers=_get(sig, "occupied_subcarriers", int, base.signal.occupied_subcarriers),
        constellation=sig.get("constellation", base.signal.constellation),
    )
    ch = cp["channel"]
    paths = tuple(_parse_path(k, ch[k]) for k in ch if k.startswith("path."))
    tb = cp["tap_bank"] if cp.has_section("tap_bank") else {}
    cn = cp["canceller"] if cp.has_section("canceller") else {}
    pn = cp["phase_noise"] if cp.has_section("phase_noise") else {}
    nz = cp["noise"] if cp.has_section("noise") else {}

    ref_delays = None
    if "ref_delays_ns" in tb:
        ref_delays = _floats(tb["ref_delays_ns"], "[tap_bank] ref_delays_ns")

    preset = ScenarioPreset(
        name=sc.get("name", "custom").strip(),
        description=sc.get("description", ""),
        channel=MultipathChannel(paths),
        sweep_variable=sc["sweep_variable"].strip(),
        sweep_values=_floats(sc["sweep_values_ns"], "[scenario] sweep_values_ns"),
        curves=tuple(_parse_curve(s.split(":", 1)[1], cp[s]) for s in curves),
        seeds=_ints(sc["seeds"], "[scenario] seeds") if "seeds" in sc else base.seeds,
        signal=signal,
        phase_noise=PhaseNoiseModel(
            sigma_eps_sq=_get(pn, "sigma_eps_sq_rad2", float, base.phase_noise.sigma_eps_sq),
            model_rate_hz=_get(pn, "model_rate_hz", float, base.phase_noise.model_rate_hz),
            kind=pn.get("kind", base.phase_noise.kind).strip(),
        ),
        tx_phase_noise=_get(pn, "tx", bool, True),
        rx_phase_noise=_get(pn, "rx", bool, True),
        rx_noise=NoiseModel(_get(nz, "rx_floor_dbm", float, -90.0), "rx_chain"),
        ref_noise=NoiseModel(_get(nz, "ref_floor_dbm", float, -90.0), "ref_chain"),
        tap_span_ns=_get(tb, "span_ns", float, base.tap_span_ns),
        ref_delays_ns=ref_delays,
        ref_gain_db=_get(tb, "gain_db", float, base.ref_gain_db),
        taps_per_branch=_get(cn, "taps_per_branch", int, base.taps_per_branch),
        step_size=_get(cn, "step_size", float, base.step_size),
        single_tap_digital_delay_ns=_get(cn, "single_tap_digital_delay_ns", float, SINGLE_TAP_DIGITAL_DELAY_NS),
        multi_tap_digital_delay_ns=_get(cn, "digital_delay_ns", float, None),
    )
    return preset.validate()


def load_config(path) -> ScenarioPreset:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def format_config(p: ScenarioPreset) -> str:
    """Scenario-file text that :func:`parse_config` maps back to ``p``."""
    cp = configparser.ConfigParser(interpolation=None)
    cp["scenario"] = {
        "name": p.name,
        "description": p.description,
        "sweep_variable": p.sweep_variable,
        "sweep_values_ns": ", ".join(repr(v) for v in p.sweep_values),
        "seeds": ", ".join(str(s) for s in p.seeds),
    }
    s = p.signal
    cp["signal"] = {
        "fft_size": str(s.fft_size),
        "num_symbols": str(s.num_symbols),
        "cp_len": str(s.cp_len),
        "occupied_subcarriers": str(s.occupied_subcarriers),
        "constellation": s.constellation,
    }
    cp["channel"] = {
        f"path.{i + 1}": f"gain_db={q.gain_db!r}, delay_ns={q.delay_ns!r}, phase_rad={q.phase_rad!r}"
        for i, q in enumerate(p.channel.paths)
    }
    cp["tap_bank"] = {"span_ns": repr(p.tap_span_ns), "gain_db": repr(p.ref_gain_db)}
    if p.ref_delays_ns is not None:
        cp["tap_bank"]["ref_delays_ns"] = ", ".join(repr(d) for d in p.ref_delays_ns)
    cp["canceller"] = {
        "taps_per_branch": str(p.taps_per_branch),
        "step_size": repr(p.step_size),
        "single_tap_digital_delay_ns": repr(p.single_tap_digital_delay_ns),
    }
    if p.multi_tap_digital_delay_ns is not None:
        cp["canceller"]["digital_delay_ns"] = repr(p.multi_tap_digital_delay_ns)
    cp["phase_noise"] = {
        "kind": p.phase_noise.kind,
        "sigma_eps_sq_rad2": repr(p.phase_noise.sigma_eps_sq),
        "model_rate_hz": repr(p.phase_noise.model_rate_hz),
        "tx": str(p.tx_phase_noise).lower(),
        "rx": str(p.rx_phase_noise).lower(),
    }
    cp["noise"] = {"rx_floor_dbm": repr(p.rx_noise.floor_dbm), "ref_floor_dbm": repr(p.ref_noise.floor_dbm)}
    for c in p.curves:
        sec = {"n_refs": str(c.n_refs), "p_i_dbm": repr(c.p_i_dbm), "phase_noise": str(c.phase_noise).lower()}
        if isinstance(c.ref_delay, str):
            sec["ref_delay"] = c.ref_delay
        else:
            sec["ref_delay_ns"] = repr(float(c.ref_delay))
        cp[f"curve:{c.label}"] = sec

    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
