"""Self-interference regeneration with single- and multi-reference NLMS.

The multi-reference canceller feeds a bank of ``N`` length-``L`` filters, one
per analog reference, whose inputs are masked so that each branch only
contributes around the tap where its reference lines up with the digitally
delayed received signal. The single-reference canceller is the ``N = 1``
case with every tap enabled.

Weight update convention: ``y_hat = g^H u``, ``e = y_I - y_hat`` and
``g <- g + mu * conj(e) * u / (u^H u)``, which is steepest descent on ``|e|^2``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigurationError, ContractError, DivergenceError
from .impairments import PhaseNoiseModel, coherence_weight
from .signal import SYMBOL_RATE_HZ, SampleBuffer, dbm_to_w, w_to_dbm

log = logging.getLogger(__name__)

NORM_EPS = 1e-12
CONVERGENCE_WINDOW = 2048
CONVERGENCE_TOL_DB = 0.1

# Slack for exact multiples of T_s that come out a few ulps high in floating point.
_RATIO_TOL = 1e-9


def _ceil(x: float) -> int:
    return math.ceil(x - _RATIO_TOL)


@dataclass(frozen=True)
class CancellerConfig:
    n_refs: int = 1
    taps_per_branch: int = 32
    ref_delays_ns: tuple = (0.0,)
    digital_delay_ns: float = 0.0
    step_size: float = 0.5
    sample_period_s: float = 1.0 / SYMBOL_RATE_HZ
    # None: mean spacing of ref_delays_ns (or T_s for a single reference).
    ref_spacing_s: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "ref_delays_ns", tuple(float(d) for d in self.ref_delays_ns))
        if self.n_refs < 1 or self.taps_per_branch < 1:
            raise ConfigurationError("n_refs and taps_per_branch must be positive")
        if len(self.ref_delays_ns) != self.n_refs:
            raise ConfigurationError(
                f"expected {self.n_refs} reference delays, got {len(self.ref_delays_ns)}"
            )
        d = self.ref_delays_ns
        if any(b <= a for a, b in zip(d, d[1:])):
            raise ConfigurationError(f"reference delays must be strictly increasing, got {d}")
        if self.digital_delay_ns < max(d):
            raise ConfigurationError(
                f"digital_delay must be >= max reference delay "
                f"({self.digital_delay_ns} ns < {max(d)} ns)"
            )
        if not 0 < self.step_size < 2:
            raise ConfigurationError(f"step_size must be in (0, 2) for NLMS, got {self.step_size}")
        if not self.sample_period_s > 0:
            raise ConfigurationError("sample_period_s must be positive")
        if self.n_refs > 1 and self.spacing_s < self.sample_period_s * (1 - _RATIO_TOL):
            raise ConfigurationError(
                f"reference spacing T' = {self.spacing_s * 1e9:.4g} ns must be >= "
                f"T_s = {self.sample_period_s * 1e9:.4g} ns"
            )

    @property
    def spacing_s(self) -> float:
        if self.ref_spacing_s is not None:
            return self.ref_spacing_s
        if self.n_refs == 1:
            return self.sample_period_s
        d = self.ref_delays_ns
        return (d[-1] - d[0]) / (self.n_refs - 1) * 1e-9

    @property
    def allocated_taps(self) -> int:
        return self.n_refs * self.taps_per_branch


def compute_masks(cfg: CancellerConfig) -> np.ndarray:
    """Binary input masks, one row per reference (row ``n`` is ``p^(n)``).

    Column ``l - 1`` holds mask entry ``l`` (entries are numbered from 1).
    Entries that fall outside ``[1, L]`` are clamped with a warning.
    """
    L = cfg.taps_per_branch
    ts = cfg.sample_period_s
    tp = cfg.spacing_s
    delta1 = _ceil(cfg.digital_delay_ns * 1e-9 / ts)
    delta2 = _ceil(tp / (2 * ts))
    if delta1 > L:
        raise ConfigurationError(
            f"mask centre {delta1} lies beyond the filter length L={L}; "
            f"reduce digital_delay_ns or increase taps_per_branch"
        )

    ratio = tp / (2 * ts)
    if ratio > 1 + _RATIO_TOL:
        lo, hi = delta1 - delta2, delta1 + delta2
    elif abs(ratio - 1) <= _RATIO_TOL:
        lo, hi = delta1, delta1 + 1
    else:
        lo = hi = delta1
    clo, chi = min(max(lo, 1), L), min(max(hi, 1), L)
    if (clo, chi) != (lo, hi):
        log.warning("mask entries [%d, %d] clamped to [%d, %d] (L=%d)", lo, hi, clo, chi, L)

    masks = np.zeros((cfg.n_refs, L))
    masks[:, clo - 1 : chi] = 1.0
    return masks


def all_ones_masks(n_refs: int, taps: int) -> np.ndarray:
    return np.ones((n_refs, taps))


def build_input(histories: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Stack masked per-reference windows (newest sample first) into ``u``.

    ``histories`` and ``masks`` are ``(N, L)``; the result is
    ``[w1 * p1, w2 * p2, ...]``, i.e. the column-stacked ``L x N`` matrix.
    """
    histories = np.asarray(histories, dtype=np.complex128)
    masks = np.asarray(masks)
    if histories.shape != masks.shape:
        raise ContractError(f"history shape {histories.shape} != mask shape {masks.shape}")
    return (histories * masks).reshape(-1)


@dataclass
class FilterState:
    """Weights ``g`` and per-reference delay lines of a running filter bank."""

    weights: np.ndarray
    history: np.ndarray

    @classmethod
    def zeros(cls, n_refs: int, taps: int) -> "FilterState":
        return cls(np.zeros(n_refs * taps, dtype=np.complex128),
                   np.zeros((n_refs, taps), dtype=np.complex128))

    def push(self, samples):
        """Shift one new sample per reference into the delay lines."""
        self.history[:, 1:] = self.history[:, :-1]
        self.history[:, 0] = samples


def nlms_step(state: FilterState, u: np.ndarray, y_i: complex, mu: float, eps: float = NORM_EPS):
    """One NLMS iteration; updates ``state.weights`` in place.

    Returns ``(state, y_hat, e)``. The update is skipped when ``u^H u < eps``.
    """
    y_hat = np.vdot(state.weights, u)
    e = y_i - y_hat
    norm = np.vdot(u, u).real
    if norm >= eps:
        with np.errstate(invalid="ignore", over="ignore"):
            state.weights += mu * np.conj(e) * u / norm
        if not np.all(np.isfinite(state.weights)):
            raise DivergenceError(f"non-finite filter weights (|e|={abs(e):.3g}, u^H u={norm:.3g})")
    return state, y_hat, e


@numba.njit(cache=True)
def _nlms_kernel(y_i, refs, masks, mu, eps):
    n_refs, n = refs.shape
    L = masks.shape[1]
    # Masked entries of u are zero and receive zero update, so only active taps are visited.
    n_act = 0
    for r in range(n_refs):
        for j in range(L):
            if masks[r, j] != 0.0:
                n_act += 1
    act_r = np.empty(n_act, np.int64)
    act_j = np.empty(n_act, np.int64)
    act_m = np.empty(n_act, np.float64)
    i = 0
    for r in range(n_refs):
        for j in range(L):
            if masks[r, j] != 0.0:
                act_r[i] = r
                act_j[i] = j
                act_m[i] = masks[r, j]
                i += 1

    g = np.zeros(n_act, np.complex128)
    u = np.zeros(n_act, np.complex128)
    err = np.empty(n, np.complex128)
    y_hat = np.empty(n, np.complex128)
    diverged = -1
    for k in range(n):
        acc = 0j
        norm = 0.0
        for a in range(n_act):
            idx = k - act_j[a]
            v = refs[act_r[a], idx] * act_m[a] if idx >= 0 else 0j
            u[a] = v
            norm += v.real * v.real + v.imag * v.imag
            acc += g[a].conjugate() * v
        e = y_i[k] - acc
        y_hat[k] = acc
        err[k] = e
        if norm >= eps:
            c = mu * e.conjugate() / norm
            finite = True
            for a in range(n_act):
                g[a] += c * u[a]
                if not (np.isfinite(g[a].real) and np.isfinite(g[a].imag)):
                    finite = False
            if not finite:
                diverged = k
                break
    weights = np.zeros(n_refs * L, np.complex128)
    for a in range(n_act):
        weights[act_r[a] * L + act_j[a]] = g[a]
    return y_hat, err, weights, diverged


def adapt(y_i: np.ndarray, refs: np.ndarray, masks: np.ndarray, mu: float, eps: float = NORM_EPS):
    """Run the masked NLMS bank over whole buffers.

    Returns ``(y_hat, e, final_weights)``; raises DivergenceError if the
    weights stop being finite.
    """
    y_i = np.ascontiguousarray(y_i, dtype=np.complex128)
    refs = np.ascontiguousarray(np.atleast_2d(refs), dtype=np.complex128)
    masks = np.ascontiguousarray(np.atleast_2d(masks), dtype=np.float64)
    if refs.shape[1] != y_i.size:
        raise ContractError(f"reference length {refs.shape[1]} != received length {y_i.size}")
    if masks.shape[0] != refs.shape[0]:
        raise ContractError(f"{masks.shape[0]} masks for {refs.shape[0]} references")
    y_hat, err, w, diverged = _nlms_kernel(y_i, refs, masks, float(mu), float(eps))
    if diverged >= 0:
        raise DivergenceError(f"non-finite filter weights at sample {diverged}")
    return y_hat, err, w


def convergence_start(err: np.ndarray, window: int = CONVERGENCE_WINDOW,
                      tol_db: float = CONVERGENCE_TOL_DB, min_fraction: float = 0.5):
    """Index from which the residual is considered converged.

    The later of ``min_fraction`` of the buffer and the first window whose
    power differs from the preceding window by less than ``tol_db``. If no
    such window exists the tail after ``min_fraction`` is used and
    ``converged`` is False.
    """
    n = err.size
    first = int(math.ceil(n * min_fraction))
    nwin = n // window
    if nwin < 2:
        return first, False
    p = np.mean(np.abs(err[: nwin * window].reshape(nwin, window)) ** 2, axis=1)
    p_db = 10 * np.log10(np.maximum(p, np.finfo(float).tiny))
    j0 = max(1, int(math.ceil(first / window)))
    for j in range(j0, nwin):
        if abs(p_db[j] - p_db[j - 1]) < tol_db:
            return max(first, j * window), True
    return first, False


@dataclass
class CancellationReport:
    residual_power_dbm: float
    converged: bool
    samples_used: int
    theory_power_dbm: float | None = None
    realized_delays: dict = field(default_factory=dict)
    branch_weight_energy: list = field(default_factory=list)
    active_taps: int = 0
    allocated_taps: int = 0
    weights: np.ndarray | None = field(default=None, repr=False)
    error: np.ndarray | None = field(default=None, repr=False)


def _check_inputs(y_i: SampleBuffer, refs, cfg: CancellerConfig):
    rate = 1.0 / cfg.sample_period_s
    for i, b in enumerate([y_i, *refs]):
        if not np.isclose(b.rate_hz, rate, rtol=1e-9):
            raise ContractError(
                f"buffer {i} is at {b.rate_hz / 1e6:g} MHz, canceller runs at {rate / 1e6:g} MHz"
            )
        if len(b) != len(y_i):
            raise ContractError("received and reference buffers must have equal length")
    if len(refs) != cfg.n_refs:
        raise ContractError(f"config expects {cfg.n_refs} references, got {len(refs)}")


def _cancel(y_i: SampleBuffer, refs, cfg: CancellerConfig, masks: np.ndarray) -> CancellationReport:
    _check_inputs(y_i, refs, cfg)
    ref_mat = np.vstack([r.samples for r in refs])
    _, err, w = adapt(y_i.samples, ref_mat, masks, cfg.step_size)
    start, converged = convergence_start(err)
    tail = err[start:]
    energy = np.sum(np.abs(w.reshape(cfg.n_refs, cfg.taps_per_branch)) ** 2, axis=1)
    return CancellationReport(
        residual_power_dbm=float(w_to_dbm(np.mean(np.abs(tail) ** 2))),
        converged=converged,
        samples_used=int(tail.size),
        branch_weight_energy=[float(v) for v in energy],
        active_taps=int(np.count_nonzero(masks)),
        allocated_taps=cfg.allocated_taps,
        weights=w,
        error=err,
    )


def run_single_tap(y_i: SampleBuffer, y_r: SampleBuffer, cfg: CancellerConfig) -> CancellationReport:
    """Single-reference canceller: one ``L``-tap NLMS filter, every tap active."""
    if cfg.n_refs != 1:
        raise ConfigurationError(f"single-tap canceller needs n_refs=1, got {cfg.n_refs}")
    return _cancel(y_i, [y_r], cfg, all_ones_masks(1, cfg.taps_per_branch))


def run_multi_tap(y_i: SampleBuffer, refs, cfg: CancellerConfig, masks=None) -> CancellationReport:
    """Multi-reference masked NLMS canceller.

    ``y_i`` must already carry the digital delay ``cfg.digital_delay_ns``.
    ``masks`` defaults to :func:`compute_masks`.
    """
    if masks is None:
        masks = compute_masks(cfg)
    masks = np.atleast_2d(np.asarray(masks, dtype=float))
    if masks.shape != (cfg.n_refs, cfg.taps_per_branch):
        raise ContractError(f"mask shape {masks.shape} != ({cfg.n_refs}, {cfg.taps_per_branch})")
    if not np.all(masks.any(axis=1)):
        raise ConfigurationError("every reference needs at least one active mask entry")
    return _cancel(y_i, list(refs), cfg, masks)


def nlms_misadjustment(mu: float) -> float:
    """Steady-state NLMS excess error relative to the irreducible error."""
    return mu / (2.0 - mu)


def residual_theory(p_i_dbm: float, model: PhaseNoiseModel, delta_ir_s: float, n_dbm: float) -> float:
    """Residual power ``P_I (1 - K^2) + N`` in dBm for a single-path channel."""
    k = coherence_weight(model, delta_ir_s)
    return float(w_to_dbm(dbm_to_w(p_i_dbm) * (1.0 - k * k) + dbm_to_w(n_dbm)))
