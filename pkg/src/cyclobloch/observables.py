"""Moments, rotated-frame projections, fits and regime classification of
propagated wave packets.

Batched packets (one realization per column) are treated as an incoherent
ensemble: densities are averaged over columns before any moment is taken.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np
from scipy.optimize import curve_fit

from .model import ModelConfig, derive_scales, unit_vectors
from .propagator import WavePacket, boundary_leak, ensemble_packets, iterate


class WindowTooShort(ValueError):
    pass


class NonpositiveData(ValueError):
    pass


class Ambiguous(RuntimeError):
    def __init__(self, message: str, scores: dict):
        super().__init__(message)
        self.scores = scores


@dataclass(frozen=True)
class Moments:
    """First and second moments; ``m2_*`` are raw moments, ``var_*`` central ones."""

    x_mean: float
    y_mean: float
    sigma: float
    m2_eta: float
    m2_xi: float
    eta_mean: float
    xi_mean: float
    M2: float

    @property
    def var_eta(self) -> float:
        return max(self.m2_eta - self.eta_mean**2, 0.0)

    @property
    def var_xi(self) -> float:
        return max(self.m2_xi - self.xi_mean**2, 0.0)


def density(packet: WavePacket) -> np.ndarray:
    """Site probabilities, averaged over realizations and normalized."""
    p = packet.probability()
    if p.ndim == 2:
        p = p.mean(axis=1)
    return p / p.sum()


def moments(packet: WavePacket, config: ModelConfig) -> Moments:
    p = density(packet)
    x = packet.strip.l.astype(float)
    y = packet.strip.m.astype(float)
    e_eta, e_xi = unit_vectors(config)
    eta = e_eta[0] * x + e_eta[1] * y
    xi = e_xi[0] * x + e_xi[1] * y
    xm, ym = float(p @ x), float(p @ y)
    M2 = float(p @ (x * x + y * y))
    return Moments(
        x_mean=xm,
        y_mean=ym,
        sigma=math.sqrt(max(M2 - xm * xm - ym * ym, 0.0)),
        m2_eta=float(p @ (eta * eta)),
        m2_xi=float(p @ (xi * xi)),
        eta_mean=float(p @ eta),
        xi_mean=float(p @ xi),
        M2=M2,
    )


def project_eta(packet: WavePacket, config: ModelConfig, bin_width: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """|psi(eta)|^2 summed over xi, binned with width d by default.

    For rational directions eta / d = q l - r m is an integer, so each bin is
    exactly one column of the extended lattice.
    """
    bw = derive_scales(config).d if bin_width is None else float(bin_width)
    if bw <= 0:
        raise ValueError("bin width must be positive")
    e_eta, _ = unit_vectors(config)
    eta = e_eta[0] * packet.strip.l + e_eta[1] * packet.strip.m
    idx = np.rint(eta / bw).astype(np.int64)
    lo = idx.min()
    prob = np.bincount(idx - lo, weights=density(packet))
    centers = (np.arange(prob.size) + lo) * bw
    return centers, prob


@dataclass
class ObservableSeries:
    times: np.ndarray
    x_mean: np.ndarray
    y_mean: np.ndarray
    sigma: np.ndarray
    m2_eta: np.ndarray
    leak: np.ndarray
    m2_xi: np.ndarray = field(default=None)
    eta_mean: np.ndarray = field(default=None)
    xi_mean: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.times)
        for name in ("x_mean", "y_mean", "sigma", "m2_eta", "leak"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has the wrong length")

    @property
    def sqrt_m2_eta(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.m2_eta, 0.0))

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def from_moments(cls, times, snapshots: list[Moments], leaks) -> "ObservableSeries":
        def col(name):
            return np.array([getattr(s, name) for s in snapshots])

        return cls(
            times=np.asarray(times, dtype=float),
            x_mean=col("x_mean"),
            y_mean=col("y_mean"),
            sigma=col("sigma"),
            m2_eta=col("m2_eta"),
            leak=np.asarray(leaks, dtype=float),
            m2_xi=col("m2_xi"),
            eta_mean=col("eta_mean"),
            xi_mean=col("xi_mean"),
        )

    def to_csv(self, path, header: dict | None = None) -> None:
        with open(path, "w") as fh:
            for key, val in (header or {}).items():
                fh.write(f"# {key}={val}\n")
            fh.write("t,x_mean,y_mean,sigma,sqrt_m2_eta,leak\n")
            for row in zip(self.times, self.x_mean, self.y_mean, self.sigma, self.sqrt_m2_eta, self.leak):
                fh.write(",".join(f"{v:.12g}" for v in row) + "\n")


def record(snapshots: Iterable[WavePacket], config: ModelConfig, margin_fraction: float = 0.1) -> ObservableSeries:
    """Collect moments and boundary leak from a stream of snapshots."""
    ts, ms, leaks = [], [], []
    for snap in snapshots:
        ts.append(snap.t)
        ms.append(moments(snap, config))
        leaks.append(boundary_leak(snap, margin_fraction))
    return ObservableSeries.from_moments(ts, ms, leaks)


def _with_initial(packet: WavePacket, stream: Iterator[WavePacket]) -> Iterator[WavePacket]:
    yield packet
    yield from stream


def evolve_series(packet: WavePacket, t_end: float, config: ModelConfig, sample_times=None, scheme: str = "static", **kw) -> ObservableSeries:
    """Propagate and record, including the initial snapshot."""
    if sample_times is None:
        sample_times = np.linspace(packet.t, t_end, 201)[1:]
    sample_times = np.asarray(sample_times, dtype=float)
    sample_times = sample_times[sample_times > packet.t]
    return record(_with_initial(packet, iterate(packet, t_end, config, scheme, sample_times, **kw)), config)


def ensemble_evolve(strip, C_x: float, C_y: float, config: ModelConfig, t_end: float, n_realizations: int = 12, seed: int = 0, sample_times=None, scheme: str = "static", **kw) -> ObservableSeries:
    """Incoherent Gaussian ensemble propagated as one batch."""
    packet = ensemble_packets(strip, C_x, C_y, seed, n_realizations)
    return evolve_series(packet, t_end, config, sample_times, scheme, **kw)


@dataclass(frozen=True)
class FitResult:
    coefficient: float
    exponent: float
    window: tuple[float, float]
    residual: float
    n_points: int = 0

    def summary(self, label: str = "fit") -> str:
        return (
            f"[{label}]\ncoefficient = {self.coefficient:.10g}\nexponent = {self.exponent:.10g}\n"
            f"window = {self.window[0]:.6g} {self.window[1]:.6g}\nresidual = {self.residual:.3e}\nn_points = {self.n_points}\n"
        )


def _relative_rms(y: np.ndarray, fit: np.ndarray) -> float:
    scale = np.sqrt(np.mean(y * y))
    if scale == 0.0:
        return 0.0
    return float(np.sqrt(np.mean((y - fit) ** 2)) / scale)


def transient_estimate(series: ObservableSeries) -> float:
    """First time at which sqrt(m2_eta) exceeds twice its initial value (inf if never)."""
    s = series.sqrt_m2_eta
    hit = np.nonzero(s > 2.0 * s[0])[0]
    return float(series.times[hit[0]]) if hit.size else math.inf


def default_window(series: ObservableSeries, leak_tol: float = 1e-10) -> tuple[float, float]:
    """From max(transient, 10% of the horizon) to the last sample with a clean boundary."""
    t = series.times
    t_tr = transient_estimate(series)
    lo = max(t_tr if math.isfinite(t_tr) else t[0], t[0] + 0.1 * (t[-1] - t[0]))
    clean = np.nonzero(series.leak > leak_tol)[0]
    hi = t[clean[0] - 1] if clean.size and clean[0] > 0 else t[-1]
    return float(lo), float(hi)


def ballistic_fit(series: ObservableSeries, window: tuple[float, float] | None = None) -> FitResult:
    """Least-squares straight line through sqrt(m2_eta)(t); the slope is A."""
    lo, hi = default_window(series) if window is None else window
    sel = (series.times >= lo) & (series.times <= hi)
    if np.count_nonzero(sel) < 10:
        raise WindowTooShort(f"{np.count_nonzero(sel)} samples in [{lo}, {hi}]; need 10")
    t, y = series.times[sel], series.sqrt_m2_eta[sel]
    A, b = np.polyfit(t, y, 1)
    return FitResult(float(A), 1.0, (float(lo), float(hi)), _relative_rms(y, A * t + b), int(t.size))


def scaling_fit(A_of_F) -> FitResult:
    """log A = log c + p log F; returns c and p."""
    data = np.asarray(A_of_F, dtype=float)
    if data.ndim != 2 or data.shape[1] != 2:
        raise ValueError("expected rows (F, A)")
    if data.shape[0] < 4:
        raise WindowTooShort("need at least 4 (F, A) points")
    F, A = data[:, 0], data[:, 1]
    if np.any(F <= 0) or np.any(A <= 0):
        raise NonpositiveData("F and A must be positive for a log-log fit")
    lf, la = np.log(F), np.log(A)
    p, c = np.polyfit(lf, la, 1)
    resid = float(np.sqrt(np.mean((la - (p * lf + c)) ** 2)))
    return FitResult(float(math.exp(c)), float(p), (float(F.min()), float(F.max())), resid, int(F.size))


@dataclass(frozen=True)
class BlochFit:
    amplitude: float
    omega: float
    phase: float
    offset: float
    residual: float


def _dft_peak(t: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Angular frequencies and Hann-windowed power of a uniformly sampled signal."""
    dt = t[1] - t[0]
    if not np.allclose(np.diff(t), dt, rtol=1e-6, atol=1e-9):
        raise ValueError("spectral analysis needs uniform sampling")
    y = (x - x.mean()) * np.hanning(x.size)
    power = np.abs(np.fft.rfft(y)) ** 2
    return 2.0 * math.pi * np.fft.rfftfreq(x.size, dt), power


def bloch_fit(t, x, omega_guess: float | None = None) -> BlochFit:
    """Fit x(t) = c + a cos(w t + phi); w is seeded from the DFT peak (or the guess)."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    w, power = _dft_peak(t, x)
    if omega_guess is None:
        omega_guess = w[1 + np.argmax(power[1:])]

    def model(tt, c, a, b, om):
        return c + a * np.cos(om * tt) + b * np.sin(om * tt)

    # linear least squares for (c, a, b) at the seeded frequency, then a joint refinement
    M = np.column_stack([np.ones_like(t), np.cos(omega_guess * t), np.sin(omega_guess * t)])
    lin = np.linalg.lstsq(M, x, rcond=None)[0]
    p, _ = curve_fit(model, t, x, p0=[*lin, omega_guess])
    c, a, b, om = p
    amp = math.hypot(a, b)
    return BlochFit(amp, abs(om), math.atan2(-b, a), c, _relative_rms(x - x.mean(), model(t, *p) - x.mean()))


def bloch_peak_ratio(t, x, omega: float) -> float:
    """Spectral power near omega divided by the median power (DC excluded)."""
    w, power = _dft_peak(np.asarray(t, float), np.asarray(x, float))
    dw = w[1] - w[0]
    near = np.abs(w - omega) <= 1.5 * dw
    near[0] = False
    bg = np.median(power[1:])
    if not near.any() or power[near].max() == 0.0:
        return 0.0
    if bg == 0.0:
        return math.inf
    return float(power[near].max() / bg)


class Regime(str, enum.Enum):
    TRANSPORTING = "Transporting"
    BALLISTIC = "Ballistic"
    LOCALIZED = "Localized"
    OSCILLATING = "Oscillating"


def regime_scores(series: ObservableSeries, config: ModelConfig) -> dict[Regime, float]:
    """Scores >= 1 mean the criterion of the corresponding regime is met.

    Transporting: displacement / (0.9 v* t), gated by sigma growth < 20%.
    Ballistic: 0.1 / linear-fit residual, gated by at least threefold growth.
    Localized: 3 sqrt(m2_eta)(0) / max sqrt(m2_eta).
    Oscillating: strongest DFT peak at w_x or w_y over the median power, / 5.
    """
    t = series.times
    span = t[-1] - t[0]
    if span < 100.0 / max(config.Jx, config.Jy, 1e-300):
        raise ValueError("series must span at least 100 hopping times")
    sc = derive_scales(config)
    s = series.sqrt_m2_eta
    scores: dict[Regime, float] = {}

    shift = math.hypot(series.x_mean[-1] - series.x_mean[0], series.y_mean[-1] - series.y_mean[0])
    v = abs(sc.v_star) if math.isfinite(sc.v_star) else 0.0
    grow = series.sigma[-1] / max(series.sigma[0], 1e-300)
    scores[Regime.TRANSPORTING] = shift / (0.9 * v * span) if v > 0 and grow < 1.2 else 0.0

    try:
        fit = ballistic_fit(series, (t[0] + 0.1 * span, t[-1]))
        growth = s[-1] / max(s[0], 1e-300)
        scores[Regime.BALLISTIC] = 0.1 / max(fit.residual, 1e-12) if (growth >= 3.0 and fit.coefficient > 0) else 0.0
    except WindowTooShort:
        scores[Regime.BALLISTIC] = 0.0

    scores[Regime.LOCALIZED] = 3.0 * s[0] / max(s.max(), 1e-300)

    try:
        ratios = [bloch_peak_ratio(t, sig, om) for sig in (series.x_mean, series.y_mean) for om in (sc.omega_x, sc.omega_y) if om > 0]
        scores[Regime.OSCILLATING] = max(ratios, default=0.0) / 5.0
    except ValueError:
        scores[Regime.OSCILLATING] = 0.0
    return scores


_PRIORITY = (Regime.TRANSPORTING, Regime.BALLISTIC, Regime.OSCILLATING, Regime.LOCALIZED)


def classify_regime(series: ObservableSeries, config: ModelConfig) -> Regime:
    """First regime (transporting, ballistic, oscillating, localized) whose score reaches 1.

    Oscillation is only reported for runs that are also bounded; bounded runs
    without a Bloch peak are localized.
    """
    scores = regime_scores(series, config)
    for reg in _PRIORITY:
        if scores[reg] < 1.0:
            continue
        if reg is Regime.OSCILLATING and scores[Regime.LOCALIZED] < 1.0:
            continue
        return reg
    raise Ambiguous("no regime criterion met", {k.value: v for k, v in scores.items()})
