"""Parameter records, derived scales, gauges and lattice index maps.

Units are e = a = hbar = 1 throughout, so h = 2*pi.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterator, Union

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class ModelError(ValueError):
    """Base class for invalid parameters."""


class NonCoprime(ModelError):
    pass


class AlphaOutOfRange(ModelError):
    pass


class NegativeField(ModelError):
    pass


class InvalidDirection(ModelError):
    pass


class NotOnSublattice(ValueError):
    """Extended-lattice point that lies on one of the N-1 non-physical sublattices."""


class UnsupportedGaugePair(ValueError):
    pass


class UndefinedScaledField(ZeroDivisionError):
    """Raised when alpha = 0 and a quantity divided by 2*pi*alpha is requested."""


class Gauge(str, enum.Enum):
    LANDAU_X = "landau_x"  # A = B(0, x)
    LANDAU_Y = "landau_y"  # A = B(-y, 0)
    ROTATED = "rotated"  # field-adapted gauge, rational directions only


@dataclass(frozen=True)
class Rational:
    """Field direction (r, q): F is parallel to (r, q)."""

    r: int
    q: int

    @property
    def beta(self) -> float:
        return self.r / self.q

    @property
    def N(self) -> int:
        return self.r * self.r + self.q * self.q


@dataclass(frozen=True)
class Irrational:
    """Field direction given by a real ratio beta = F_x / F_y."""

    beta: float

    def convergents(self, max_terms: int = 12) -> Iterator[Rational]:
        """Rational approximants r_k/q_k of beta from its continued fraction."""
        x = self.beta
        h0, h1 = 0, 1
        k0, k1 = 1, 0
        for _ in range(max_terms):
            a = math.floor(x)
            h0, h1 = h1, a * h1 + h0
            k0, k1 = k1, a * k1 + k0
            yield Rational(h1, k1)
            frac = x - a
            if frac < 1e-12:
                return
            x = 1.0 / frac


Direction = Union[Rational, Irrational]


@dataclass(frozen=True)
class ModelConfig:
    F: float = 0.0
    direction: Direction = field(default_factory=lambda: Rational(0, 1))
    alpha: float = 0.1
    Jx: float = 1.0
    Jy: float = 1.0
    gauge: Gauge = Gauge.LANDAU_Y

    @property
    def rational(self) -> bool:
        return isinstance(self.direction, Rational)

    @property
    def beta(self) -> float:
        return self.direction.beta

    @property
    def rq(self) -> tuple[int, int]:
        if not isinstance(self.direction, Rational):
            raise InvalidDirection("irrational field direction has no (r, q)")
        return self.direction.r, self.direction.q

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


def rational_config(F: float, r: int, q: int, alpha: float = 0.1, **kw) -> ModelConfig:
    return validate(ModelConfig(F=F, direction=Rational(r, q), alpha=alpha, **kw))


def irrational_config(F: float, beta: float, alpha: float = 0.1, **kw) -> ModelConfig:
    return validate(ModelConfig(F=F, direction=Irrational(beta), alpha=alpha, **kw))


def validate(config: ModelConfig) -> ModelConfig:
    """Check parameter ranges and normalize the direction.

    Negative (r, q) pairs are flipped to the equivalent pair with q >= 1; a
    non-reduced pair is an error rather than being silently reduced.
    """
    d = config.direction
    if isinstance(d, Rational):
        r, q = int(d.r), int(d.q)
        if q < 0 or (q == 0 and r < 0):
            r, q = -r, -q
        if math.gcd(r, q) != 1:
            raise NonCoprime(f"gcd({r}, {q}) = {math.gcd(r, q)} != 1")
        if not (0 <= r <= q and q >= 1):
            raise InvalidDirection(f"need 0 <= r <= q, q >= 1; got ({r}, {q})")
        d = Rational(r, q)
    elif isinstance(d, Irrational):
        if not (0.0 <= d.beta <= 1.0):
            raise InvalidDirection(f"beta must lie in [0, 1], got {d.beta}")
    else:
        raise InvalidDirection(f"unknown direction {d!r}")
    if abs(config.alpha) > 0.5:
        raise AlphaOutOfRange(f"|alpha| <= 1/2 required, got {config.alpha}")
    if config.F < 0:
        raise NegativeField(f"F must be >= 0, got {config.F}")
    if config.Jx < 0 or config.Jy < 0:
        raise ModelError("hopping amplitudes must be non-negative")
    gauge = Gauge(config.gauge)
    if gauge is Gauge.ROTATED and not isinstance(d, Rational):
        raise UnsupportedGaugePair("the rotated gauge needs a rational direction")
    return replace(config, direction=d, gauge=gauge)


@dataclass(frozen=True)
class DerivedScales:
    F_x: float
    F_y: float
    omega_x: float
    omega_y: float
    N: int | None
    d: float
    d_tilde: float
    theta: float | None
    F_cr: float
    v_star: float
    scriptF_x: float
    scriptF_y: float


def field_components(config: ModelConfig) -> tuple[float, float]:
    d = config.direction
    if isinstance(d, Rational):
        s = config.F / math.sqrt(d.N)
        return s * d.r, s * d.q
    norm = math.hypot(1.0, d.beta)
    return config.F * d.beta / norm, config.F / norm


def unit_vectors(config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """(e_eta, e_xi): spreading direction and field direction in the (x, y) plane."""
    d = config.direction
    if isinstance(d, Rational):
        n = math.sqrt(d.N)
        return np.array([d.q, -d.r]) / n, np.array([d.r, d.q]) / n
    n = math.hypot(1.0, d.beta)
    return np.array([1.0, -d.beta]) / n, np.array([d.beta, 1.0]) / n


def derive_scales(config: ModelConfig) -> DerivedScales:
    """Bloch frequencies, lattice spacings and the semiclassical scales.

    Quantities that divide by 2*pi*alpha (v_star and the scaled fields) are
    NaN when alpha = 0; use ``require_alpha`` to turn that into an error.
    """
    Fx, Fy = field_components(config)
    d = config.direction
    if isinstance(d, Rational):
        N = d.N
        spacing = 1.0 / math.sqrt(N)
        coarse = math.sqrt(N)
        theta = 2.0 * math.pi * config.alpha / N
    else:
        N, theta = None, None
        spacing = 1.0 / math.hypot(1.0, d.beta)
        coarse = math.hypot(1.0, d.beta)
    two_pi_alpha = 2.0 * math.pi * config.alpha
    if two_pi_alpha == 0.0:
        v_star = sFx = sFy = math.nan
    else:
        v_star = config.F / two_pi_alpha
        sFx, sFy = Fx / two_pi_alpha, Fy / two_pi_alpha
    return DerivedScales(
        F_x=Fx,
        F_y=Fy,
        omega_x=Fx,
        omega_y=Fy,
        N=N,
        d=spacing,
        d_tilde=coarse,
        theta=theta,
        F_cr=abs(two_pi_alpha) * min(config.Jx, config.Jy),
        v_star=v_star,
        scriptF_x=sFx,
        scriptF_y=sFy,
    )


def require_alpha(config: ModelConfig) -> None:
    if config.alpha == 0:
        raise UndefinedScaledField("alpha = 0: scaled fields and v* are undefined")


def to_extended(l, m, r: int, q: int):
    """Original site (l, m) -> extended-lattice index (s, p). Works on arrays."""
    return q * l - r * m, r * l + q * m


def on_sublattice(s, p, r: int, q: int):
    N = r * r + q * q
    return (q * s + r * p) % N == 0


def from_extended(s: int, p: int, r: int, q: int) -> tuple[int, int]:
    """Inverse of :func:`to_extended`.

    Raises NotOnSublattice when (s, p) is not the image of an original site.
    """
    N = r * r + q * q
    a, b = q * s + r * p, q * p - r * s
    if a % N or b % N:
        raise NotOnSublattice(f"({s}, {p}) is not on the physical sublattice for (r, q) = ({r}, {q})")
    return a // N, b // N


def from_extended_array(s, p, r: int, q: int):
    """Vectorised inverse; returns (l, m, mask) with mask marking physical points."""
    s = np.asarray(s)
    p = np.asarray(p)
    N = r * r + q * q
    a, b = q * s + r * p, q * p - r * s
    mask = (a % N == 0) & (b % N == 0)
    return a // N, b // N, mask


def gauge_chi(gauge: Gauge, l, m, config: ModelConfig):
    """Phase exponent chi of ``gauge`` relative to the LandauY gauge.

    A state in LandauY maps to ``gauge`` as psi -> exp(i chi) psi. Every gauge
    here carries the same flux 2*pi*alpha per plaquette as the LandauY
    Hamiltonian, so the maps are exact unitary equivalences.
    """
    gauge = Gauge(gauge)
    l = np.asarray(l)
    m = np.asarray(m)
    a2 = 2.0 * math.pi * config.alpha
    if gauge is Gauge.LANDAU_Y:
        return np.zeros(np.broadcast(l, m).shape)
    if gauge is Gauge.LANDAU_X:
        return -a2 * l * m
    if gauge is Gauge.ROTATED:
        if not config.rational:
            raise UnsupportedGaugePair("rotated gauge requires a rational direction")
        r, q = config.rq
        N = r * r + q * q
        # integer-valued polynomial whose lattice differences reproduce A_rot - A_y
        g = -q * (l * (l - 1) // 2) + r * l * m + q * (m * (m - 1) // 2)
        return -(a2 * r / N) * g
    raise UnsupportedGaugePair(f"unknown gauge {gauge!r}")


def gauge_phase(source: Gauge, target: Gauge, l, m, config: ModelConfig):
    """Unit phase converting amplitudes from gauge ``source`` to ``target``."""
    return np.exp(1j * (gauge_chi(target, l, m, config) - gauge_chi(source, l, m, config)))


def alpha_fraction(alpha: float, max_den: int = 10_000) -> Fraction | None:
    """alpha as an exact small fraction when it is one, else None."""
    f = Fraction(alpha).limit_denominator(max_den)
    return f if abs(float(f) - alpha) < 1e-13 else None
