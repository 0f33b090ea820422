"""UPA array responses, Rician gains and post-compensation channels.

The satellite carries an ``m_x`` by ``m_y`` uniform planar array with
half-wavelength spacing. Every user is described by its space angles, its
average channel power and its Rician factor; after the user terminal removes
the satellite Doppler and the minimum propagation delay, the per-subcarrier
channel factors into a fixed unit-norm direction times a scalar gain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "UpaConfig",
    "SpaceAngles",
    "UserChannelStats",
    "PathSet",
    "OfdmParams",
    "ChannelRealization",
    "ula_response",
    "upa_response",
    "upa_responses",
    "rician_moments",
    "sample_gain",
    "sample_gain_power",
    "synthesize_paths",
    "effective_gain",
    "common_phase",
    "raw_gain",
    "effective_channel",
    "substream",
]


@dataclass(frozen=True)
class UpaConfig:
    """Antenna counts along the x and y axes of the satellite UPA."""

    m_x: int
    m_y: int

    def __post_init__(self):
        for name in ("m_x", "m_y"):
            value = getattr(self, name)
            if int(value) != value or value < 2 or value % 2:
                raise ValueError(f"{name} must be an even integer >= 2, got {value!r}")

    @property
    def m(self) -> int:
        return self.m_x * self.m_y


@dataclass(frozen=True)
class SpaceAngles:
    """Dimensionless space angles, both in ``[-1, 1)``."""

    theta_x: float
    theta_y: float

    def __post_init__(self):
        for name in ("theta_x", "theta_y"):
            value = float(getattr(self, name))
            if not (-1.0 <= value < 1.0):
                raise ValueError(f"{name} must lie in [-1, 1), got {value!r}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_physical(cls, angle_x: float, angle_y: float) -> "SpaceAngles":
        """Build space angles from the physical angles (radians) to the x and y axes."""
        return cls(math.sin(angle_y) * math.cos(angle_x), math.cos(angle_y))


@dataclass(frozen=True)
class UserChannelStats:
    """Statistical CSI of one user: direction, channel power and Rician factor.

    ``kappa`` may be ``math.inf`` for a pure line-of-sight gain.
    """

    angles: SpaceAngles
    gamma: float
    kappa: float

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma!r}")
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa!r}")


@dataclass(frozen=True)
class PathSet:
    """Multipath ray parameters of one user.

    Path 0 is the line-of-sight ray. ``delays`` are absolute propagation delays;
    the satellite Doppler ``doppler_sat`` is shared by all paths.
    """

    gains: np.ndarray
    doppler_sat: float
    doppler_ut: np.ndarray
    delays: np.ndarray

    def __post_init__(self):
        gains = np.atleast_1d(np.asarray(self.gains, dtype=complex))
        doppler_ut = np.atleast_1d(np.asarray(self.doppler_ut, dtype=float))
        delays = np.atleast_1d(np.asarray(self.delays, dtype=float))
        if gains.ndim != 1 or gains.size == 0:
            raise ValueError("a path set needs at least one path")
        if doppler_ut.shape != gains.shape or delays.shape != gains.shape:
            raise ValueError("gains, doppler_ut and delays must have the same length")
        for arr in (gains, doppler_ut, delays):
            arr.flags.writeable = False
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "doppler_ut", doppler_ut)
        object.__setattr__(self, "delays", delays)

    @property
    def p_count(self) -> int:
        return self.gains.size

    @property
    def tau_min(self) -> float:
        return float(self.delays.min())

    @property
    def delay_offsets(self) -> np.ndarray:
        """Delays relative to the earliest path."""
        return self.delays - self.tau_min


@dataclass(frozen=True)
class OfdmParams:
    n_us: int
    n_cp: int
    t_s: float

    def __post_init__(self):
        if self.n_us < 1:
            raise ValueError("n_us must be positive")
        if self.n_cp < 0:
            raise ValueError("n_cp must be non-negative")
        if not self.t_s > 0:
            raise ValueError("t_s must be positive")

    @property
    def t_us(self) -> float:
        return self.n_us * self.t_s

    @property
    def t_cp(self) -> float:
        return self.n_cp * self.t_s


@dataclass(frozen=True)
class ChannelRealization:
    """A channel vector stored as unit-norm direction times scalar gain."""

    direction: np.ndarray
    gain: complex
    vector: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        direction = np.asarray(self.direction, dtype=complex)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
            raise ValueError("direction must have unit Euclidean norm")
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "gain", complex(self.gain))
        object.__setattr__(self, "vector", direction * self.gain)


def ula_response(m: int, angle: float) -> np.ndarray:
    """Unit-norm ULA response ``exp(-j*pi*i*angle)/sqrt(m)``, ``i = 0..m-1``."""
    if m < 1:
        raise ValueError("m must be at least 1")
    return np.exp(-1j * np.pi * np.arange(m) * angle) / math.sqrt(m)


def upa_response(cfg: UpaConfig, angles: SpaceAngles) -> np.ndarray:
    """Kronecker product of the x-axis and y-axis ULA responses.

    Element ``p * m_y + q`` is the product of x-component ``p`` and y-component ``q``.
    """
    return np.kron(ula_response(cfg.m_x, angles.theta_x), ula_response(cfg.m_y, angles.theta_y))


def upa_responses(cfg: UpaConfig, theta_x, theta_y) -> np.ndarray:
    """Row-stacked UPA responses for arrays of space angles, shape ``(K, M)``."""
    tx = np.asarray(theta_x, dtype=float).reshape(-1, 1)
    ty = np.asarray(theta_y, dtype=float).reshape(-1, 1)
    vx = np.exp(-1j * np.pi * tx * np.arange(cfg.m_x)) / math.sqrt(cfg.m_x)
    vy = np.exp(-1j * np.pi * ty * np.arange(cfg.m_y)) / math.sqrt(cfg.m_y)
    return (vx[:, :, None] * vy[:, None, :]).reshape(tx.shape[0], cfg.m)


def rician_moments(gamma: float, kappa: float) -> tuple[float, float]:
    """Mean and standard deviation of the real (and imaginary) part of a Rician gain."""
    if math.isinf(kappa):
        return math.sqrt(gamma / 2.0), 0.0
    mean = math.sqrt(kappa * gamma / (2.0 * (kappa + 1.0)))
    std = math.sqrt(gamma / (2.0 * (kappa + 1.0)))
    return mean, std


def sample_gain(stats: UserChannelStats, rng: np.random.Generator, size=None):
    """Draw Rician gains whose real and imaginary parts are i.i.d. Gaussian."""
    mean, std = rician_moments(stats.gamma, stats.kappa)
    re = mean + std * rng.standard_normal(size)
    im = mean + std * rng.standard_normal(size)
    return re + 1j * im


def sample_gain_power(means, stds, rng: np.random.Generator) -> np.ndarray:
    """``|g|^2`` for one gain per user, given per-user part means and deviations.

    Consumes ``2 * len(means)`` standard normals, real parts first.
    """
    means = np.asarray(means, dtype=float)
    z = rng.standard_normal((2, means.size))
    re = means + stds * z[0]
    im = means + stds * z[1]
    return re * re + im * im


def synthesize_paths(
    stats: UserChannelStats,
    p_count: int,
    delay_spread: float,
    doppler_spread: float,
    doppler_sat: float,
    tau_min: float,
    rng: np.random.Generator,
) -> PathSet:
    """Draw a ray-level realization whose aggregate gain is Rician(kappa, gamma).

    The LOS ray carries ``sqrt(kappa*gamma/(kappa+1))`` with a uniform phase, no
    UT Doppler and the minimum delay. The remaining ``p_count - 1`` rays share the
    scattered power ``gamma/(kappa+1)`` equally, with UT Doppler uniform in
    ``[-doppler_spread, doppler_spread]`` and delay offsets uniform in
    ``[0, delay_spread]``. A single-ray set keeps the scattered part on that ray
    so the total power stays ``gamma``.
    """
    if p_count < 1:
        raise ValueError("p_count must be at least 1")
    if delay_spread < 0 or doppler_spread < 0:
        raise ValueError("spreads must be non-negative")
    gamma, kappa = stats.gamma, stats.kappa
    if math.isinf(kappa):
        los_power, nlos_power = gamma, 0.0
    else:
        los_power, nlos_power = kappa * gamma / (kappa + 1.0), gamma / (kappa + 1.0)

    phase = rng.uniform(0.0, 2.0 * math.pi)
    los = math.sqrt(los_power) * np.exp(1j * phase)
    n_scatter = p_count - 1
    if n_scatter == 0:
        scatter = math.sqrt(nlos_power / 2.0) * (rng.standard_normal() + 1j * rng.standard_normal())
        gains = np.array([los + scatter])
    else:
        sigma = math.sqrt(nlos_power / (2.0 * n_scatter))
        scatter = sigma * (rng.standard_normal(n_scatter) + 1j * rng.standard_normal(n_scatter))
        gains = np.concatenate(([los], scatter))

    doppler_ut = np.concatenate(([0.0], rng.uniform(-doppler_spread, doppler_spread, n_scatter)))
    offsets = np.concatenate(([0.0], rng.uniform(0.0, delay_spread, n_scatter)))
    return PathSet(gains, float(doppler_sat), doppler_ut, tau_min + offsets)


def _cis(time_cycles, freq_cycles):
    """``exp(j*2*pi*(a - b))`` with each cycle count reduced modulo 1 first."""
    a = np.fmod(time_cycles, 1.0)
    b = np.fmod(freq_cycles, 1.0)
    return np.exp(2j * np.pi * (a - b))


def effective_gain(paths: PathSet, t: float, f: float) -> complex:
    """Gain left after Doppler and delay compensation at time ``t``, frequency ``f``."""
    return complex(np.sum(paths.gains * _cis(t * paths.doppler_ut, f * paths.delay_offsets)))


def common_phase(paths: PathSet, t: float, f: float) -> complex:
    """The factor ``exp(j*2*pi*(t*nu_sat - f*tau_min))`` removed by compensation."""
    return complex(_cis(t * paths.doppler_sat, f * paths.tau_min))


def raw_gain(paths: PathSet, t: float, f: float) -> complex:
    """Uncompensated gain summed directly over absolute Doppler shifts and delays."""
    doppler = paths.doppler_sat + paths.doppler_ut
    return complex(np.sum(paths.gains * _cis(t * doppler, f * paths.delays)))


def effective_channel(
    cfg: UpaConfig,
    stats: UserChannelStats,
    paths_or_gain,
    ofdm: OfdmParams,
    symbol: int,
    subcarrier: int,
) -> ChannelRealization:
    """Channel of one user on OFDM symbol ``symbol`` and subcarrier ``subcarrier``.

    ``paths_or_gain`` is either a :class:`PathSet`, sampled at
    ``t = symbol*(T_us + T_cp)`` and ``f = subcarrier/T_us``, or a scalar gain
    used as-is (flat fading).
    """
    if not 0 <= subcarrier < ofdm.n_us:
        raise ValueError(f"subcarrier {subcarrier} outside [0, {ofdm.n_us})")
    direction = upa_response(cfg, stats.angles)
    if isinstance(paths_or_gain, PathSet):
        t = symbol * (ofdm.t_us + ofdm.t_cp)
        f = subcarrier / ofdm.t_us
        gain = effective_gain(paths_or_gain, t, f)
    else:
        gain = complex(paths_or_gain)
    return ChannelRealization(direction, gain)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator derived from ``seed`` and an integer key path.

    The same ``(seed, key)`` always yields the same stream, whatever order
    the streams are created in.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))
