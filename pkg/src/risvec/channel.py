"""
Line-of-sight channel model for the RIS-assisted uplink.

Every vehicle reaches the base station only through the RIS. Both hops are
pure-LoS Rician links: a path-loss amplitude times a unit-modulus steering
vector of a uniform linear array. The received power of vehicle k is
``p_o * |h_rb^H Theta h_kr|^2 / sigma^2``.

All functions here are pure.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    check_complex_vector,
    check_position,
    check_positive,
)
from .exceptions import DimensionError, DomainError

SPEED_OF_LIGHT = 299_792_458.0


def dbm_to_watts(dbm):
    return 10.0 ** ((float(dbm) - 30.0) / 10.0)


def phase_alphabet(bits):
    """Return the ``2**bits`` equally spaced phases ``2*pi*m / 2**bits``."""
    if bits < 0:
        raise DomainError(f"phase resolution must be >= 0 bits, got {bits}")
    levels = 2 ** int(bits)
    return 2.0 * np.pi * np.arange(levels) / levels


@dataclass(frozen=True)
class SystemGeometry:
    """Fixed deployment: BS and RIS coordinates plus the RIS array layout.

    ``element_spacing`` defaults to half a wavelength.
    """

    bs_pos: tuple = (0.0, 0.0, 25.0)
    ris_pos: tuple = (220.0, 220.0, 25.0)
    wavelength: float = SPEED_OF_LIGHT / 2e9
    element_spacing: float | None = None
    n_elements: int = 40

    def __post_init__(self):
        bs = tuple(float(v) for v in check_position(self.bs_pos, "bs_pos"))
        ris = tuple(float(v) for v in check_position(self.ris_pos, "ris_pos"))
        if bs == ris:
            raise DomainError("bs_pos and ris_pos must differ")
        check_positive(self.wavelength, "wavelength")
        spacing = self.wavelength / 2 if self.element_spacing is None else self.element_spacing
        check_positive(spacing, "element_spacing")
        if int(self.n_elements) != self.n_elements or self.n_elements < 1:
            raise DomainError(f"n_elements must be an integer >= 1, got {self.n_elements}")
        object.__setattr__(self, "bs_pos", bs)
        object.__setattr__(self, "ris_pos", ris)
        object.__setattr__(self, "element_spacing", float(spacing))
        object.__setattr__(self, "n_elements", int(self.n_elements))

    @property
    def d_rb(self):
        return float(np.linalg.norm(np.subtract(self.bs_pos, self.ris_pos)))


@dataclass(frozen=True)
class ChannelParams:
    """Large-scale parameters. ``rician_factor=math.inf`` means pure LoS."""

    rho: float = 1e-3
    alpha_rb: float = 2.5
    alpha_kr: float = 2.2
    rician_factor: float = 10.0
    noise_dbm: float = -110.0

    def __post_init__(self):
        check_positive(self.rho, "rho")
        check_positive(self.alpha_rb, "alpha_rb")
        check_positive(self.alpha_kr, "alpha_kr")
        if not self.rician_factor >= 0:
            raise DomainError(f"rician_factor must be >= 0, got {self.rician_factor}")
        if not math.isfinite(self.noise_dbm):
            raise DomainError("noise_dbm must be finite")

    @property
    def noise_power(self):
        """Noise power in watts."""
        return dbm_to_watts(self.noise_dbm)


@dataclass(frozen=True)
class PhaseShiftMatrix:
    """Diagonal RIS reflection matrix stored as alphabet indices.

    ``indices[n] = m`` selects the phase ``2*pi*m / 2**bits`` for element n.
    """

    indices: np.ndarray
    bits: int
    amplitudes: np.ndarray = field(default=None)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        levels = 2 ** int(self.bits)
        if self.bits < 0:
            raise DomainError(f"bits must be >= 0, got {self.bits}")
        if idx.size and (idx.min() < 0 or idx.max() >= levels):
            raise DomainError(f"phase indices must lie in [0, {levels - 1}]")
        if self.amplitudes is None:
            amp = np.ones(idx.size)
        else:
            amp = np.asarray(self.amplitudes, dtype=np.float64).reshape(-1)
            if amp.shape != idx.shape:
                raise DimensionError("amplitudes and indices must have equal length")
            if np.any(amp < 0) or np.any(amp > 1):
                raise DomainError("amplitudes must lie in [0, 1]")
        idx.setflags(write=False)
        amp.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "bits", int(self.bits))
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def zeros(cls, n_elements, bits):
        return cls(np.zeros(n_elements, dtype=np.int64), bits)

    def __len__(self):
        return self.indices.size

    def __eq__(self, other):
        if not isinstance(other, PhaseShiftMatrix):
            return NotImplemented
        return (
            self.bits == other.bits
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.amplitudes, other.amplitudes)
        )

    @property
    def phases(self):
        return phase_alphabet(self.bits)[self.indices]

    @property
    def coefficients(self):
        """Diagonal entries ``beta_n * exp(j theta_n)``."""
        return self.amplitudes * np.exp(1j * self.phases)

    def rotated(self, steps):
        """Add a common alphabet step to every phase (modulo the alphabet)."""
        levels = 2 ** self.bits
        return PhaseShiftMatrix((self.indices + steps) % levels, self.bits, self.amplitudes)


def los_steering(n, d_r, wavelength, sin_angle):
    """Unit-modulus ULA response ``exp(-j 2 pi / lambda * i * d_r * sin_angle)``."""
    sin_angle = float(sin_angle)
    if not math.isfinite(sin_angle) or abs(sin_angle) > 1.0:
        raise DomainError(f"sin_angle must be finite and in [-1, 1], got {sin_angle}")
    if int(n) != n or n < 1:
        raise DomainError(f"n must be an integer >= 1, got {n}")
    check_positive(wavelength, "wavelength")
    step = 2.0 * np.pi / wavelength * d_r * sin_angle
    return np.exp(-1j * step * np.arange(int(n)))


def sin_angle_between(from_pos, to_pos):
    """Sine of the elevation of ``to_pos`` seen from ``from_pos``: ``dz / d``.

    The RIS is treated as a linear array along the vertical axis, so the
    steering phase depends only on the height difference.
    """
    a = check_position(from_pos, "from_pos")
    b = check_position(to_pos, "to_pos")
    diff = b - a
    dist = float(np.linalg.norm(diff))
    if dist == 0.0:
        raise DomainError("positions coincide; angle undefined")
    return float(np.clip(diff[2] / dist, -1.0, 1.0))


def pathloss_amplitude(d, alpha, rho, rician_factor):
    """``sqrt(rho * d**-alpha) * sqrt(R / (1 + R))``."""
    d = float(d)
    if not d > 0:
        raise DomainError(f"distance must be > 0, got {d}")
    if math.isinf(rician_factor):
        los_share = 1.0
    else:
        los_share = rician_factor / (1.0 + rician_factor)
    return math.sqrt(rho * d ** (-alpha)) * math.sqrt(los_share)


def ris_bs_gain(geom, params):
    """Static RIS -> BS channel vector (length N)."""
    sin_rb = sin_angle_between(geom.ris_pos, geom.bs_pos)
    amp = pathloss_amplitude(geom.d_rb, params.alpha_rb, params.rho, params.rician_factor)
    return amp * los_steering(geom.n_elements, geom.element_spacing, geom.wavelength, sin_rb)


def vu_ris_gain(vu_pos, geom, params):
    """Vehicle -> RIS channel vector for the current slot."""
    vu = check_position(vu_pos, "vu_pos")
    d = float(np.linalg.norm(vu - np.asarray(geom.ris_pos)))
    if d == 0.0:
        raise DomainError("vehicle position coincides with the RIS")
    sin_kr = sin_angle_between(vu, geom.ris_pos)
    amp = pathloss_amplitude(d, params.alpha_kr, params.rho, params.rician_factor)
    return amp * los_steering(geom.n_elements, geom.element_spacing, geom.wavelength, sin_kr)


def vu_ris_gains(positions, geom, params):
    """Stack :func:`vu_ris_gain` over a (K, 3) array of positions."""
    return np.stack([vu_ris_gain(p, geom, params) for p in np.asarray(positions)])


def cascaded_channel(h_rb, h_kr):
    """Per-element cascade ``conj(h_rb) * h_kr``; works for (N,) or (K, N) ``h_kr``."""
    return np.conj(h_rb) * h_kr


def composite_gain(h_rb, theta, h_kr):
    """Reflected power gain ``|h_rb^H Theta h_kr|^2``."""
    h_rb = check_complex_vector(h_rb, "h_rb")
    h_kr = check_complex_vector(h_kr, "h_kr", length=h_rb.size)
    if len(theta) != h_rb.size:
        raise DimensionError(f"theta has {len(theta)} elements, expected {h_rb.size}")
    return float(np.abs(np.sum(cascaded_channel(h_rb, h_kr) * theta.coefficients)) ** 2)


def snr(p_o, gain, noise_power):
    if not noise_power > 0:
        raise DomainError(f"noise power must be > 0, got {noise_power}")
    return p_o * gain / noise_power
