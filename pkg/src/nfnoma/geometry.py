"""Planar array geometry and line-of-sight spherical-wave channels.

The array lies in the y-o-z plane with its central element at the origin.
Element ``(v, h)`` (1-based) sits at ``(0, v~ d, h~ d)`` with
``v~ = v - (m_v + 1) / 2`` and ``h~ = h - (m_h + 1) / 2``.  Flat element
indices are row-major, ``(v - 1) * m_h + (h - 1)`` in 0-based numpy terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

__all__ = [
    "ArrayGeometry",
    "SphericalLocation",
    "ChannelVector",
    "element_position",
    "element_user_distance",
    "element_distances",
    "array_response",
    "array_responses",
    "far_field_response",
    "far_field_responses",
    "free_space_gain",
    "los_channel",
    "rayleigh_distance",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array of ``m_v x m_h`` amplitude-controlled elements.

    Parameters
    ----------
    m_v, m_h : int
        Number of rows (vertical) and columns (horizontal).
    carrier_hz : float
        Carrier frequency in Hz.
    spacing_m : float, optional
        Inter-element spacing.  Defaults to half a wavelength.
    """

    m_v: int
    m_h: int
    carrier_hz: float = 28e9
    spacing_m: float | None = None

    def __post_init__(self):
        if int(self.m_v) < 1 or int(self.m_h) < 1:
            raise ValueError(f"array needs at least one element, got {self.m_v}x{self.m_h}")
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be positive")
        if self.spacing_m is None:
            object.__setattr__(self, "spacing_m", self.wavelength_m / 2)
        elif self.spacing_m <= 0:
            raise ValueError("spacing_m must be positive")

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def wavenumber(self) -> float:
        return 2 * np.pi / self.wavelength_m

    @property
    def n_elements(self) -> int:
        return self.m_v * self.m_h

    @property
    def offsets(self) -> tuple[np.ndarray, np.ndarray]:
        """Centred row/column offsets ``(v~, h~)`` of every element, flat order."""
        v = np.arange(1, self.m_v + 1) - (self.m_v + 1) / 2
        h = np.arange(1, self.m_h + 1) - (self.m_h + 1) / 2
        vv, hh = np.meshgrid(v, h, indexing="ij")
        return vv.ravel(), hh.ravel()

    @property
    def positions(self) -> np.ndarray:
        """Cartesian element coordinates, shape ``(n_elements, 3)``."""
        vt, ht = self.offsets
        return np.column_stack([np.zeros_like(vt), vt * self.spacing_m, ht * self.spacing_m])

    def flat_index(self, v: int, h: int) -> int:
        _check_index(self, v, h)
        return (v - 1) * self.m_h + (h - 1)


@dataclass(frozen=True)
class SphericalLocation:
    """User location as (azimuth, elevation, range).

    The Cartesian image is ``(r cos(az) sin(el), r sin(az) sin(el), r cos(el))``.
    """

    azimuth_rad: float
    elevation_rad: float
    range_m: float

    @property
    def cartesian(self) -> np.ndarray:
        az, el, r = self.azimuth_rad, self.elevation_rad, self.range_m
        return np.array([r * np.cos(az) * np.sin(el), r * np.sin(az) * np.sin(el), r * np.cos(el)])

    @property
    def direction(self) -> np.ndarray:
        """Unit vector from the origin toward the location."""
        az, el = self.azimuth_rad, self.elevation_rad
        return np.array([np.cos(az) * np.sin(el), np.sin(az) * np.sin(el), np.cos(el)])

    def with_range(self, range_m: float) -> "SphericalLocation":
        return SphericalLocation(self.azimuth_rad, self.elevation_rad, range_m)


@dataclass(frozen=True)
class ChannelVector:
    gains: np.ndarray
    path_gain: complex
    location: SphericalLocation = field(repr=False)


def _check_index(geom: ArrayGeometry, v: int, h: int) -> None:
    if not (1 <= v <= geom.m_v and 1 <= h <= geom.m_h):
        raise IndexError(f"element ({v}, {h}) outside a {geom.m_v}x{geom.m_h} array")


def element_position(geom: ArrayGeometry, v: int, h: int) -> np.ndarray:
    """Cartesian coordinate of element ``(v, h)``, 1-based indices."""
    _check_index(geom, v, h)
    vt = v - (geom.m_v + 1) / 2
    ht = h - (geom.m_h + 1) / 2
    return np.array([0.0, vt * geom.spacing_m, ht * geom.spacing_m])


def _closed_form_distance(vt, ht, d, loc: SphericalLocation):
    r, az, el = loc.range_m, loc.azimuth_rad, loc.elevation_rad
    sq = (r**2 + (vt * d) ** 2 + (ht * d) ** 2
          - 2 * r * vt * d * np.sin(az) * np.sin(el)
          - 2 * r * ht * d * np.cos(el))
    # rounding can push an exact zero slightly negative
    return np.sqrt(np.maximum(sq, 0.0))


def element_user_distance(geom: ArrayGeometry, v: int, h: int, loc: SphericalLocation) -> float:
    """Distance from element ``(v, h)`` to ``loc`` using the expanded closed form."""
    _check_index(geom, v, h)
    vt = v - (geom.m_v + 1) / 2
    ht = h - (geom.m_h + 1) / 2
    return float(_closed_form_distance(vt, ht, geom.spacing_m, loc))


def element_distances(geom: ArrayGeometry, loc: SphericalLocation) -> np.ndarray:
    """Distances from every element (flat order) to ``loc``."""
    vt, ht = geom.offsets
    return _closed_form_distance(vt, ht, geom.spacing_m, loc)


def array_response(geom: ArrayGeometry, loc: SphericalLocation) -> np.ndarray:
    """Near-field array response ``exp(-j 2 pi / lambda * ||x_m - s||)``."""
    return np.exp(-1j * geom.wavenumber * element_distances(geom, loc))


def array_responses(geom: ArrayGeometry, azimuth, elevation, range_m) -> np.ndarray:
    """Vectorised responses for broadcastable angle/range arrays.

    Returns an array of shape ``broadcast_shape + (n_elements,)``.
    """
    az, el, r = np.broadcast_arrays(np.asarray(azimuth, float),
                                    np.asarray(elevation, float),
                                    np.asarray(range_m, float))
    vt, ht = geom.offsets
    d = geom.spacing_m
    r_, az_, el_ = r[..., None], az[..., None], el[..., None]
    sq = (r_**2 + (vt * d) ** 2 + (ht * d) ** 2
          - 2 * r_ * vt * d * np.sin(az_) * np.sin(el_)
          - 2 * r_ * ht * d * np.cos(el_))
    return np.exp(-1j * geom.wavenumber * np.sqrt(np.maximum(sq, 0.0)))


def far_field_response(geom: ArrayGeometry, loc: SphericalLocation) -> np.ndarray:
    """Planar-wave response; the first-order expansion of the distance in ``1/r``.

    Independent of ``loc.range_m``.
    """
    vt, ht = geom.offsets
    d = geom.spacing_m
    az, el = loc.azimuth_rad, loc.elevation_rad
    return np.exp(1j * geom.wavenumber * (vt * d * np.sin(az) * np.sin(el) + ht * d * np.cos(el)))


def far_field_responses(geom: ArrayGeometry, azimuth, elevation) -> np.ndarray:
    """Vectorised :func:`far_field_response`, shape ``broadcast_shape + (n_elements,)``."""
    az, el = np.broadcast_arrays(np.asarray(azimuth, float), np.asarray(elevation, float))
    vt, ht = geom.offsets
    d = geom.spacing_m
    phase = vt * d * (np.sin(az) * np.sin(el))[..., None] + ht * d * np.cos(el)[..., None]
    return np.exp(1j * geom.wavenumber * phase)


def free_space_gain(geom: ArrayGeometry, range_m: float) -> complex:
    """Free-space amplitude gain ``lambda / (4 pi r)``."""
    if range_m <= 0:
        raise ZeroDivisionError("path gain is singular at zero range")
    return complex(geom.wavelength_m / (4 * np.pi * range_m))


def los_channel(geom: ArrayGeometry, loc: SphericalLocation,
                path_gain_model: Callable[[ArrayGeometry, float], complex] = free_space_gain,
                response: Callable[[ArrayGeometry, SphericalLocation], np.ndarray] = array_response,
                ) -> ChannelVector:
    """LoS channel ``beta * exp(-j 2 pi r / lambda) * a``."""
    if loc.range_m <= 0:
        raise ZeroDivisionError("LoS channel is singular at zero range")
    beta = path_gain_model(geom, loc.range_m)
    gains = beta * np.exp(-1j * geom.wavenumber * loc.range_m) * response(geom, loc)
    return ChannelVector(gains=gains, path_gain=beta, location=loc)


def rayleigh_distance(geom: ArrayGeometry) -> float:
    """``2 D^2 / lambda`` with ``D`` the aperture diagonal."""
    aperture = geom.spacing_m * np.hypot(geom.m_v - 1, geom.m_h - 1)
    return 2 * aperture**2 / geom.wavelength_m
