"""User pairs, multi-group scenarios and hybrid beamformer containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ArrayGeometry, SphericalLocation, array_response, los_channel

__all__ = ["UserGroup", "UserScenario", "HybridBeamformer"]


@dataclass(frozen=True)
class UserGroup:
    """A NOMA pair: the near user (NU) decodes with SIC, the far user (FU) does not."""

    near: SphericalLocation
    far: SphericalLocation

    def __post_init__(self):
        if self.near.range_m <= 0 or self.far.range_m <= 0:
            raise ValueError("user ranges must be positive")

    @property
    def shares_direction(self) -> bool:
        return (np.isclose(self.near.azimuth_rad, self.far.azimuth_rad, atol=1e-12)
                and np.isclose(self.near.elevation_rad, self.far.elevation_rad, atol=1e-12))

    @property
    def users(self) -> tuple[SphericalLocation, SphericalLocation]:
        return self.near, self.far


@dataclass
class UserScenario:
    """Array geometry plus ``K`` user groups and the per-user QoS rate targets."""

    geometry: ArrayGeometry
    groups: list[UserGroup]
    qos_n: float = 1.0
    qos_f: float = 1.0
    _channels: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.groups = list(self.groups)
        if not self.groups:
            raise ValueError("scenario needs at least one group")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def responses(self, which: str) -> np.ndarray:
        """Array responses of every NU (``which='near'``) or FU, shape ``(M_t, K)``."""
        return np.column_stack([array_response(self.geometry, getattr(g, which)) for g in self.groups])

    def channels(self, which: str) -> np.ndarray:
        """LoS channel vectors ``h`` of every NU or FU, shape ``(M_t, K)``."""
        if which not in self._channels:
            self._channels[which] = np.column_stack(
                [los_channel(self.geometry, getattr(g, which)).gains for g in self.groups])
        return self._channels[which]

    def check_steering(self) -> None:
        for i, g in enumerate(self.groups):
            if not g.shares_direction:
                raise ValueError(f"group {i}: NU and FU must share a direction for beam steering")
            if not g.near.range_m < g.far.range_m:
                raise ValueError(f"group {i}: NU range must be below FU range")


@dataclass
class HybridBeamformer:
    """DMA amplitudes ``W`` (``M_t x K``) and per-group digital vectors.

    ``digital[:, i]`` is ``v_i``.  For a split design, ``digital`` holds the
    NU sub-beam ``v_{i,N}`` and ``digital_far`` the FU sub-beam ``v_{i,F}``.
    """

    weights: np.ndarray
    digital: np.ndarray
    digital_far: np.ndarray | None = None
    waveguide_phase: np.ndarray | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.digital = np.asarray(self.digital, dtype=complex)
        if self.weights.ndim != 2 or self.digital.shape[0] != self.weights.shape[1]:
            raise ValueError("digital vectors must have one entry per DMA feed")
        if self.digital_far is not None:
            self.digital_far = np.asarray(self.digital_far, dtype=complex)
            if self.digital_far.shape != self.digital.shape:
                raise ValueError("split sub-beams must have matching shapes")

    @property
    def is_split(self) -> bool:
        return self.digital_far is not None

    @property
    def n_groups(self) -> int:
        return self.digital.shape[1]

    @property
    def analog(self) -> np.ndarray:
        if self.waveguide_phase is None:
            return self.weights.astype(complex)
        return self.weights * self.waveguide_phase

    def group_vectors(self) -> np.ndarray:
        """Composite digital vectors (``v_N + v_F`` for a split design)."""
        return self.digital if not self.is_split else self.digital + self.digital_far

    def effective(self, which: str = "sum") -> np.ndarray:
        """Effective transmit vectors ``W v``, shape ``(M_t, K)``.

        ``which`` selects the composite (``'sum'``), NU (``'near'``) or FU
        (``'far'``) sub-beams; the latter two coincide for steering designs.
        """
        w = self.analog
        if which == "sum":
            return w @ self.group_vectors()
        if which == "near" or not self.is_split:
            return w @ self.digital
        if which == "far":
            return w @ self.digital_far
        raise ValueError(f"unknown sub-beam selector {which!r}")

    def to_dict(self) -> dict:
        out = {
            "layout": ("weights: real M_t x K row-major, element index (v-1)*m_h + (h-1); "
                       "digital*: complex K x K row-major with column i the vector of group i, "
                       "stored as interleaved [re, im] pairs"),
            "shape_weights": list(self.weights.shape),
            "weights": np.real(self.weights).ravel().tolist(),
            "digital": _interleave(self.digital),
        }
        if self.is_split:
            out["digital_far"] = _interleave(self.digital_far)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "HybridBeamformer":
        m, k = d["shape_weights"]
        w = np.asarray(d["weights"], dtype=float).reshape(m, k)
        v = _deinterleave(d["digital"], (k, k))
        vf = _deinterleave(d["digital_far"], (k, k)) if "digital_far" in d else None
        return cls(w, v, vf)


def _interleave(z: np.ndarray) -> list:
    z = np.asarray(z, dtype=complex).ravel()
    return np.column_stack([z.real, z.imag]).ravel().tolist()


def _deinterleave(x, shape) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    return (x[:, 0] + 1j * x[:, 1]).reshape(shape)
