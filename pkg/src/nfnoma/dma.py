"""Holographic DMA weight model.

The optimisers work with a real amplitude matrix in ``[0, 1]``; the
waveguide phase of the reference wave is an optional fixed factor that can
be applied on top via :func:`effective_weight_matrix`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ArrayGeometry, SphericalLocation, element_position

__all__ = [
    "DmaWeights",
    "FeedLayout",
    "default_feed_layout",
    "reference_wave",
    "objective_wave",
    "holographic_amplitude",
    "holographic_weights",
    "effective_weight_matrix",
]


@dataclass(frozen=True)
class FeedLayout:
    feed_positions: np.ndarray
    propagation_vector: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.feed_positions, dtype=float))
        if pos.shape[0] < 1 or pos.shape[1] != 3:
            raise ValueError("feed_positions must be a non-empty (K, 3) array")
        object.__setattr__(self, "feed_positions", pos)
        object.__setattr__(self, "propagation_vector",
                           np.asarray(self.propagation_vector, dtype=float).reshape(3))

    @property
    def n_feeds(self) -> int:
        return self.feed_positions.shape[0]


@dataclass
class DmaWeights:
    """Amplitude matrix (``M_t x K``) and optional unit-modulus waveguide phase."""

    amplitudes: np.ndarray
    waveguide_phase: np.ndarray | None = None

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=float)
        if amp.ndim != 2:
            raise ValueError("amplitudes must be a 2-D array")
        if np.any(amp < 0) or np.any(amp > 1):
            raise ValueError("amplitudes must lie in [0, 1]")
        self.amplitudes = amp
        if self.waveguide_phase is not None:
            ph = np.asarray(self.waveguide_phase, dtype=complex)
            if ph.shape != amp.shape:
                raise ValueError("waveguide_phase must match the amplitude shape")
            if not np.allclose(np.abs(ph), 1.0, atol=1e-12):
                raise ValueError("waveguide_phase entries must have unit modulus")
            self.waveguide_phase = ph


def default_feed_layout(geom: ArrayGeometry, n_feeds: int,
                        propagation_vector=(0.0, 0.0, 0.0)) -> FeedLayout:
    """Feeds spread uniformly along the bottom row of the aperture."""
    y = (np.arange(1, geom.m_v + 1) - (geom.m_v + 1) / 2) * geom.spacing_m
    z_bottom = (1 - (geom.m_h + 1) / 2) * geom.spacing_m
    ys = np.linspace(y[0], y[-1], n_feeds) if n_feeds > 1 else np.array([0.0])
    feeds = np.column_stack([np.zeros(n_feeds), ys, np.full(n_feeds, z_bottom)])
    return FeedLayout(feeds, np.asarray(propagation_vector, dtype=float))


def reference_wave(layout: FeedLayout, geom: ArrayGeometry, k: int, v: int, h: int) -> complex:
    """Reference wave from feed ``k`` (0-based) at element ``(v, h)``."""
    disp = element_position(geom, v, h) - layout.feed_positions[k]
    return complex(np.exp(-1j * layout.propagation_vector @ disp))


def objective_wave(geom: ArrayGeometry, v: int, h: int, target: SphericalLocation) -> complex:
    r_f = geom.wavenumber * target.direction
    return complex(np.exp(-1j * r_f @ element_position(geom, v, h)))


def holographic_amplitude(layout: FeedLayout, geom: ArrayGeometry, k: int, v: int, h: int,
                          target: SphericalLocation) -> complex:
    """Full complex weight ``(Re(G_r G_o*) + 1) / 2 * G_r`` for one element/feed."""
    g_r = reference_wave(layout, geom, k, v, h)
    g_o = objective_wave(geom, v, h, target)
    amp = (np.real(g_r * np.conj(g_o)) + 1) / 2
    return amp * g_r


def holographic_weights(geom: ArrayGeometry, targets, layout: FeedLayout | None = None) -> DmaWeights:
    """Amplitude pattern recording one target per feed, vectorised over elements.

    ``targets`` is a sequence of :class:`SphericalLocation`, one per feed.  The
    waveguide phase of each (element, feed) pair is returned alongside.
    """
    targets = list(targets)
    layout = layout or default_feed_layout(geom, len(targets))
    if layout.n_feeds != len(targets):
        raise ValueError("need exactly one target per feed")
    x = geom.positions
    amp = np.empty((geom.n_elements, len(targets)))
    phase = np.empty_like(amp, dtype=complex)
    for k, tgt in enumerate(targets):
        g_r = np.exp(-1j * (x - layout.feed_positions[k]) @ layout.propagation_vector)
        g_o = np.exp(-1j * x @ (geom.wavenumber * tgt.direction))
        amp[:, k] = (np.real(g_r * np.conj(g_o)) + 1) / 2
        phase[:, k] = g_r
    return DmaWeights(np.clip(amp, 0.0, 1.0), phase)


def effective_weight_matrix(w: DmaWeights) -> np.ndarray:
    if w.waveguide_phase is None:
        return w.amplitudes.astype(complex)
    return w.amplitudes * w.waveguide_phase
