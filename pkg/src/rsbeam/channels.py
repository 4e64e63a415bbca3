"""Channel generation and uncertainty-ball perturbation sampling.

Estimates are drawn i.i.d. standard complex Gaussian (unit per-entry
variance) or taken from a deterministic correlated two-user pair used by
the desk-scale sweeps.  Perturbations within a radius-``delta`` ball are
sampled uniformly in the ball (interior mode) or uniformly on the sphere
(boundary mode); worst-case evaluation suites mix the two half-and-half
because the rate minimum over a ball is generically attained at the
boundary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from rsbeam.core import ChannelSet, ConfigError


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derived_seed(*parts: int) -> np.random.SeedSequence:
    """Deterministic per-task seed derived from a tuple of integers."""
    return np.random.SeedSequence(list(parts))


def sample_rayleigh(M: int, K: int, seed, delta=0.0) -> ChannelSet:
    """K estimated channels with i.i.d. CN(0, 1) entries, reproducible by seed."""
    if M < 1 or K < 1:
        raise ConfigError("M and K must be at least 1")
    rng = _rng(seed)
    h = (rng.standard_normal((K, M)) + 1j * rng.standard_normal((K, M))) / np.sqrt(2.0)
    return ChannelSet(h, np.broadcast_to(np.asarray(delta, float), (K,)))


def correlated_pair(gamma: float, theta: float, delta=0.0) -> ChannelSet:
    """Deterministic two-user pair with tunable strength and angle disparity.

    ``h_1 = [1, 1, 1, 1]`` and ``h_2 = gamma * [1, e^{j theta}, e^{j 2 theta},
    e^{j 3 theta}]`` on M = 4 antennas; ``gamma`` in (0, 1] controls the
    strength imbalance and ``theta`` the correlation of the two users.
    """
    if not 0.0 < gamma <= 1.0:
        raise ConfigError("gamma must lie in (0, 1]")
    h1 = np.ones(4, dtype=complex)
    h2 = gamma * np.exp(1j * theta * np.arange(4))
    return ChannelSet(np.vstack([h1, h2]), np.broadcast_to(np.asarray(delta, float), (2,)))


def sample_perturbation(delta: float, M: int, seed, mode: str = "interior") -> np.ndarray:
    """One complex error vector with norm at most (or exactly) ``delta``.

    ``interior``: uniform in the complex M-ball of radius ``delta`` (Gaussian
    direction, radius ``delta * U**(1/(2M))``).  ``boundary``: norm exactly
    ``delta``.
    """
    if delta < 0:
        raise ConfigError("negative radius")
    rng = _rng(seed)
    g = rng.standard_normal(M) + 1j * rng.standard_normal(M)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        g = np.ones(M, dtype=complex)
        norm = np.linalg.norm(g)
    direction = g / norm
    if mode == "boundary":
        return delta * direction
    if mode == "interior":
        radius = delta * rng.uniform() ** (1.0 / (2 * M))
        return radius * direction
    raise ValueError(f"unknown mode {mode!r}")


def perturbation_batch(
    delta: float, M: int, n: int, seed, boundary_fraction: float = 0.5
) -> np.ndarray:
    """(n, M) batch of ball perturbations, first part boundary, rest interior."""
    rng = _rng(seed)
    g = rng.standard_normal((n, M)) + 1j * rng.standard_normal((n, M))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    directions = g / norms
    n_boundary = int(round(boundary_fraction * n))
    radii = np.empty(n)
    radii[:n_boundary] = delta
    radii[n_boundary:] = delta * rng.uniform(size=n - n_boundary) ** (1.0 / (2 * M))
    return directions * radii[:, None]


@dataclass(frozen=True)
class ChannelRealization:
    """True channels paired with their estimates; truth stays inside the ball."""

    h_true: np.ndarray
    h_hat: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        gaps = np.linalg.norm(self.h_true - self.h_hat, axis=1)
        if np.any(gaps > self.delta + 1e-12):
            raise ConfigError("true channel outside the uncertainty ball")


def realize(channels: ChannelSet, seed, mode: str = "interior") -> ChannelRealization:
    """Draw a true channel inside each user's uncertainty ball."""
    rng = _rng(seed)
    errors = np.vstack(
        [sample_perturbation(channels.delta[k], channels.M, rng, mode) for k in range(channels.K)]
    )
    return ChannelRealization(channels.h_hat + errors, channels.h_hat, channels.delta)


def channel_set_to_json(channels: ChannelSet) -> str:
    """Serialize to the fixture format ``{"M", "K", "h_hat", "delta"}``."""
    doc = {
        "M": channels.M,
        "K": channels.K,
        "h_hat": [
            [[float(z.real), float(z.imag)] for z in row] for row in channels.h_hat
        ],
        "delta": [float(d) for d in channels.delta],
    }
    return json.dumps(doc)


def channel_set_from_json(text: str) -> ChannelSet:
    """Inverse of :func:`channel_set_to_json`."""
    doc = json.loads(text)
    h = np.array(
        [[complex(re, im) for re, im in row] for row in doc["h_hat"]], dtype=complex
    )
    if h.shape != (doc["K"], doc["M"]):
        raise ConfigError("h_hat shape does not match M, K")
    return ChannelSet(h, np.asarray(doc["delta"], dtype=float))
