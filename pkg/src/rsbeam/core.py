"""Shared domain types, configuration validation, and complex-vector helpers.

All rates are in nats/s/Hz and all powers in linear mW throughout; noise
levels given in dBm are converted once at config-load time.  Every type in
this module is an immutable value after construction and safe to share
across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Raised when a system or experiment configuration violates an invariant."""


def dbm_to_mw(value_dbm: float) -> float:
    """Convert a dBm level to linear milliwatts."""
    return 10.0 ** (value_dbm / 10.0)


def effective_radius(d: float, P: float, alpha: float) -> float:
    """Uncertainty radius that shrinks with transmit power, ``d * P**(-alpha)``.

    ``alpha`` is the CSIT quality exponent in [0, 1]; ``alpha = 0`` keeps a
    fixed radius regardless of power.
    """
    if d < 0:
        raise ConfigError("d must be nonnegative")
    if P <= 0:
        raise ConfigError("P must be positive")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha out of [0, 1]")
    return d * P ** (-alpha)


def _per_user(value, K: int, name: str) -> tuple[float, ...]:
    """Broadcast a scalar to K entries, or validate a length-K sequence."""
    if np.isscalar(value):
        return (float(value),) * K
    out = tuple(float(v) for v in value)
    if len(out) != K:
        raise ConfigError(f"{name} must have one entry per user ({K}), got {len(out)}")
    return out


@dataclass(frozen=True)
class SystemConfig:
    """Static description of one downlink multi-user MISO instance.

    Fields
    ------
    M, K : transmit antenna count and user count.
    L : shared blocklength in channel uses (common and private streams).
    epsilon : per-user block error rate, each in (0, 0.5).
    P_max : transmit power budget in mW.
    sigma2 : per-user noise power, linear mW.
    delta : per-user channel-uncertainty ball radius.
    alpha : per-user CSIT quality exponent in [0, 1].
    d : coefficient of the power-scaled radius ``delta = d * P**(-alpha)``.

    Scalars passed for per-user fields are broadcast to all K users.
    """

    M: int
    K: int
    L: int
    epsilon: tuple[float, ...]
    P_max: float
    sigma2: tuple[float, ...]
    delta: tuple[float, ...]
    alpha: tuple[float, ...] = ()
    d: float = 0.0

    def __init__(
        self,
        M: int,
        K: int,
        L: int,
        epsilon,
        P_max: float,
        sigma2,
        delta,
        alpha=0.0,
        d: float = 0.0,
    ):
        object.__setattr__(self, "M", int(M))
        object.__setattr__(self, "K", int(K))
        object.__setattr__(self, "L", int(L))
        object.__setattr__(self, "epsilon", _per_user(epsilon, int(K), "epsilon"))
        object.__setattr__(self, "P_max", float(P_max))
        object.__setattr__(self, "sigma2", _per_user(sigma2, int(K), "sigma2"))
        object.__setattr__(self, "delta", _per_user(delta, int(K), "delta"))
        object.__setattr__(self, "alpha", _per_user(alpha, int(K), "alpha"))
        object.__setattr__(self, "d", float(d))

    def with_delta(self, delta) -> "SystemConfig":
        """Copy of this config with a different uncertainty radius."""
        return SystemConfig(
            self.M, self.K, self.L, self.epsilon, self.P_max,
            self.sigma2, delta, self.alpha, self.d,
        )

    def with_updates(self, **kwargs) -> "SystemConfig":
        """Copy of this config with the given fields replaced."""
        base = dict(
            M=self.M, K=self.K, L=self.L, epsilon=self.epsilon,
            P_max=self.P_max, sigma2=self.sigma2, delta=self.delta,
            alpha=self.alpha, d=self.d,
        )
        base.update(kwargs)
        return SystemConfig(**base)


def validate_config(cfg: SystemConfig) -> SystemConfig:
    """Check every invariant of ``cfg``; return it unchanged if all hold.

    Raises :class:`ConfigError` naming the first violated field.
    """
    if cfg.M < 1:
        raise ConfigError("M must be at least 1")
    if cfg.K < 1:
        raise ConfigError("K must be at least 1")
    if cfg.L < 1:
        raise ConfigError("L must be at least 1")
    for k, eps in enumerate(cfg.epsilon):
        if not 0.0 < eps < 0.5:
            raise ConfigError(f"epsilon out of range (0, 0.5) for user {k}")
    if not cfg.P_max > 0:
        raise ConfigError("P_max must be positive")
    for k, s2 in enumerate(cfg.sigma2):
        if not s2 > 0:
            raise ConfigError(f"sigma2 must be positive for user {k}")
    for k, dl in enumerate(cfg.delta):
        if dl < 0:
            raise ConfigError(f"negative radius delta for user {k}")
    for k, al in enumerate(cfg.alpha):
        if not 0.0 <= al <= 1.0:
            raise ConfigError(f"alpha out of [0, 1] for user {k}")
    if cfg.d < 0:
        raise ConfigError("d must be nonnegative")
    return cfg


@dataclass(frozen=True)
class ChannelSet:
    """Per-user channel estimates with their uncertainty ball radii.

    ``h_hat`` is a (K, M) complex array of estimated channels; ``delta`` a
    (K,) array of nonnegative radii bounding the estimation error norm.
    """

    h_hat: np.ndarray
    delta: np.ndarray

    def __init__(self, h_hat, delta):
        h = np.atleast_2d(np.asarray(h_hat, dtype=complex))
        d = np.atleast_1d(np.asarray(delta, dtype=float))
        if d.size == 1 and h.shape[0] > 1:
            d = np.full(h.shape[0], d[0])
        if d.shape[0] != h.shape[0]:
            raise ConfigError("one radius per user required")
        if np.any(d < 0):
            raise ConfigError("negative radius")
        h.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "h_hat", h)
        object.__setattr__(self, "delta", d)

    @property
    def K(self) -> int:
        return self.h_hat.shape[0]

    @property
    def M(self) -> int:
        return self.h_hat.shape[1]

    def with_delta(self, delta) -> "ChannelSet":
        return ChannelSet(self.h_hat, np.broadcast_to(np.asarray(delta, float), (self.K,)))


@dataclass(frozen=True)
class BeamformerSet:
    """Common and private beamformers plus the rate-split vector.

    ``w_c`` is the common-stream beamformer (length M), ``w_k`` the (K, M)
    stack of private beamformers, and ``c`` the (K,) nonnegative vector of
    per-user common-rate shares in nats/s/Hz.
    """

    w_c: np.ndarray
    w_k: np.ndarray
    c: np.ndarray

    def __init__(self, w_c, w_k, c):
        wc = np.asarray(w_c, dtype=complex)
        wk = np.atleast_2d(np.asarray(w_k, dtype=complex))
        cs = np.atleast_1d(np.asarray(c, dtype=float))
        for arr in (wc, wk, cs):
            arr.setflags(write=False)
        object.__setattr__(self, "w_c", wc)
        object.__setattr__(self, "w_k", wk)
        object.__setattr__(self, "c", cs)

    def total_power(self) -> float:
        """``||w_c||^2 + sum_k ||w_k||^2``."""
        return float(np.vdot(self.w_c, self.w_c).real + np.sum(np.abs(self.w_k) ** 2))

    def scaled(self, factor: float) -> "BeamformerSet":
        """All beamformers multiplied by ``factor`` (rate shares unchanged)."""
        return BeamformerSet(self.w_c * factor, self.w_k * factor, self.c)


@dataclass(frozen=True)
class LiftedSolution:
    """One solution of the lifted (semidefinite-relaxed) per-iteration problem.

    Holds the PSD lifted beamformers, the rate-split vector, the min-rate
    objective ``t``, the full set of auxiliary variables used by the
    concave-convex iteration (per-user, common ``_c`` and private ``_p``
    chains), and the robust-counterpart multipliers.
    """

    W_c: np.ndarray | None
    W_k: np.ndarray
    c: np.ndarray
    t: float
    beta_c: np.ndarray
    x_c: np.ndarray
    y_c: np.ndarray
    t_c: np.ndarray
    q_c: np.ndarray
    beta_p: np.ndarray
    x_p: np.ndarray
    y_p: np.ndarray
    t_p: np.ndarray
    q_p: np.ndarray
    lambda_c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lambda_bar_c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lambda_p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lambda_bar_p: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def total_trace(self) -> float:
        tr = float(np.trace(self.W_c).real) if self.W_c is not None else 0.0
        return tr + float(sum(np.trace(W).real for W in self.W_k))


@dataclass(frozen=True)
class SchemeResult:
    """Outcome of one scheme run on one channel realization."""

    scheme_id: str
    min_rate: float
    common_rate_sum: float
    iterations: int
    objective_trace: tuple[float, ...]
    feasible: bool
    rank_one: bool
    wall_time: float


def hermitize(W: np.ndarray) -> np.ndarray:
    """Project a nearly-Hermitian matrix onto the Hermitian subspace."""
    return 0.5 * (W + W.conj().T)


def hermitian_defect(W: np.ndarray) -> float:
    """``||W - W^H||`` (Frobenius), zero for exactly Hermitian matrices."""
    return float(np.linalg.norm(W - W.conj().T))


def beamformers_from_lifted(
    lifted: LiftedSolution, vectors_c: np.ndarray | None, vectors_k: Sequence[np.ndarray]
) -> BeamformerSet:
    """Assemble a :class:`BeamformerSet` from extracted rank-one factors."""
    K = lifted.c.shape[0]
    M = lifted.W_k.shape[-1]
    w_c = vectors_c if vectors_c is not None else np.zeros(M, dtype=complex)
    w_k = np.vstack([np.asarray(v, dtype=complex) for v in vectors_k]).reshape(K, M)
    return BeamformerSet(w_c, w_k, lifted.c)
