"""Construction of the lifted per-iteration convex program.

Everything problem-specific lives here: the ball-robust quadratic
constraints converted to linear matrix inequalities with nonnegative
multipliers, the affine minorants that replace the convex sides of the
difference-of-convex constraints, the per-iteration subproblem solved by
the ascent loop, and the initialization feasibility program.

Variable bookkeeping: each M-by-M Hermitian matrix variable is carried as
M^2 real scalars (M diagonal entries plus real/imaginary parts of the upper
triangle), so a K-user instance with a common stream uses
(K+1) M^2 + 11 K + 1 reals plus one multiplier per robust block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from rsbeam.core import ChannelSet, SystemConfig
from rsbeam.conic_ir import ConicProblem, HermExpr, LinExpr
from rsbeam.fbl_math import q_inv

BETA_CLAMP = 1e-6
EXP_GUARD = 700.0


class DegenerateExpansion(ValueError):
    """An expansion point sits where a minorant derivative is singular."""


def stream_penalties(cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-user penalty coefficients for the common and private streams.

    Both streams share the blocklength, so the two arrays coincide; they are
    carried separately because the constraint chains consume them
    independently.
    """
    d = np.array([q_inv(eps) / math.sqrt(cfg.L) for eps in cfg.epsilon])
    return d.copy(), d.copy()


# ---------------------------------------------------------------------------
# Hermitian matrix variables over scalar-indexed pools
# ---------------------------------------------------------------------------

class HermVar:
    """An M-by-M Hermitian matrix variable backed by M^2 real scalars."""

    def __init__(self, start: int, M: int):
        self.start = start
        self.M = M
        self.indices = list(range(start, start + M * M))
        self._basis: list[np.ndarray] = []
        for i in range(M):
            E = np.zeros((M, M), dtype=complex)
            E[i, i] = 1.0
            self._basis.append(E)
        for i in range(M):
            for j in range(i + 1, M):
                Er = np.zeros((M, M), dtype=complex)
                Er[i, j] = 1.0
                Er[j, i] = 1.0
                self._basis.append(Er)
                Ei = np.zeros((M, M), dtype=complex)
                Ei[i, j] = 1.0j
                Ei[j, i] = -1.0j
                self._basis.append(Ei)

    def expr(self) -> HermExpr:
        return HermExpr(self.M, dict(zip(self.indices, self._basis)))

    def trace(self) -> LinExpr:
        return LinExpr({self.indices[i]: 1.0 for i in range(self.M)})

    def value(self, x: np.ndarray) -> np.ndarray:
        W = np.zeros((self.M, self.M), dtype=complex)
        for idx, B in zip(self.indices, self._basis):
            W += x[idx] * B
        return W


class VarPool:
    """Allocates scalar and Hermitian-matrix variables on one index space."""

    def __init__(self):
        self.n = 0

    def scalar(self) -> int:
        i = self.n
        self.n += 1
        return i

    def scalars(self, k: int) -> list[int]:
        out = list(range(self.n, self.n + k))
        self.n += k
        return out

    def herm(self, M: int) -> HermVar:
        v = HermVar(self.n, M)
        self.n += M * M
        return v


def herm_quad(expr: HermExpr, h: np.ndarray) -> LinExpr:
    """``h^H A(x) h`` as a real affine expression (A Hermitian-valued)."""
    coeffs = {i: float(np.real(h.conj() @ C @ h)) for i, C in expr.coeffs.items()}
    const = float(np.real(h.conj() @ expr.const @ h))
    return LinExpr(coeffs, const)


# ---------------------------------------------------------------------------
# First-order minorants of the convex constraint sides
# ---------------------------------------------------------------------------

class Affine1(NamedTuple):
    """``f(v) = const + slope * v``."""

    const: float
    slope: float

    def __call__(self, v: float) -> float:
        return self.const + self.slope * v


class Affine2(NamedTuple):
    """``f(x, y) = const + slope_x * x + slope_y * y``."""

    const: float
    slope_x: float
    slope_y: float

    def __call__(self, x: float, y: float) -> float:
        return self.const + self.slope_x * x + self.slope_y * y


def minorant_dispersion(beta0: float, d: float) -> Affine1:
    """Tangent of ``-d * sqrt(1 - (1+beta)^-2)`` at ``beta0``.

    The function is convex on beta > 0, so the tangent minorizes it
    everywhere; the derivative is singular at beta = 0, hence the positive
    expansion-point requirement (callers clamp tiny values up to 1e-6).
    """
    if d < 0:
        raise ValueError("penalty coefficient must be nonnegative")
    if d == 0.0:
        return Affine1(0.0, 0.0)
    if beta0 <= 1e-12:
        raise DegenerateExpansion("dispersion minorant needs beta0 > 0")
    root = math.sqrt(1.0 - (1.0 + beta0) ** -2)
    slope = -d / (root * (1.0 + beta0) ** 3)
    value = -d * root
    return Affine1(value - slope * beta0, slope)


def minorant_exp_diff(x0: float, y0: float) -> Affine2:
    """Tangent plane of ``exp(x - y)`` at ``(x0, y0)``; a global minorant."""
    if not (math.isfinite(x0) and math.isfinite(y0)):
        raise DegenerateExpansion("expansion point must be finite")
    if x0 - y0 > EXP_GUARD:
        raise DegenerateExpansion("exp(x0 - y0) overflows")
    e = math.exp(x0 - y0)
    return Affine2(e * (1.0 - x0 + y0), e, -e)


def minorant_exp(y0: float) -> Affine1:
    """Tangent of ``exp(y)`` at ``y0``; a global minorant."""
    if not math.isfinite(y0):
        raise DegenerateExpansion("expansion point must be finite")
    if y0 > EXP_GUARD:
        raise DegenerateExpansion("exp(y0) overflows")
    e = math.exp(y0)
    return Affine1(e * (1.0 - y0), e)


# ---------------------------------------------------------------------------
# S-procedure blocks for ball-robust quadratic constraints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LmiBlock:
    """One robust-counterpart PSD block of size M + 1."""

    size: int
    body: HermExpr
    kind: str


def lmi_lower_bound(
    A: HermExpr,
    h_hat: np.ndarray,
    delta: float,
    threshold: LinExpr,
    multiplier: int,
    kind: str = "signal_floor",
) -> LmiBlock:
    """Certify ``h^H A h >= threshold`` for every ``h`` within ``delta`` of
    ``h_hat``.

    Returns the block ``[[lam I + A, A h], [h^H A, h^H A h - lam delta^2 -
    threshold]]`` whose positive semidefiniteness, together with
    ``lam >= 0``, is equivalent to the robust inequality.
    """
    if delta < 0:
        raise ValueError("negative radius")
    M = A.size
    body = HermExpr(M + 1)
    for i, C in A.coeffs.items():
        blk = np.zeros((M + 1, M + 1), dtype=complex)
        blk[:M, :M] = C
        col = C @ h_hat
        blk[:M, M] = col
        blk[M, :M] = col.conj()
        blk[M, M] = np.real(h_hat.conj() @ C @ h_hat)
        body.coeffs[i] = blk
    const = np.zeros((M + 1, M + 1), dtype=complex)
    const[:M, :M] = A.const
    col = A.const @ h_hat
    const[:M, M] = col
    const[M, :M] = col.conj()
    const[M, M] = np.real(h_hat.conj() @ A.const @ h_hat)
    body.const = const

    lam_blk = np.zeros((M + 1, M + 1), dtype=complex)
    lam_blk[:M, :M] = np.eye(M)
    lam_blk[M, M] = -delta * delta
    body.coeffs[multiplier] = body.coeffs.get(multiplier, 0.0) + lam_blk

    for i, v in threshold.coeffs.items():
        blk = body.coeffs.get(i)
        if blk is None:
            blk = np.zeros((M + 1, M + 1), dtype=complex)
            body.coeffs[i] = blk
        blk[M, M] -= v
    body.const[M, M] -= threshold.const
    return LmiBlock(M + 1, body, kind)


def lmi_upper_bound(
    B: HermExpr,
    h_hat: np.ndarray,
    delta: float,
    cap: LinExpr,
    multiplier: int,
    kind: str = "interference_cap",
) -> LmiBlock:
    """Certify ``h^H B h <= cap`` over the same uncertainty ball."""
    block = lmi_lower_bound(-B, h_hat, delta, -cap, multiplier, kind)
    return LmiBlock(block.size, block.body, kind)


# ---------------------------------------------------------------------------
# Per-iteration subproblem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpansionPoint:
    """The point around which the convex constraint sides are linearized."""

    beta_c: np.ndarray
    x_c: np.ndarray
    y_c: np.ndarray
    beta_p: np.ndarray
    x_p: np.ndarray
    y_p: np.ndarray

    def __post_init__(self):
        for name in ("beta_c", "x_c", "y_c", "beta_p", "x_p", "y_p"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(arr)):
                raise DegenerateExpansion(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        if np.any(self.beta_c < 0) or np.any(self.beta_p < 0):
            raise DegenerateExpansion("beta entries must be nonnegative")


class SubproblemHandle(NamedTuple):
    """A built subproblem plus the variable map needed to decode solutions."""

    problem: ConicProblem
    W_c: HermVar | None
    W_k: list[HermVar]
    c: list[int]
    t: int
    aux: dict
    multipliers: dict


def _clamped(beta: np.ndarray) -> np.ndarray:
    return np.maximum(beta, BETA_CLAMP)


def assemble_subproblem(
    cfg: SystemConfig,
    channels: ChannelSet,
    point: ExpansionPoint,
    d_c: np.ndarray | None = None,
    d_p: np.ndarray | None = None,
    include_common: bool = True,
) -> SubproblemHandle:
    """Build one iteration's convex program around ``point``.

    Maximizes the minimum total user rate ``t`` subject to the linearized
    rate chains, the exact exponential-cone rows, the four robust PSD blocks
    per user (signal floors and interference caps for both streams), the
    power budget, and nonnegativity.  Users with ``delta = 0`` get exact
    affine rows in place of robust blocks.  ``d_c``/``d_p`` default to the
    config-derived penalties; zeros give the infinite-blocklength variant.
    ``include_common=False`` drops the common stream and its variables
    entirely (no-rate-splitting reduction).
    """
    K, M = cfg.K, cfg.M
    if channels.K != K or channels.M != M:
        raise ValueError("channel set does not match config dimensions")
    if d_c is None or d_p is None:
        dc_auto, dp_auto = stream_penalties(cfg)
        d_c = dc_auto if d_c is None else d_c
        d_p = dp_auto if d_p is None else d_p

    pool = VarPool()
    W_c = pool.herm(M) if include_common else None
    W_k = [pool.herm(M) for _ in range(K)]
    c = pool.scalars(K) if include_common else []
    t = pool.scalar()
    aux: dict[str, list[int]] = {}
    if include_common:
        for name in ("beta_c", "x_c", "y_c", "t_c", "q_c"):
            aux[name] = pool.scalars(K)
    for name in ("beta_p", "x_p", "y_p", "t_p", "q_p"):
        aux[name] = pool.scalars(K)
    multipliers: dict[str, list[int]] = {name: [] for name in
                                         ("lambda_c", "lambda_bar_c", "lambda_p", "lambda_bar_p")}
    robust = [channels.delta[k] > 0 for k in range(K)]
    for k in range(K):
        if robust[k]:
            if include_common:
                multipliers["lambda_c"].append(pool.scalar())
                multipliers["lambda_bar_c"].append(pool.scalar())
            multipliers["lambda_p"].append(pool.scalar())
            multipliers["lambda_bar_p"].append(pool.scalar())
        else:
            if include_common:
                multipliers["lambda_c"].append(-1)
                multipliers["lambda_bar_c"].append(-1)
            multipliers["lambda_p"].append(-1)
            multipliers["lambda_bar_p"].append(-1)

    prob = ConicProblem(pool.n, LinExpr.variable(t))

    sum_w = W_k[0].expr()
    for wk in W_k[1:]:
        sum_w = sum_w + wk.expr()

    beta_c0 = _clamped(point.beta_c)
    beta_p0 = _clamped(point.beta_p)

    for k in range(K):
        h = channels.h_hat[k]
        delta = float(channels.delta[k])
        s2 = cfg.sigma2[k]

        if include_common:
            f1 = minorant_exp_diff(point.x_c[k], point.y_c[k])
            f2 = minorant_dispersion(beta_c0[k], float(d_c[k]))
            f3 = minorant_exp(point.y_c[k])
            beta, x, y = aux["beta_c"][k], aux["x_c"][k], aux["y_c"][k]
            tc, qc = aux["t_c"][k], aux["q_c"][k]

            # sum_j c_j - f2(beta) <= ln(1 + beta)
            v = LinExpr({j: 1.0 for j in c}) - LinExpr({beta: f2.slope}, f2.const)
            prob.add_log_hypograph(LinExpr.variable(beta), v)
            # beta <= f1(x, y)
            prob.add_linear(
                LinExpr({beta: 1.0, x: -f1.slope_x, y: -f1.slope_y}), "<=", f1.const
            )
            # q <= f3(y)
            prob.add_linear(LinExpr({qc: 1.0, y: -f3.slope}), "<=", f3.const)
            # exp(x) <= t_c
            prob.add_exp_epigraph(LinExpr.variable(x), LinExpr.variable(tc))
            # t_c <= h^H W_c h and h^H Z h <= q_c - sigma^2, robust over the ball
            if robust[k]:
                prob.add_psd(
                    lmi_lower_bound(
                        W_c.expr(), h, delta, LinExpr.variable(tc),
                        multipliers["lambda_c"][k], "common_signal_floor",
                    ).body
                )
                prob.add_psd(
                    lmi_upper_bound(
                        sum_w, h, delta, LinExpr({qc: 1.0}, -s2),
                        multipliers["lambda_bar_c"][k], "common_interference_cap",
                    ).body
                )
            else:
                prob.add_linear(LinExpr.variable(tc) - herm_quad(W_c.expr(), h), "<=", 0.0)
                prob.add_linear(herm_quad(sum_w, h) - LinExpr({qc: 1.0}, -s2), "<=", 0.0)

        f4 = minorant_dispersion(beta_p0[k], float(d_p[k]))
        f5 = minorant_exp(point.y_p[k])
        f6 = minorant_exp_diff(point.x_p[k], point.y_p[k])
        beta, x, y = aux["beta_p"][k], aux["x_p"][k], aux["y_p"][k]
        tp, qp = aux["t_p"][k], aux["q_p"][k]

        # t - c_k - f4(beta) <= ln(1 + beta)
        v = LinExpr({t: 1.0}) - LinExpr({beta: f4.slope}, f4.const)
        if include_common:
            v = v - LinExpr.variable(c[k])
        prob.add_log_hypograph(LinExpr.variable(beta), v)
        prob.add_linear(
            LinExpr({beta: 1.0, x: -f6.slope_x, y: -f6.slope_y}), "<=", f6.const
        )
        prob.add_linear(LinExpr({qp: 1.0, y: -f5.slope}), "<=", f5.const)
        prob.add_exp_epigraph(LinExpr.variable(x), LinExpr.variable(tp))

        interference = None
        for j in range(K):
            if j != k:
                interference = W_k[j].expr() if interference is None else interference + W_k[j].expr()
        if interference is None:
            interference = HermExpr(M)
        if robust[k]:
            prob.add_psd(
                lmi_lower_bound(
                    W_k[k].expr(), h, delta, LinExpr.variable(tp),
                    multipliers["lambda_p"][k], "private_signal_floor",
                ).body
            )
            prob.add_psd(
                lmi_upper_bound(
                    interference, h, delta, LinExpr({qp: 1.0}, -s2),
                    multipliers["lambda_bar_p"][k], "private_interference_cap",
                ).body
            )
        else:
            prob.add_linear(LinExpr.variable(tp) - herm_quad(W_k[k].expr(), h), "<=", 0.0)
            prob.add_linear(herm_quad(interference, h) - LinExpr({qp: 1.0}, -s2), "<=", 0.0)

    power = W_k[0].trace()
    for wk in W_k[1:]:
        power = power + wk.trace()
    if include_common:
        power = power + W_c.trace()
    prob.add_linear(power, "<=", cfg.P_max)

    for idx in c:
        prob.add_linear(LinExpr({idx: -1.0}), "<=", 0.0)
    for name, idxs in multipliers.items():
        for idx in idxs:
            if idx >= 0:
                prob.add_linear(LinExpr({idx: -1.0}), "<=", 0.0)

    if include_common:
        prob.add_psd(W_c.expr())
    for wk in W_k:
        prob.add_psd(wk.expr())

    # precondition the SINR-chain columns by their expansion values, which
    # span many orders of magnitude at high SNR
    col_scale = np.ones(pool.n)

    def put(idx: int, value: float):
        col_scale[idx] = min(max(value, 1e-9), 1e12)

    for k in range(K):
        if include_common:
            put(aux["beta_c"][k], math.exp(min(point.x_c[k] - point.y_c[k], EXP_GUARD)))
            put(aux["t_c"][k], math.exp(min(point.x_c[k], EXP_GUARD)))
            put(aux["q_c"][k], math.exp(min(point.y_c[k], EXP_GUARD)))
        put(aux["beta_p"][k], math.exp(min(point.x_p[k] - point.y_p[k], EXP_GUARD)))
        put(aux["t_p"][k], math.exp(min(point.x_p[k], EXP_GUARD)))
        put(aux["q_p"][k], math.exp(min(point.y_p[k], EXP_GUARD)))
    prob.col_scale = col_scale

    return SubproblemHandle(prob, W_c, W_k, c, t, aux, multipliers)


def decode_lifted(handle: SubproblemHandle, x: np.ndarray):
    """Read a solver primal back into matrices and auxiliary arrays."""
    from rsbeam.core import LiftedSolution, hermitize

    K = len(handle.W_k)
    zeros = np.zeros(K)

    def aux_arr(name):
        if name not in handle.aux:
            return zeros.copy()
        return np.array([x[i] for i in handle.aux[name]])

    def mult_arr(name):
        idxs = handle.multipliers.get(name, [])
        if not idxs:
            return zeros.copy()
        return np.array([x[i] if i >= 0 else 0.0 for i in idxs])

    W_c = hermitize(handle.W_c.value(x)) if handle.W_c is not None else None
    W_k = np.stack([hermitize(w.value(x)) for w in handle.W_k])
    c = np.array([x[i] for i in handle.c]) if handle.c else zeros.copy()
    return LiftedSolution(
        W_c=W_c,
        W_k=W_k,
        c=c,
        t=float(x[handle.t]),
        beta_c=aux_arr("beta_c"),
        x_c=aux_arr("x_c"),
        y_c=aux_arr("y_c"),
        t_c=aux_arr("t_c"),
        q_c=aux_arr("q_c"),
        beta_p=aux_arr("beta_p"),
        x_p=aux_arr("x_p"),
        y_p=aux_arr("y_p"),
        t_p=aux_arr("t_p"),
        q_p=aux_arr("q_p"),
        lambda_c=mult_arr("lambda_c"),
        lambda_bar_c=mult_arr("lambda_bar_c"),
        lambda_p=mult_arr("lambda_p"),
        lambda_bar_p=mult_arr("lambda_bar_p"),
    )


def expansion_from_lifted(lifted) -> ExpansionPoint:
    """Next linearization point from a subproblem optimizer."""
    return ExpansionPoint(
        beta_c=np.maximum(lifted.beta_c, 0.0),
        x_c=lifted.x_c,
        y_c=lifted.y_c,
        beta_p=np.maximum(lifted.beta_p, 0.0),
        x_p=lifted.x_p,
        y_p=lifted.y_p,
    )


# ---------------------------------------------------------------------------
# Initialization feasibility program
# ---------------------------------------------------------------------------

class FeasibilityHandle(NamedTuple):
    problem: ConicProblem
    W_c: HermVar | None
    W_k: list[HermVar]
    margin: int


def assemble_feasibility(
    cfg: SystemConfig,
    channels: ChannelSet,
    c0: np.ndarray,
    a_c: np.ndarray | None,
    a_p: np.ndarray,
    include_common: bool = True,
) -> FeasibilityHandle:
    """Build the initialization program for fixed rate shares ``c0``.

    For given target SINRs ``a_c`` (common, from the rate sum of ``c0``) and
    ``a_p`` (private, from rate zero), finds lifted beamformers whose
    worst-case SINRs meet the targets over every channel ball:
    ``h^H (W_c - a_c sum_j W_j) h >= sigma^2 a_c + s`` and
    ``h^H (W_k - a_p sum_{j != k} W_j) h >= sigma^2 a_p + s``.  Rather than
    a bare feasibility check, the smallest block slack ``s`` is maximized so
    that success yields a strictly interior starting point; a negative
    optimum certifies infeasibility of the targets.
    """
    K, M = cfg.K, cfg.M
    c0 = np.atleast_1d(np.asarray(c0, dtype=float))
    if np.any(c0 < 0):
        raise ValueError("rate shares must be nonnegative")

    pool = VarPool()
    W_c = pool.herm(M) if include_common else None
    W_k = [pool.herm(M) for _ in range(K)]
    margin = pool.scalar()
    prob = ConicProblem(0, LinExpr.variable(margin))
    eta: list[int] = []

    sum_w = W_k[0].expr()
    for wk in W_k[1:]:
        sum_w = sum_w + wk.expr()

    for k in range(K):
        h = channels.h_hat[k]
        delta = float(channels.delta[k])
        s2 = cfg.sigma2[k]

        if include_common:
            target = LinExpr({margin: 1.0}, s2 * float(a_c[k]))
            U = W_c.expr() - float(a_c[k]) * sum_w
            if delta > 0:
                eta.append(pool.scalar())
                prob.add_psd(
                    lmi_lower_bound(U, h, delta, target, eta[-1],
                                    "init_common_floor").body
                )
            else:
                prob.add_linear(target - herm_quad(U, h), "<=", 0.0)

        interference = None
        for j in range(K):
            if j != k:
                interference = W_k[j].expr() if interference is None else interference + W_k[j].expr()
        Q = W_k[k].expr()
        if interference is not None:
            Q = Q - float(a_p[k]) * interference
        target = LinExpr({margin: 1.0}, s2 * float(a_p[k]))
        if delta > 0:
            eta.append(pool.scalar())
            prob.add_psd(
                lmi_lower_bound(Q, h, delta, target, eta[-1],
                                "init_private_floor").body
            )
        else:
            prob.add_linear(target - herm_quad(Q, h), "<=", 0.0)

    power = W_k[0].trace()
    for wk in W_k[1:]:
        power = power + wk.trace()
    if include_common:
        power = power + W_c.trace()
    prob.add_linear(power, "<=", cfg.P_max)

    for i in eta:
        prob.add_linear(LinExpr({i: -1.0}), "<=", 0.0)

    if include_common:
        prob.add_psd(W_c.expr())
    for wk in W_k:
        prob.add_psd(wk.expr())

    prob.n_vars = pool.n
    return FeasibilityHandle(prob, W_c, W_k, margin)
