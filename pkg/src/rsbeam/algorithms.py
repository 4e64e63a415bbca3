"""Iterative ascent and initialization for the lifted max-min design.

Two procedures: the outer concave-convex loop that re-linearizes and
re-solves the lifted subproblem until the objective settles, with rank-one
extraction or Gaussian randomization at the end; and the feasible-point
search that draws rate shares, inverts them to SINR targets, solves the
robust SINR-feasibility program, and fills the auxiliary variables by the
worst-case closed forms.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from rsbeam.core import BeamformerSet, ChannelSet, LiftedSolution, SchemeResult, SystemConfig
from rsbeam.conic_ir import solve
from rsbeam.fbl_math import fbl_rate, target_sinr_bisect
from rsbeam.sdr_builder import (
    ExpansionPoint,
    assemble_feasibility,
    assemble_subproblem,
    decode_lifted,
    expansion_from_lifted,
    stream_penalties,
)

INIT_DRAWS = 50


class InfeasibleStart(RuntimeError):
    """No feasible starting point was found within the retry budget."""


class DegenerateStart(ValueError):
    """A beamformer's worst-case signal power is nonpositive over the ball."""


@dataclass(frozen=True)
class CccpSettings:
    """Knobs of the ascent loop.

    ``tol``: stop when the objective change drops below this.
    ``max_iters``: iteration cap.  ``randomization_draws``: Gaussian
    candidates drawn when the relaxation is not rank-one tight.
    ``rank_one_ratio_threshold``: second-to-first eigenvalue ratio below
    which a lifted matrix counts as rank one.  ``n_starts``: independent
    starting points, keeping the best certified result.
    ``stall_patience``: consecutive non-improving iterations tolerated
    before declaring the numerical progress floor reached.
    """

    tol: float = 1e-6
    max_iters: int = 100
    randomization_draws: int = 200
    rank_one_ratio_threshold: float = 1e-4
    n_starts: int = 1
    solver_tol: float = 1e-8
    stall_patience: int = 3

    def __post_init__(self):
        if self.tol <= 0 or self.max_iters < 1 or self.randomization_draws < 1:
            raise ValueError("invalid settings")


@dataclass(frozen=True)
class InitialPoint:
    """Feasible start: beamformers, rate shares, expansion point, objective."""

    beamformers: BeamformerSet
    expansion: ExpansionPoint
    t0: float


@dataclass(frozen=True)
class CccpOutcome:
    lifted: LiftedSolution
    beamformers: BeamformerSet
    result: SchemeResult


def extract_rank_one(W: np.ndarray) -> tuple[np.ndarray, float]:
    """Top eigenpair as a beamformer plus the rank-one tightness ratio.

    Returns ``sqrt(lam_1) u_1`` and ``lam_2 / lam_1`` (0 when ``lam_1 = 0``);
    ratios at or below the acceptance threshold mean the relaxation was
    tight and the factor carries the full trace.
    """
    vals, vecs = np.linalg.eigh(0.5 * (W + W.conj().T))
    top = float(vals[-1])
    if top <= 0.0:
        return np.zeros(W.shape[0], dtype=complex), 0.0
    second = float(vals[-2]) if W.shape[0] > 1 else 0.0
    ratio = max(second, 0.0) / top
    return math.sqrt(top) * vecs[:, -1], ratio


def worst_case_expansion(
    bset: BeamformerSet,
    channels: ChannelSet,
    cfg: SystemConfig,
    include_common: bool = True,
) -> ExpansionPoint:
    """Auxiliary starting values from the worst-case closed forms.

    Signal powers take their exact ball minimum
    ``(|h^H w| - delta ||w||)^2`` and interference-plus-noise its triangle
    upper bound ``sum_j (|h^H w_j| + delta ||w_j||)^2 + sigma^2``; the SINR
    surrogates are the ratios.  Raises :class:`DegenerateStart` when a
    signal term is nonpositive (log undefined), which triggers a retry in
    the caller.
    """
    K = cfg.K
    x_c = np.zeros(K)
    y_c = np.zeros(K)
    beta_c = np.zeros(K)
    x_p = np.zeros(K)
    y_p = np.zeros(K)
    beta_p = np.zeros(K)
    norms = np.linalg.norm(bset.w_k, axis=1)
    norm_c = float(np.linalg.norm(bset.w_c))
    for k in range(K):
        h = channels.h_hat[k]
        delta = float(channels.delta[k])
        s2 = cfg.sigma2[k]
        gains = np.abs(bset.w_k @ h.conj())
        inflated = (gains + delta * norms) ** 2

        if include_common:
            sig = abs(np.vdot(h, bset.w_c)) - delta * norm_c
            if sig <= 0.0:
                raise DegenerateStart(f"common signal vanishes over the ball at user {k}")
            x_c[k] = 2.0 * math.log(sig)
            y_c[k] = math.log(float(np.sum(inflated)) + s2)
            beta_c[k] = math.exp(x_c[k] - y_c[k])

        sig_p = gains[k] - delta * norms[k]
        if sig_p <= 0.0:
            raise DegenerateStart(f"private signal vanishes over the ball at user {k}")
        x_p[k] = 2.0 * math.log(sig_p)
        y_p[k] = math.log(float(np.sum(inflated) - inflated[k]) + s2)
        beta_p[k] = math.exp(x_p[k] - y_p[k])
    return ExpansionPoint(beta_c, x_c, y_c, beta_p, x_p, y_p)


def _draw_from_covariance(W: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (W + W.conj().T))
    vals = np.clip(vals, 0.0, None)
    g = (rng.standard_normal(len(vals)) + 1j * rng.standard_normal(len(vals))) / np.sqrt(2.0)
    return vecs @ (np.sqrt(vals) * g)


def ball_quadratic_range(W: np.ndarray, h_hat: np.ndarray, delta: float) -> tuple[float, float]:
    """Exact range of ``h^H W h`` over ``||h - h_hat|| <= delta`` for PSD ``W``.

    Both extrema reduce to one-dimensional secular equations in the
    eigenbasis of ``W`` (trust-region subproblems of a convex quadratic);
    the maximum handles the hard case where the center has no component on
    the top eigenspace.
    """
    vals, vecs = np.linalg.eigh(0.5 * (W + W.conj().T))
    vals = np.clip(vals, 0.0, None)
    b = vecs.conj().T @ h_hat  # center in the eigenbasis
    if delta <= 0.0:
        v = float(np.sum(vals * np.abs(b) ** 2))
        return v, v

    def value_at(coords: np.ndarray) -> float:
        return float(np.sum(vals * np.abs(coords) ** 2))

    # minimum: shrink each eigen-coordinate toward zero, h = (I - S) b with
    # S = W (W + nu I)^{-1}; interior if the range-space part of b fits in
    # the ball, else secular root in nu > 0
    range_norm2 = float(np.sum(np.abs(b[vals > 0]) ** 2))
    if range_norm2 <= delta * delta + 1e-30:
        minimum = 0.0
    else:
        def shift_norm(nu: float) -> float:
            s = vals / (vals + nu)
            return float(np.sqrt(np.sum((s * np.abs(b)) ** 2)))

        lo, hi = 0.0, float(np.max(vals)) or 1.0
        while shift_norm(hi) > delta:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if shift_norm(mid) > delta:
                lo = mid
            else:
                hi = mid
        nu = 0.5 * (lo + hi)
        coords = b * nu / (vals + nu)
        minimum = value_at(coords)

    # maximum: on the boundary, h = (I + T) b with T = W (mu I - W)^{-1},
    # mu > lambda_max; hard case adds a top-eigenvector component
    lam_max = float(vals[-1])
    top = np.abs(vals - lam_max) <= 1e-12 * max(lam_max, 1.0)
    b_top2 = float(np.sum(np.abs(b[top]) ** 2))

    def grow_norm(mu: float) -> float:
        g = vals / (mu - vals)
        return float(np.sqrt(np.sum((g * np.abs(b)) ** 2)))

    if lam_max <= 0.0:
        return minimum, 0.0
    if b_top2 <= 1e-28:
        # center orthogonal to the top eigenspace: growth may saturate
        mu_edge = lam_max * (1.0 + 1e-9)
        if grow_norm(mu_edge) <= delta:
            g = vals / (mu_edge - vals)
            g[top] = 0.0
            coords = b * (1.0 + g)
            residual = math.sqrt(max(delta * delta - float(np.sum((g * np.abs(b)) ** 2)), 0.0))
            extra = np.zeros_like(coords)
            extra[np.argmax(vals)] = residual
            return minimum, value_at(coords + extra)
    lo = lam_max * (1.0 + 1e-12) + 1e-300
    hi = lam_max * 2.0 + 1.0
    while grow_norm(hi) > delta:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if grow_norm(mid) > delta:
            lo = mid
        else:
            hi = mid
    mu = 0.5 * (lo + hi)
    coords = b * (1.0 + vals / (mu - vals))
    return minimum, value_at(coords)


def feasible_point_search(
    cfg: SystemConfig,
    channels: ChannelSet,
    seed,
    d_c: np.ndarray | None = None,
    d_p: np.ndarray | None = None,
    include_common: bool = True,
    r_bar: float = 0.1,
    max_retries: int = 5,
    solver_tol: float = 1e-8,
) -> InitialPoint:
    """Find a starting point satisfying the exact robust constraints.

    Draws rate shares uniformly on [0, ``r_bar``], inverts the share sum
    and a private-rate target to SINR floors, solves the margin-maximizing
    robust feasibility program, recovers beamformers (eigen extraction plus
    Gaussian candidates), and fills the auxiliaries with the worst-case
    closed forms.  The shares are then scaled down so the start is
    decodable at its own conservative SINR surrogates.

    The private-rate target walks down an ambition ladder: a fraction of a
    single-user matched-filter rate cap first, the plain zero-rate floor
    last.  An ambitious start places the linearization near the high-SNR
    stationary point, skipping most of the slow trust-region climb; the
    final ladder step is always feasible whenever any start is.  Within
    each rung, infeasibility or a degenerate start halves the shares and
    retries.
    """
    K = cfg.K
    rng = np.random.default_rng(seed)
    if d_c is None or d_p is None:
        dc_auto, dp_auto = stream_penalties(cfg)
        d_c = dc_auto if d_c is None else d_c
        d_p = dp_auto if d_p is None else d_p
    c0_draw = rng.uniform(0.0, r_bar, size=K) if include_common else np.zeros(K)

    scale = cfg.P_max
    cfg_n = cfg.with_updates(P_max=1.0, sigma2=tuple(s / scale for s in cfg.sigma2))

    rate_cap = min(
        fbl_rate(
            cfg.P_max * float(np.linalg.norm(channels.h_hat[k])) ** 2 / cfg.sigma2[k],
            float(d_p[k]),
        )
        for k in range(K)
    )
    rate_cap = max(rate_cap, 0.0)

    last_failure = "no attempt"
    for ambition in (0.85, 0.5, 0.0):
        target_rate = ambition * rate_cap
        a_p = np.array([target_sinr_bisect(target_rate, float(d)) for d in d_p])
        c0 = c0_draw.copy()
        attempts = 1 if ambition > 0 else max_retries + 1
        for _ in range(attempts):
            a_c = None
            if include_common:
                total = float(np.sum(c0))
                a_c = np.array([target_sinr_bisect(total, float(d)) for d in d_c])
            handle = assemble_feasibility(cfg_n, channels, c0, a_c, a_p, include_common)
            outcome = solve(handle.problem, tol=solver_tol)
            if outcome.status not in ("optimal", "inaccurate") or outcome.primal is None:
                last_failure = f"feasibility solve status {outcome.status}"
                c0 = c0 / 2.0
                continue
            margin = float(outcome.primal[handle.margin])
            if margin < 0.0:
                last_failure = f"negative feasibility margin {margin:.3e}"
                c0 = c0 / 2.0
                continue

            W_c = scale * handle.W_c.value(outcome.primal) if handle.W_c is not None else None
            W_k = [scale * w.value(outcome.primal) for w in handle.W_k]
            candidates = [_beamformer_candidate(W_c, W_k, extract=True, rng=None)]
            for _ in range(INIT_DRAWS):
                candidates.append(_beamformer_candidate(W_c, W_k, extract=False, rng=rng))

            best = None
            for w_c, w_k in candidates:
                cand = _scaled_to_budget(BeamformerSet(w_c, w_k, c0), cfg.P_max)
                try:
                    expansion = worst_case_expansion(cand, channels, cfg, include_common)
                except DegenerateStart:
                    continue
                if include_common:
                    common_room = min(
                        fbl_rate(expansion.beta_c[k], float(d_c[k])) for k in range(K)
                    )
                    if common_room < 0.0:
                        continue
                    total = float(np.sum(c0))
                    shrink = min(1.0, common_room / total) if total > 0 else 0.0
                    c_used = c0 * shrink
                else:
                    c_used = np.zeros(K)
                t0 = min(
                    float(c_used[k]) + fbl_rate(expansion.beta_p[k], float(d_p[k]))
                    for k in range(K)
                )
                if best is None or t0 > best.t0:
                    best = InitialPoint(
                        BeamformerSet(cand.w_c, cand.w_k, c_used), expansion, t0
                    )
            if best is not None:
                return best
            last_failure = "all candidates degenerate over the uncertainty ball"
            c0 = c0 / 2.0

    raise InfeasibleStart(f"starting-point search exhausted retries: {last_failure}")


def _beamformer_candidate(W_c, W_k, extract: bool, rng):
    if extract:
        w_c = extract_rank_one(W_c)[0] if W_c is not None else None
        w_k = [extract_rank_one(W)[0] for W in W_k]
    else:
        w_c = _draw_from_covariance(W_c, rng) if W_c is not None else None
        w_k = [_draw_from_covariance(W, rng) for W in W_k]
    if w_c is None:
        w_c = np.zeros(W_k[0].shape[0], dtype=complex)
    return w_c, np.vstack(w_k)


def initial_point_from_design(
    bset: BeamformerSet,
    cfg: SystemConfig,
    channels: ChannelSet,
    d_c: np.ndarray,
    d_p: np.ndarray,
    include_common: bool = True,
) -> InitialPoint:
    """Starting point built from an existing design (continuation).

    The design is scaled to the full budget, its auxiliaries come from the
    worst-case closed forms, and its rate shares are shrunk to what the
    conservative surrogates certify under the given penalties.  Raises
    :class:`DegenerateStart` when a signal vanishes over the ball.
    """
    K = cfg.K
    cand = _scaled_to_budget(bset, cfg.P_max)
    expansion = worst_case_expansion(cand, channels, cfg, include_common)
    if include_common:
        room = min(fbl_rate(expansion.beta_c[k], float(d_c[k])) for k in range(K))
        if room < 0.0:
            raise DegenerateStart("carried design cannot support its common stream")
        total = float(np.sum(cand.c))
        c_used = cand.c * min(1.0, room / total) if total > 0 else np.zeros(K)
    else:
        c_used = np.zeros(K)
    t0 = min(
        float(c_used[k]) + fbl_rate(expansion.beta_p[k], float(d_p[k])) for k in range(K)
    )
    return InitialPoint(BeamformerSet(cand.w_c, cand.w_k, c_used), expansion, t0)


def _scaled_to_budget(bset: BeamformerSet, P_max: float) -> BeamformerSet:
    power = bset.total_power()
    if power <= 0.0:
        return bset
    return bset.scaled(math.sqrt(P_max / power))


def gaussian_randomize(
    lifted: LiftedSolution,
    cfg: SystemConfig,
    channels: ChannelSet,
    draws: int,
    seed,
    d_c: np.ndarray | None = None,
    d_p: np.ndarray | None = None,
    include_common: bool = True,
    include_extraction: bool = True,
) -> tuple[BeamformerSet, bool]:
    """Recover a certified rank-one design from a lifted solution.

    Draws candidate beamformers from the lifted covariances (the eigen
    extraction is always candidate zero), rescales each candidate set to the
    full power budget, scores every candidate by its certified worst-case
    minimum total rate, and returns the best.  The rate shares of the
    returned set are scaled down to the candidate's certified common-rate
    bound, so every returned set is decodable by construction.  The second
    element is False only for a best-effort result: the relaxation asked for
    a materially positive common rate but no candidate could carry any of it.
    """
    from rsbeam import schemes  # deferred: schemes imports this module

    if d_c is None or d_p is None:
        dc_auto, dp_auto = stream_penalties(cfg)
        d_c = dc_auto if d_c is None else d_c
        d_p = dp_auto if d_p is None else d_p
    rng = np.random.default_rng(seed)
    K = cfg.K
    c_star = np.asarray(lifted.c, dtype=float)
    total_c = float(np.sum(c_star))

    candidates = []
    if include_extraction:
        candidates.append(_beamformer_candidate(lifted.W_c, list(lifted.W_k), True, None))
    for _ in range(draws):
        candidates.append(_beamformer_candidate(lifted.W_c, list(lifted.W_k), False, rng))

    best_set = None
    best_score = -math.inf
    best_common_ok = False
    for w_c, w_k in candidates:
        cand = _scaled_to_budget(BeamformerSet(w_c, w_k, c_star), cfg.P_max)
        if include_common and total_c > 0:
            common_room = min(
                schemes.worst_case_rate_lb(cand, channels, cfg, ("common_at_k", k), d=float(d_c[k]))
                for k in range(K)
            )
            scale = min(1.0, max(common_room, 0.0) / total_c)
            c_used = c_star * scale
            common_ok = common_room > 1e-9 or total_c <= 1e-6
        else:
            c_used = c_star.copy()
            common_ok = True
        private = [
            schemes.worst_case_rate_lb(cand, channels, cfg, ("private_at_k", k), d=float(d_p[k]))
            for k in range(K)
        ]
        score = min(float(c_used[k]) + private[k] for k in range(K))
        if score > best_score:
            best_score = score
            best_set = BeamformerSet(cand.w_c, cand.w_k, c_used)
            best_common_ok = common_ok
    return best_set, best_common_ok


def _sanitize_lifted(
    step: LiftedSolution,
    cfg: SystemConfig,
    channels: ChannelSet,
    d_c: np.ndarray,
    d_p: np.ndarray,
    include_common: bool,
) -> LiftedSolution | None:
    """Project a possibly-inexact iterate onto the exact feasible set.

    The lifted matrices are PSD-projected and scaled into the power budget;
    the auxiliary chain is then rebuilt from the exact ball extrema of the
    quadratic forms, and the rate shares are shrunk to what the rebuilt
    SINR surrogates certify.  Returns None when a signal power vanishes
    over the ball (no usable point).
    """
    K = cfg.K

    def psd_part(W):
        vals, vecs = np.linalg.eigh(0.5 * (W + W.conj().T))
        vals = np.clip(vals, 0.0, None)
        return (vecs * vals) @ vecs.conj().T

    W_c = psd_part(step.W_c) if include_common and step.W_c is not None else None
    W_k = np.stack([psd_part(W) for W in step.W_k])
    total = (float(np.trace(W_c).real) if W_c is not None else 0.0) + float(
        sum(np.trace(W).real for W in W_k)
    )
    if total > cfg.P_max:
        factor = cfg.P_max / total
        W_k = W_k * factor
        if W_c is not None:
            W_c = W_c * factor

    Z = W_k.sum(axis=0)
    x_c = np.zeros(K)
    y_c = np.zeros(K)
    beta_c = np.zeros(K)
    x_p = np.zeros(K)
    y_p = np.zeros(K)
    beta_p = np.zeros(K)
    for k in range(K):
        h = channels.h_hat[k]
        delta = float(channels.delta[k])
        s2 = cfg.sigma2[k]
        if include_common:
            num, _ = ball_quadratic_range(W_c, h, delta)
            if num <= 0.0:
                return None
            _, den = ball_quadratic_range(Z, h, delta)
            x_c[k] = math.log(num)
            y_c[k] = math.log(den + s2)
            beta_c[k] = num / (den + s2)
        num, _ = ball_quadratic_range(W_k[k], h, delta)
        if num <= 0.0:
            return None
        _, den = ball_quadratic_range(Z - W_k[k], h, delta)
        x_p[k] = math.log(num)
        y_p[k] = math.log(den + s2)
        beta_p[k] = num / (den + s2)

    if include_common:
        room = min(fbl_rate(beta_c[k], float(d_c[k])) for k in range(K))
        if room < 0.0:
            return None
        total_c = float(np.sum(step.c))
        c_used = step.c * min(1.0, room / total_c) if total_c > 0 else np.zeros(K)
    else:
        c_used = np.zeros(K)
    t = min(float(c_used[k]) + fbl_rate(beta_p[k], float(d_p[k])) for k in range(K))
    return LiftedSolution(
        W_c=W_c, W_k=W_k, c=np.asarray(c_used, dtype=float), t=t,
        beta_c=beta_c, x_c=x_c, y_c=y_c,
        t_c=np.exp(x_c), q_c=np.exp(y_c),
        beta_p=beta_p, x_p=x_p, y_p=y_p,
        t_p=np.exp(x_p), q_p=np.exp(y_p),
    )


def cccp_solve(
    cfg: SystemConfig,
    channels: ChannelSet,
    settings: CccpSettings,
    start: InitialPoint,
    d_c: np.ndarray | None = None,
    d_p: np.ndarray | None = None,
    include_common: bool = True,
    scheme_id: str = "RB-RS-FBL",
    seed=0,
) -> CccpOutcome:
    """Ascend to a stationary point of the lifted max-min program.

    Re-linearizes around each iterate and re-solves until the incumbent
    objective settles.  Every solver iterate is first projected onto the
    exact feasible set (PSD projection, power scaling, auxiliary chain
    rebuilt from the exact ball extrema of the quadratic forms), so each
    trace entry is the certified objective of an exactly feasible point;
    the certified value of an iterate is never below the subproblem's own
    conservative objective, which lets the loop skip the slow exponential
    trust-region climb.  The trace records the incumbent and is
    nondecreasing by construction.  The ascent stops on a positive
    improvement at most ``settings.tol``, on no improvement over a few
    consecutive iterations (the solver's numerical floor), or at the
    iteration cap; a solver failure is retried once on unnormalized data,
    then ends the ascent with the partial trace.

    After rank-one recovery, a randomized design that certifies above the
    incumbent means the ascent was not finished: the loop restarts from
    that design until recovery no longer improves, so the returned
    certified rate never exceeds the final trace value by more than the
    tolerance.
    """
    t_begin = time.perf_counter()
    if d_c is None or d_p is None:
        dc_auto, dp_auto = stream_penalties(cfg)
        d_c = dc_auto if d_c is None else d_c
        d_p = dp_auto if d_p is None else d_p
    from rsbeam import schemes

    trace = [start.t0]
    iterations = 0
    lifted = None
    current = start

    for _ in range(4):  # recovery-restart rounds; almost always one
        used, round_lifted = _ascend(
            cfg, channels, settings, current, trace, d_c, d_p, include_common,
            settings.max_iters - iterations,
        )
        iterations += used
        if round_lifted is not None:
            lifted = round_lifted
        if lifted is None:
            lifted = _lifted_from_start(current, cfg, include_common)

        ratios = [extract_rank_one(W)[1] for W in lifted.W_k]
        if include_common and lifted.W_c is not None:
            ratios.append(extract_rank_one(lifted.W_c)[1])
        rank_one = all(r <= settings.rank_one_ratio_threshold for r in ratios)

        draws = 0 if rank_one else settings.randomization_draws
        bset, common_ok = gaussian_randomize(
            lifted, cfg, channels, draws, seed, d_c, d_p, include_common
        )
        min_rate = schemes.certified_min_rate(bset, channels, cfg, d_c, d_p)
        if min_rate <= trace[-1] + settings.tol or iterations >= settings.max_iters:
            break
        trace.append(max(min_rate, trace[-1]))
        try:
            current = initial_point_from_design(
                bset, cfg, channels, d_c, d_p, include_common
            )
        except DegenerateStart:
            break
        lifted = None

    result = SchemeResult(
        scheme_id=scheme_id,
        min_rate=min_rate,
        common_rate_sum=float(np.sum(bset.c)),
        iterations=iterations,
        objective_trace=tuple(trace),
        feasible=common_ok,
        rank_one=rank_one,
        wall_time=time.perf_counter() - t_begin,
    )
    return CccpOutcome(lifted if lifted is not None else _lifted_from_start(current, cfg, include_common), bset, result)


def _ascend(cfg, channels, settings, start, trace, d_c, d_p, include_common, budget):
    """Inner ascent loop; appends certified incumbent values to ``trace``."""
    expansion = start.expansion
    lifted = None
    iterations = 0
    stall = 0
    for _ in range(max(budget, 0)):
        outcome, handle = _solve_iteration(
            cfg, channels, expansion, d_c, d_p, include_common, settings.solver_tol
        )
        if outcome.status not in ("optimal", "inaccurate") or outcome.primal is None:
            break
        iterations += 1
        step = _sanitize_lifted(
            decode_lifted(handle, outcome.primal), cfg, channels, d_c, d_p, include_common
        )
        if step is None:
            break
        improvement = step.t - trace[-1]
        if improvement > 0:
            trace.append(step.t)
            lifted = step
            stall = 0
            if improvement <= settings.tol:
                break
        else:
            # incumbent holds; keep exploring from the new iterate briefly
            trace.append(trace[-1])
            stall += 1
            if stall >= settings.stall_patience:
                break
        expansion = expansion_from_lifted(step)
    return iterations, lifted


def _normalized_instance(cfg: SystemConfig, expansion: ExpansionPoint):
    """Power-normalized copy of the data (budget 1), for solver conditioning.

    Rates, SINR surrogates, and the rate shares are unit-free; the signal
    and interference powers scale with the budget, so their logs shift by
    ``ln P_max``.
    """
    scale = cfg.P_max
    shift = math.log(scale)
    cfg_n = cfg.with_updates(P_max=1.0, sigma2=tuple(s / scale for s in cfg.sigma2))
    expansion_n = ExpansionPoint(
        beta_c=expansion.beta_c,
        x_c=expansion.x_c - shift,
        y_c=expansion.y_c - shift,
        beta_p=expansion.beta_p,
        x_p=expansion.x_p - shift,
        y_p=expansion.y_p - shift,
    )
    return cfg_n, expansion_n, scale


def _denormalize_primal(handle, x: np.ndarray, scale: float) -> np.ndarray:
    """Map a power-normalized primal back to original units."""
    shift = math.log(scale)
    x = x.copy()
    for var in ([handle.W_c] if handle.W_c is not None else []) + handle.W_k:
        for idx in var.indices:
            x[idx] *= scale
    for name in ("t_c", "q_c", "t_p", "q_p"):
        for idx in handle.aux.get(name, []):
            x[idx] *= scale
    for name in ("x_c", "y_c", "x_p", "y_p"):
        for idx in handle.aux.get(name, []):
            x[idx] += shift
    return x


def _solve_iteration(cfg, channels, expansion, d_c, d_p, include_common, solver_tol):
    """One subproblem solve on power-normalized data, raw-unit retry on failure.

    A residual-downgraded ("inaccurate") verdict still returns its primal:
    the ascent loop's monotonicity guard decides whether the iterate is
    usable.
    """
    cfg_n, expansion_n, scale = _normalized_instance(cfg, expansion)
    handle = assemble_subproblem(cfg_n, channels, expansion_n, d_c, d_p, include_common)
    outcome = solve(handle.problem, tol=solver_tol)
    if outcome.primal is not None and outcome.status in ("optimal", "inaccurate"):
        x = _denormalize_primal(handle, outcome.primal, scale)
        return type(outcome)(outcome.status, x, outcome.objective_value, outcome.residuals), handle

    handle_r = assemble_subproblem(cfg, channels, expansion, d_c, d_p, include_common)
    return solve(handle_r.problem, tol=solver_tol), handle_r


def _lifted_from_start(start: InitialPoint, cfg: SystemConfig, include_common: bool) -> LiftedSolution:
    """Rank-one lift of the starting beamformers (used when no solve landed)."""
    b = start.beamformers
    W_c = np.outer(b.w_c, b.w_c.conj()) if include_common else None
    W_k = np.stack([np.outer(w, w.conj()) for w in b.w_k])
    e = start.expansion
    return LiftedSolution(
        W_c=W_c, W_k=W_k, c=b.c.copy(), t=start.t0,
        beta_c=e.beta_c, x_c=e.x_c, y_c=e.y_c,
        t_c=np.exp(e.x_c), q_c=np.exp(e.y_c),
        beta_p=e.beta_p, x_p=e.x_p, y_p=e.y_p,
        t_p=np.exp(e.x_p), q_p=np.exp(e.y_p),
    )
