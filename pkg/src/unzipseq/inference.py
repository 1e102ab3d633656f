"""Exact Bayesian inference of the base sequence from crossing statistics.

The likelihood of the observed sufficient statistics factorizes over edges of
the chain, so the posterior over sequences is a chain graphical model: site
posteriors come from normalizing over four candidates, the global MAP from
min-sum dynamic programming, the partition function from a log-space
sum-product pass, and the error probabilities (at least one wrong base, at
least h separated error blocks) from small forward recursions relative to
the decoded sequence.

All likelihood arithmetic is done in log-space; no R-fold products are ever
formed, so the formulas stay exact up to R ~ 1e7 replicas and error
probabilities far below the smallest positive float remain representable
through their logarithms.

Mode conventions: in discrete time, transitions out of site 1 are
deterministic (p_1 = 1), so edge 1 contributes no cost; in continuous time
the sojourn at site 1 is informative and edge 1 enters like any other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._num import logsumexp, logsumexp_rows, softplus
from .energy import BASES, Base, BaseSequence, Environment
from .walker import AggregateStats, WalkStats

__all__ = [
    "Prior",
    "SitePosterior",
    "EdgePotentials",
    "DecodeResult",
    "ErrorReport",
    "RateFit",
    "DECODE_TIE_TOL",
    "local_information",
    "site_posterior",
    "site_map_estimate",
    "site_error_probability",
    "build_edge_potentials",
    "decode_map",
    "log_partition",
    "sequence_posterior",
    "sequence_log_posterior",
    "prob_any_error",
    "log_prob_any_error",
    "prob_nonsuccessive_errors",
    "log_prob_nonsuccessive_errors",
    "error_report",
    "empirical_rate",
    "empirical_rate_from_logs",
    "rate_residuals",
]

# Cost-equality tolerance for surfacing ties.  The degenerate sequences the
# model allows (all-C vs all-G and the AC/GT alternations) tie exactly in
# floating point, so this only needs to absorb accumulation noise.
DECODE_TIE_TOL = 1e-9

MODES = ("discrete", "continuous")


def _require_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


@dataclass(frozen=True)
class Prior:
    """Independent per-site prior over bases; default is uniform 1/4.

    ``probs`` has shape (M+1, 4) with row x for site x (row 0 unused); every
    row must be strictly positive and sum to 1 within 1e-12.
    """

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 4 or arr.shape[0] < 3:
            raise ValueError(f"prior must have shape (M+1, 4), got {arr.shape}")
        body = arr[1:]
        if np.any(body <= 0.0):
            raise ValueError("prior weights must be strictly positive")
        if np.max(np.abs(body.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("each site's prior weights must sum to 1 (tol 1e-12)")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "probs", arr)

    @classmethod
    def uniform(cls, M: int) -> "Prior":
        return cls(np.full((M + 1, 4), 0.25))

    @classmethod
    def iid(cls, weights: Sequence[float], M: int) -> "Prior":
        """Same four weights at every site."""
        w = np.asarray(weights, dtype=float)
        return cls(np.tile(w / w.sum(), (M + 1, 1)))

    @property
    def M(self) -> int:
        return self.probs.shape[0] - 1

    def log_w(self, x: int, base: Base) -> float:
        if not 1 <= x <= self.M:
            raise IndexError(f"site index {x} out of range [1, {self.M}]")
        return math.log(float(self.probs[x, base]))


def _edge_cost(
    stats: WalkStats | AggregateStats,
    env: Environment,
    e: int,
    u: Base,
    v: Base,
    mode: str,
) -> float:
    """Log-likelihood cost of edge e if its pair were (u, v).

    Discrete: L+ log(1 + e^{beta dg}) + L- log(1 + e^{-beta dg}); edge 1 is
    free of cost because the walk leaves site 1 with probability one.
    Continuous: beta g0 L+ + S r e^{-beta g0}.
    """
    if mode == "discrete":
        if e == 1:
            return 0.0
        z = env.beta * (env.table.value(u, v) - env.force.at(e))
        return float(stats.up[e]) * softplus(z) + float(stats.down[e]) * softplus(-z)
    if stats.sojourn is None:
        raise ValueError("continuous-mode inference needs sojourn statistics")
    g0 = env.table.value(u, v)
    return env.beta * g0 * float(stats.up[e]) + float(stats.sojourn[e]) * env.rate * math.exp(
        -env.beta * g0
    )


def local_information(
    stats: WalkStats | AggregateStats,
    env: Environment,
    x: int,
    triple: tuple[Base, Base, Base],
    mode: str,
) -> float:
    """Local information at site x for candidate bases (a_{x-1}, a_x, a_{x+1}).

    Sums the likelihood costs of the two edges meeting at x.  Smaller is more
    likely; the site posterior is exp(-I_x) normalized over the middle base.
    """
    _require_mode(mode)
    if not 2 <= x <= env.M - 1:
        raise IndexError(f"site index {x} out of range [2, {env.M - 1}]")
    a_prev, a_x, a_next = triple
    return _edge_cost(stats, env, x - 1, a_prev, a_x, mode) + _edge_cost(
        stats, env, x, a_x, a_next, mode
    )


@dataclass(frozen=True)
class SitePosterior:
    """Posterior over the base at one site given the flanking true bases.

    ``log_unnormalized`` keeps the raw -I_x values so downstream error
    probabilities can be formed without catastrophic cancellation.
    """

    site: int
    log_unnormalized: dict[Base, float]
    probs: dict[Base, float]
    map_base: Base
    tie: bool

    def error_probability(self) -> float:
        """1 - max posterior mass, formed as s/(1+s) in log space."""
        s = self._loser_sum()
        return s / (1.0 + s)

    def log_error_probability(self) -> float:
        """log(1 - max posterior mass); finite even when the error
        probability underflows to zero as a float."""
        s_log = self._loser_log_sum()
        return s_log - softplus(s_log)

    def _loser_log_sum(self) -> float:
        best = self.log_unnormalized[self.map_base]
        return logsumexp(
            [lv - best for b, lv in self.log_unnormalized.items() if b is not self.map_base]
        )

    def _loser_sum(self) -> float:
        return math.exp(min(self._loser_log_sum(), 709.0))


def site_posterior(
    stats: WalkStats | AggregateStats,
    env: Environment,
    x: int,
    prior: Prior | None = None,
    mode: str = "continuous",
) -> SitePosterior:
    """Exact posterior P(b_x = u | stats, all other bases) for u in A,T,C,G."""
    _require_mode(mode)
    if not 2 <= x <= env.M - 1:
        raise IndexError(f"site index {x} out of range [2, {env.M - 1}]")
    if prior is None:
        prior = Prior.uniform(env.M)
    b_prev, b_next = env.seq.base(x - 1), env.seq.base(x + 1)
    log_un: dict[Base, float] = {}
    for u in BASES:
        cost = local_information(stats, env, x, (b_prev, u, b_next), mode)
        log_un[u] = -cost + prior.log_w(x, u)
    vals = np.array([log_un[b] for b in BASES])
    shifted = np.exp(vals - np.max(vals))
    probs = shifted / shifted.sum()
    best_idx = int(np.argmax(vals))
    tie = any(
        i != best_idx and vals[best_idx] - vals[i] <= DECODE_TIE_TOL for i in range(4)
    )
    return SitePosterior(
        site=x,
        log_unnormalized=log_un,
        probs={b: float(probs[i]) for i, b in enumerate(BASES)},
        map_base=BASES[best_idx],
        tie=tie,
    )


def site_map_estimate(post: SitePosterior) -> tuple[Base, bool]:
    """Most probable base and whether the maximum is tied (Base-order break)."""
    return post.map_base, post.tie


def site_error_probability(post: SitePosterior) -> float:
    """Posterior probability that the most probable base is wrong."""
    return post.error_probability()


@dataclass(frozen=True)
class EdgePotentials:
    """Per-edge 4x4 log-cost tables phi_x(u, v) decomposing the global cost.

    phi has shape (M, 4, 4) with slot 0 unused; the cost of a full sequence
    alpha is exactly sum_x phi[x, alpha_x, alpha_{x+1}], equal to the global
    information I(alpha) including the prior terms (site-x prior attached to
    edge x-1 for x >= 2, site-1 prior to edge 1).
    """

    phi: np.ndarray
    mode: str

    @property
    def M(self) -> int:
        return self.phi.shape[0]

    def sequence_cost(self, alpha: BaseSequence | Sequence[Base]) -> float:
        bases = alpha.bases if isinstance(alpha, BaseSequence) else tuple(alpha)
        if len(bases) != self.M:
            raise ValueError(f"sequence length {len(bases)} != M = {self.M}")
        return float(
            sum(self.phi[x, bases[x - 1], bases[x]] for x in range(1, self.M))
        )

    def shifted(self, constant: float) -> "EdgePotentials":
        """Add a constant to every entry of every edge (posteriors must not move)."""
        return EdgePotentials(self.phi + constant, self.mode)


def build_edge_potentials(
    stats: WalkStats | AggregateStats,
    env: Environment,
    prior: Prior | None = None,
    mode: str = "continuous",
) -> EdgePotentials:
    """Assemble the chain decomposition of the global information I."""
    _require_mode(mode)
    if prior is None:
        prior = Prior.uniform(env.M)
    M = env.M
    phi = np.zeros((M, 4, 4))
    for e in range(1, M):
        for u in BASES:
            for v in BASES:
                cost = _edge_cost(stats, env, e, u, v, mode)
                cost -= prior.log_w(e + 1, v)
                if e == 1:
                    cost -= prior.log_w(1, u)
                phi[e, u, v] = cost
    return EdgePotentials(phi, mode)


@dataclass(frozen=True)
class DecodeResult:
    """Global MAP decode: the minimizing sequence, its cost, the log
    partition value, and every co-optimal sequence up to a cap.

    ``ties`` always contains ``map_sequence`` first; more than one entry
    means the data cannot distinguish the listed sequences (the degenerate
    twins reach this state with exactly equal costs).
    """

    map_sequence: BaseSequence
    cost: float
    log_partition_value: float
    ties: tuple[BaseSequence, ...]
    truncated: bool

    @property
    def tie(self) -> bool:
        return len(self.ties) > 1


def _init_states(b1: Base | None) -> list[Base]:
    return list(BASES) if b1 is None else [Base(b1)]


def log_partition(pot: EdgePotentials, b1: Base | None) -> float:
    """log sum over sequences (first base fixed to b1 unless None) of e^{-I}."""
    M = pot.M
    L = np.full(4, -np.inf)
    for u in _init_states(b1):
        L[u] = 0.0
    for x in range(1, M):
        L = logsumexp_rows((L[:, None] - pot.phi[x]).T)
    return float(logsumexp(L))


def decode_map(
    pot: EdgePotentials, b1: Base | None, tie_cap: int = 16
) -> DecodeResult:
    """Exact argmin of I over the 4^(M-1) sequences via min-sum DP.

    Ties within DECODE_TIE_TOL of the optimum are enumerated (up to
    ``tie_cap``) in Base order, so the reported MAP sequence is the
    lexicographically first co-optimal one.
    """
    M = pot.M
    # Suffix-optimal costs E[x, u]: best completion cost from site x at base u.
    E = np.zeros((M + 1, 4))
    for x in range(M - 1, 0, -1):
        E[x] = np.min(pot.phi[x] + E[x + 1][None, :], axis=1)
    starts = _init_states(b1)
    cost = min(float(E[1, u]) for u in starts)

    sequences: list[tuple[Base, ...]] = []
    truncated = False
    budget = cost + DECODE_TIE_TOL

    def extend(x: int, u: Base, acc: float, prefix: list[Base]) -> bool:
        nonlocal truncated
        if x == M:
            sequences.append(tuple(prefix))
            if len(sequences) >= tie_cap:
                truncated = True
                return False
            return True
        for v in BASES:
            step = acc + float(pot.phi[x, u, v])
            if step + float(E[x + 1, v]) <= budget:
                prefix.append(v)
                keep_going = extend(x + 1, v, step, prefix)
                prefix.pop()
                if not keep_going:
                    return False
        return True

    for u in starts:
        if float(E[1, u]) <= budget:
            if not extend(1, u, 0.0, [u]):
                break

    ties = tuple(BaseSequence(s) for s in sequences)
    return DecodeResult(
        map_sequence=ties[0],
        cost=cost,
        log_partition_value=log_partition(pot, b1),
        ties=ties,
        truncated=truncated,
    )


def sequence_log_posterior(
    alpha: BaseSequence, pot: EdgePotentials, b1: Base | None
) -> float:
    """log P(b = alpha | stats, b_1) = -I(alpha) - log partition."""
    if b1 is not None and alpha.base(1) != b1:
        raise ValueError(
            f"sequence starts with {alpha.base(1).name}, conditioning fixes b_1 = {Base(b1).name}"
        )
    return -pot.sequence_cost(alpha) - log_partition(pot, b1)


def sequence_posterior(alpha: BaseSequence, pot: EdgePotentials, b1: Base | None) -> float:
    return math.exp(sequence_log_posterior(alpha, pot, b1))


def _relative_potentials(pot: EdgePotentials, ref: BaseSequence) -> np.ndarray:
    """psi[x, u, v] = phi[x, u, v] - phi[x, ref_x, ref_{x+1}]; sums to
    I(alpha) - I(ref), which keeps tiny loser masses exactly representable."""
    psi = pot.phi.copy()
    for x in range(1, pot.M):
        psi[x] -= pot.phi[x, ref.base(x), ref.base(x + 1)]
    return psi


def _loser_log_sum(pot: EdgePotentials, b1: Base | None, ref: BaseSequence) -> float:
    """log sum over alpha != ref of e^{-(I(alpha) - I(ref))}.

    Forward recursion over (base, differs-from-ref flag); excluding the
    reference path exactly avoids the 1 - (1 - tiny) cancellation.
    """
    psi = _relative_potentials(pot, ref)
    A = np.full((4, 2), -np.inf)
    for u in _init_states(b1):
        A[u, 1 if u != ref.base(1) else 0] = 0.0
    for x in range(1, pot.M):
        nxt = np.full((4, 2), -np.inf)
        ref_next = ref.base(x + 1)
        for v in BASES:
            mism = 1 if v != ref_next else 0
            col = A - psi[x, :, v][:, None]
            same = logsumexp(col[:, 0])
            diff = logsumexp(col[:, 1])
            if mism:
                nxt[v, 1] = np.logaddexp(same, diff)
            else:
                nxt[v, 0] = same
                nxt[v, 1] = diff
        A = nxt
    return float(logsumexp(A[:, 1]))


def log_prob_any_error(
    pot: EdgePotentials, b1: Base | None, decoded: DecodeResult | None = None
) -> float:
    """log P(at least one wrong base) = log(s) - log(1 + s), where s is the
    posterior-odds sum of every sequence other than the MAP."""
    ref = (decoded or decode_map(pot, b1)).map_sequence
    s_log = _loser_log_sum(pot, b1, ref)
    return s_log - softplus(s_log)


def prob_any_error(
    pot: EdgePotentials, b1: Base | None, decoded: DecodeResult | None = None
) -> float:
    """P(n_e >= 1) = 1 - P(b = map | stats, b_1), exact in log space."""
    ref = (decoded or decode_map(pot, b1)).map_sequence
    s_log = _loser_log_sum(pot, b1, ref)
    if s_log > 709.0:
        return 1.0
    s = math.exp(s_log)
    return s / (1.0 + s)


def _block_log_masses(
    pot: EdgePotentials, b1: Base | None, ref: BaseSequence, h: int
) -> tuple[float, float]:
    """(log numerator, log denominator) of P(error blocks >= h).

    States (base, previous site mismatched, block count capped at h); a block
    opens when a mismatch follows a match, so the count is the number of
    maximal runs of wrong sites relative to ``ref``.
    """
    psi = _relative_potentials(pot, ref)
    A = np.full((4, 2, h + 1), -np.inf)
    for u in _init_states(b1):
        m = 1 if u != ref.base(1) else 0
        A[u, m, min(m, h)] = 0.0
    for x in range(1, pot.M):
        nxt = np.full((4, 2, h + 1), -np.inf)
        ref_next = ref.base(x + 1)
        for v in BASES:
            mism = 1 if v != ref_next else 0
            for m_prev in (0, 1):
                new_block = 1 if (mism and not m_prev) else 0
                for t in range(h + 1):
                    src = A[:, m_prev, t]
                    if not np.any(np.isfinite(src)):
                        continue
                    t_new = min(t + new_block, h)
                    vals = src - psi[x, :, v]
                    cur = nxt[v, mism, t_new]
                    nxt[v, mism, t_new] = np.logaddexp(cur, logsumexp(vals))
        A = nxt
    num = float(logsumexp(A[:, :, h].ravel()))
    den = float(logsumexp(A.ravel()))
    return num, den


def log_prob_nonsuccessive_errors(
    pot: EdgePotentials, b1: Base | None, h: int, decoded: DecodeResult | None = None
) -> float:
    """log P(number of separated error blocks >= h) relative to the MAP."""
    if h < 1:
        raise ValueError(f"h must be >= 1, got {h}")
    ref = (decoded or decode_map(pot, b1)).map_sequence
    num, den = _block_log_masses(pot, b1, ref, h)
    return num - den


def prob_nonsuccessive_errors(
    pot: EdgePotentials, b1: Base | None, h: int, decoded: DecodeResult | None = None
) -> float:
    """P(at least h error blocks, each separated by a correct site)."""
    lp = log_prob_nonsuccessive_errors(pot, b1, h, decoded)
    return math.exp(lp) if lp < 0 else 1.0


@dataclass(frozen=True)
class ErrorReport:
    """Decoding error summary: global, per block count, and per site."""

    decode: DecodeResult
    p_any: float
    log_p_any: float
    p_blocks: tuple[tuple[int, float, float], ...]
    site_errors: tuple[tuple[int, float, float], ...]

    def to_json_dict(self) -> dict:
        return {
            "map_sequence": str(self.decode.map_sequence),
            "cost": self.decode.cost,
            "log_partition": self.decode.log_partition_value,
            "ties": [str(s) for s in self.decode.ties],
            "tie": self.decode.tie,
            "p_any_error": self.p_any,
            "log_p_any_error": self.log_p_any,
            "p_h_errors": [
                {"h": h, "p": p, "log_p": lp} for h, p, lp in self.p_blocks
            ],
            "site_errors": [
                {"site": x, "p": p, "log_p": lp} for x, p, lp in self.site_errors
            ],
        }


def error_report(
    stats: WalkStats | AggregateStats,
    env: Environment,
    prior: Prior | None = None,
    mode: str = "continuous",
    b1: Base | None = None,
    h_max: int = 3,
) -> ErrorReport:
    """Run the full decode + error-probability pipeline on one statistics set."""
    _require_mode(mode)
    if prior is None:
        prior = Prior.uniform(env.M)
    pot = build_edge_potentials(stats, env, prior, mode)
    decoded = decode_map(pot, b1)
    p_any = prob_any_error(pot, b1, decoded)
    lp_any = log_prob_any_error(pot, b1, decoded)
    blocks = []
    for h in range(1, h_max + 1):
        lp = log_prob_nonsuccessive_errors(pot, b1, h, decoded)
        blocks.append((h, math.exp(min(lp, 0.0)), lp))
    sites = []
    for x in range(2, env.M):
        post = site_posterior(stats, env, x, prior, mode)
        sites.append((x, post.error_probability(), post.log_error_probability()))
    return ErrorReport(
        decode=decoded,
        p_any=p_any,
        log_p_any=lp_any,
        p_blocks=tuple(blocks),
        site_errors=tuple(sites),
    )


@dataclass(frozen=True)
class RateFit:
    """Least-squares line through (R, -log P): slope is the empirical decay
    rate, to be compared against the analytic 1/R_c."""

    slope: float
    intercept: float
    slope_stderr: float
    n: int


def empirical_rate_from_logs(points: Iterable[tuple[float, float]]) -> RateFit:
    """Fit -log P against R from (R, log P) pairs (log P < 0 required)."""
    pts = [(float(r), float(lp)) for r, lp in points]
    if len(pts) < 2:
        raise ValueError("need at least 2 points to fit a rate")
    for r, lp in pts:
        if not (lp < 0.0 and math.isfinite(lp)):
            raise ValueError(f"log probability must be finite and < 0, got {lp} at R={r}")
    R = np.array([p[0] for p in pts])
    y = np.array([-p[1] for p in pts])
    if np.ptp(R) == 0:
        raise ValueError("need at least 2 distinct R values")
    Rbar, ybar = R.mean(), y.mean()
    sxx = float(np.sum((R - Rbar) ** 2))
    slope = float(np.sum((R - Rbar) * (y - ybar)) / sxx)
    intercept = float(ybar - slope * Rbar)
    n = len(pts)
    if n > 2:
        rss = float(np.sum((y - intercept - slope * R) ** 2))
        stderr = math.sqrt(max(rss, 0.0) / (n - 2) / sxx)
    else:
        stderr = float("nan")
    return RateFit(slope=slope, intercept=intercept, slope_stderr=stderr, n=n)


def empirical_rate(points: Iterable[tuple[float, float]]) -> RateFit:
    """Fit -log P against R from (R, probability) pairs, P strictly in (0, 1)."""
    logs = []
    for r, p in points:
        if not 0.0 < p < 1.0:
            raise ValueError(f"probability must lie strictly in (0, 1), got {p} at R={r}")
        logs.append((r, math.log(p)))
    return empirical_rate_from_logs(logs)


def rate_residuals(
    points: Iterable[tuple[float, float]], rate: float
) -> list[tuple[float, float]]:
    """Diagnostic residuals (R, -log P - R * rate) from (R, log P) pairs.

    The finite-R correction to the exponential decay carries an unspecified
    constant (it grows roughly like sqrt(R log log R)), so residuals are
    reported for inspection and never asserted against.
    """
    return [(float(r), float(-lp - r * rate)) for r, lp in points]
