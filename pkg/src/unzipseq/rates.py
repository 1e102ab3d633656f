"""Closed-form escape probabilities, count moments and error-rate constants.

Everything here is analytic: the escape probability p_bar_x, the exact
distribution of the crossing counts (the Monte Carlo oracle for the walker),
the gap functions G/F/H that price a wrong base against the right one, the
per-site error decay rate 1/R_c and its landscape bounds, and the expected
total unzipping time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import lgamma

import numpy as np

from ._num import log1mexp, logsumexp, softplus
from .energy import BASES, Base, EnergyTable, Environment, _SiteModel

__all__ = [
    "pbar",
    "log_inv_pbar",
    "SiteMoments",
    "count_moments",
    "joint_up_count_pmf",
    "joint_up_count_log_pmf",
    "pair_count_pmf",
    "pair_count_log_pmf",
    "gap_value",
    "MarginSet",
    "decision_margins",
    "rc_site",
    "lc_bound",
    "obstacle_height",
    "UnzipTime",
    "expected_unzip_time",
    "RateReport",
    "rate_report",
]


def log_inv_pbar(env: _SiteModel, x: int) -> float:
    """log(1 / p_bar_x), accumulated in log-space so deep valleys stay finite.

    1 / p_bar_x = 1 + sum_{k=x+1..M-1} exp(beta * (g(k) - g(x))); p_bar_x is
    the probability that a walk at x+1 reaches M before falling back to x.
    """
    env._check_site(x)
    g = env.profile
    terms = env.beta * (g[x + 1 :] - g[x])
    return logsumexp(np.concatenate([[0.0], terms]))


def pbar(env: _SiteModel, x: int) -> float:
    """Escape probability p_bar_x in (0, 1]; equals 1 at x = M-1."""
    return math.exp(-log_inv_pbar(env, x))


@dataclass(frozen=True)
class SiteMoments:
    """Exact mean/variance of the per-walk crossing counts and sojourn at x."""

    e_up: float
    var_up: float
    e_down: float
    e_sojourn: float
    var_sojourn: float


def count_moments(env: _SiteModel, x: int) -> SiteMoments:
    """Moments of L+_x, L-_x and S_x for a single walk.

    E L+ = 1/p_bar, Var L+ = (1/p_bar)(1/p_bar - 1), E L- = e^(beta dg)/p_bar
    (zero at x = 1, where the walk cannot descend), E S = e^(beta g0)/(r p_bar).
    The total sojourn at x is a geometric sum of exponentials, hence itself
    exponential, so Var S = (E S)^2.
    """
    lip = log_inv_pbar(env, x)
    ip = math.exp(lip)
    e_down = 0.0 if x == 1 else math.exp(env.beta * env.delta_g_site(x) + lip)
    e_s = math.exp(env.beta * env.edge_energy(x) + lip) / env.rate
    return SiteMoments(
        e_up=ip,
        var_up=ip * (ip - 1.0),
        e_down=e_down,
        e_sojourn=e_s,
        var_sojourn=e_s * e_s,
    )


def _log_p_up(env: _SiteModel, x: int) -> tuple[float, float]:
    """(log p_x, log(1 - p_x)) from the stable softplus forms."""
    z = env.beta * env.delta_g_site(x)
    return -softplus(z), -softplus(-z)


def joint_up_count_log_pmf(env: _SiteModel, k) -> float:
    """log P(L+ = k) for one walk; k lists counts for sites 1..M-1.

    The law factorizes into negative-binomial conditionals along the chain:
    product over x = 2..M-1 of C(k_x + k_{x-1} - 2, k_x - 1) p_x^{k_x}
    (1-p_x)^{k_{x-1}-1}, with k_{M-1} = 1 (the last edge is crossed once).
    """
    k = [int(v) for v in k]
    if len(k) != env.M - 1:
        raise ValueError(f"need {env.M - 1} counts, got {len(k)}")
    if k[-1] != 1:
        raise ValueError(f"k at site M-1 must be 1, got {k[-1]}")
    if any(v < 1 for v in k):
        return -math.inf
    total = 0.0
    for x in range(2, env.M):
        kx, kprev = k[x - 1], k[x - 2]
        lp, l1p = _log_p_up(env, x)
        total += (
            lgamma(kx + kprev - 1)
            - lgamma(kx)
            - lgamma(kprev)
            + kx * lp
            + (kprev - 1) * l1p
        )
    return total


def joint_up_count_pmf(env: _SiteModel, k) -> float:
    return math.exp(joint_up_count_log_pmf(env, k))


def pair_count_log_pmf(env: _SiteModel, x: int, n_up: int, n_down: int) -> float:
    """log P(L+_x = n_up, L-_x = n_down) for one walk, 2 <= x <= M-1.

    Closed form: C(a+c-1, a-1) (1-p_x)^c (p_x(1-pbar_x))^{a-1} (p_x pbar_x)
    with a = n_up, c = n_down.
    """
    if not 2 <= x <= env.M - 1:
        raise IndexError(f"site index {x} out of range [2, {env.M - 1}]")
    a, c = int(n_up), int(n_down)
    if a < 1 or c < 0:
        return -math.inf
    lp, l1p = _log_p_up(env, x)
    lip = log_inv_pbar(env, x)
    log_pbar = -lip
    total = lgamma(a + c) - lgamma(a) - lgamma(c + 1) + c * l1p + lp + log_pbar
    if a > 1:
        total += (a - 1) * (lp + log1mexp(-lip))
    return total


def pair_count_pmf(env: _SiteModel, x: int, n_up: int, n_down: int) -> float:
    return math.exp(pair_count_log_pmf(env, x, n_up, n_down))


def gap_value(kind: str, a: float, u: float, beta: float) -> float:
    """The gap functions scoring a candidate energy u against the truth a.

    kind "G" (discrete counts): G_a(u) = log((1+e^{bu})/(1+e^{ba}))
      + e^{ba} log((1+e^{-bu})/(1+e^{-ba})); zero iff u = a.
    kind "F" (continuous): F(u) = e^{bu} - 1 - bu, with a ignored.
    kind "H" (force-ladder counts): H_a(u) = log(1+e^{bu}) + e^{ba} log(1+e^{-bu}),
      minimized at u = a.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if kind == "G":
        return (
            softplus(beta * u)
            - softplus(beta * a)
            + math.exp(beta * a) * (softplus(-beta * u) - softplus(-beta * a))
        )
    if kind == "F":
        return math.expm1(beta * u) - beta * u
    if kind == "H":
        return softplus(beta * u) + math.exp(beta * a) * softplus(-beta * u)
    raise ValueError(f"kind must be 'G', 'F' or 'H', got {kind!r}")


@dataclass(frozen=True)
class MarginSet:
    """Smallest decision gaps per flanking base, and their global minima.

    minus(gamma) prices the worst confusion within row gamma (base gamma on
    the left of the edge), plus(gamma) within column gamma.  All margins are
    strictly positive when the table passes the injectivity check; a
    degenerate table yields zero margins and the warning flag (the theory
    then gives R_c = infinity rather than an error).
    """

    mode: str
    minus_per_base: dict[Base, float]
    plus_per_base: dict[Base, float]
    minus: float
    plus: float
    degenerate: bool


def _pair_gap(mode: str, true_e: float, cand_e: float, beta: float, g1: float) -> float:
    if mode == "discrete":
        return gap_value("G", true_e - g1, cand_e - g1, beta)
    return gap_value("F", 0.0, true_e - cand_e, beta)


def decision_margins(
    table: EnergyTable, beta: float, g1: float = 0.0, mode: str = "continuous"
) -> MarginSet:
    """Enumerate the <= 12 competing ordered pairs per slot and take minima.

    minus(gamma) = min over u != v of gap(g0(gamma,u) vs g0(gamma,v));
    plus(gamma) = the column version; globals are minima over gamma.  The
    discrete gaps depend on the stretch work g1 through dg = g0 - g1.
    """
    if mode not in ("discrete", "continuous"):
        raise ValueError(f"mode must be discrete or continuous, got {mode!r}")
    minus_pb: dict[Base, float] = {}
    plus_pb: dict[Base, float] = {}
    for gamma in BASES:
        row = table.row(gamma)
        col = table.column(gamma)
        minus_pb[gamma] = min(
            _pair_gap(mode, float(row[u]), float(row[v]), beta, g1)
            for u in BASES
            for v in BASES
            if u != v
        )
        plus_pb[gamma] = min(
            _pair_gap(mode, float(col[u]), float(col[v]), beta, g1)
            for u in BASES
            for v in BASES
            if u != v
        )
    minus = min(minus_pb.values())
    plus = min(plus_pb.values())
    return MarginSet(
        mode=mode,
        minus_per_base=minus_pb,
        plus_per_base=plus_pb,
        minus=minus,
        plus=plus,
        degenerate=(minus <= 0.0 or plus <= 0.0),
    )


def rc_site(env: Environment, x: int, mode: str) -> float:
    """Exact decay rate 1/R_c(x) of the site-x error probability.

    -(1/R) log P(b_x wrong) converges to the smallest, over the three
    competing bases alpha, of the two-edge gap sum
        gap(edge x-1; b_x vs alpha) / pbar_{x-1} + gap(edge x; b_x vs alpha) / pbar_x.
    In discrete mode edge 1 carries no information (transitions out of site 1
    are deterministic), so its term vanishes when x = 2.
    """
    if not 2 <= x <= env.M - 1:
        raise IndexError(f"site index {x} out of range [2, {env.M - 1}]")
    if mode not in ("discrete", "continuous"):
        raise ValueError(f"mode must be discrete or continuous, got {mode!r}")
    beta = env.beta
    b_prev, b_x, b_next = env.seq.base(x - 1), env.seq.base(x), env.seq.base(x + 1)
    ip_prev = math.exp(log_inv_pbar(env, x - 1))
    ip_here = math.exp(log_inv_pbar(env, x))
    left_dead = mode == "discrete" and x == 2
    g1_prev = env.force.at(x - 1)
    g1_here = env.force.at(x)
    true_left = env.table.value(b_prev, b_x)
    true_right = env.table.value(b_x, b_next)
    best = math.inf
    for alpha in BASES:
        if alpha == b_x:
            continue
        left = (
            0.0
            if left_dead
            else _pair_gap(mode, true_left, env.table.value(b_prev, alpha), beta, g1_prev)
        )
        right = _pair_gap(mode, true_right, env.table.value(alpha, b_next), beta, g1_here)
        best = min(best, left * ip_prev + right * ip_here)
    return best


def lc_bound(
    table: EnergyTable, beta: float, mode: str = "continuous", g1: float = 0.0
) -> float:
    """Lower bound on 1/L_c, the error decay rate per visit: half the
    smaller of the two global margins."""
    margins = decision_margins(table, beta, g1=g1, mode=mode)
    return 0.5 * min(margins.plus, margins.minus)


def obstacle_height(env: _SiteModel, x: int) -> float:
    """M_x = max over l in (x, M-1] of g(l) - g(x); the barrier past x.

    1/pbar_x >= exp(beta * M_x): obstacles between x and the end make the
    walk revisit x often, which sharpens the inference there.
    """
    if not 0 <= x <= env.M - 2:
        raise IndexError(f"index {x} out of range [0, {env.M - 2}]")
    g = env.profile
    return float(np.max(g[x + 1 :] - g[x]))


@dataclass(frozen=True)
class UnzipTime:
    """Expected total steps to unzip R times, with the displayed landscape
    bounds reported verbatim as diagnostics (their hidden constants are not
    modelled, so no ordering against the expectation is implied)."""

    lower: float
    expectation: float
    upper: float


def expected_unzip_time(env: _SiteModel, R: int) -> UnzipTime:
    """E[tau_M^R] = R * sum_{x=1..M-1} (1/pbar_{x-1} + 1/pbar_x - 1), with
    1/pbar_0 = 1 (site 1 is crossed upward on first touch)."""
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    ip = [1.0] + [math.exp(log_inv_pbar(env, x)) for x in range(1, env.M)]
    expectation = R * sum(ip[x - 1] + ip[x] - 1.0 for x in range(1, env.M))
    mmax = max(obstacle_height(env, x) for x in range(0, env.M - 1))
    scale = math.exp(env.beta * mmax)
    return UnzipTime(lower=R * scale, expectation=expectation, upper=R * env.M * scale)


@dataclass(frozen=True)
class RateReport:
    """Per-site analytic summary plus the global bounds; arrays are
    site-indexed with slot 0 unused, NaN where a quantity is undefined."""

    pbar: np.ndarray
    inv_rc_discrete: np.ndarray
    inv_rc_continuous: np.ndarray
    obstacle: np.ndarray
    e_up: np.ndarray
    var_up: np.ndarray
    e_down: np.ndarray
    e_sojourn: np.ndarray
    var_sojourn: np.ndarray
    inv_lc_discrete: float
    inv_lc_continuous: float
    time: UnzipTime
    R: int

    @property
    def M(self) -> int:
        return self.pbar.size

    CSV_HEADER = (
        "site",
        "pbar",
        "inv_rc_discrete",
        "inv_rc_continuous",
        "obstacle",
        "e_up",
        "var_up",
        "e_down",
        "e_sojourn",
        "var_sojourn",
    )

    def csv_rows(self) -> list[tuple]:
        rows = []
        for x in range(1, self.M):
            rows.append(
                (
                    x,
                    float(self.pbar[x]),
                    float(self.inv_rc_discrete[x]),
                    float(self.inv_rc_continuous[x]),
                    float(self.obstacle[x]),
                    float(self.e_up[x]),
                    float(self.var_up[x]),
                    float(self.e_down[x]),
                    float(self.e_sojourn[x]),
                    float(self.var_sojourn[x]),
                )
            )
        return rows

    def to_json_dict(self) -> dict:
        doc = {"site": list(range(1, self.M)), "R": self.R}
        for name in (
            "pbar",
            "inv_rc_discrete",
            "inv_rc_continuous",
            "obstacle",
            "e_up",
            "var_up",
            "e_down",
            "e_sojourn",
            "var_sojourn",
        ):
            doc[name] = [float(v) for v in getattr(self, name)[1:]]
        doc["inv_lc_discrete"] = self.inv_lc_discrete
        doc["inv_lc_continuous"] = self.inv_lc_continuous
        doc["time_lower"] = self.time.lower
        doc["time_expectation"] = self.time.expectation
        doc["time_upper"] = self.time.upper
        return doc


def rate_report(env: Environment, R: int = 1) -> RateReport:
    """Assemble the per-site analytic report for a base-sequence environment.

    The discrete L_c bound needs a constant stretch work; it is NaN when the
    force field varies across sites.
    """
    M = env.M
    nan = float("nan")
    pb = np.full(M, nan)
    rc_d = np.full(M, nan)
    rc_c = np.full(M, nan)
    obst = np.full(M, nan)
    e_up = np.full(M, nan)
    var_up = np.full(M, nan)
    e_down = np.full(M, nan)
    e_s = np.full(M, nan)
    var_s = np.full(M, nan)
    for x in range(1, M):
        pb[x] = pbar(env, x)
        m = count_moments(env, x)
        e_up[x], var_up[x], e_down[x] = m.e_up, m.var_up, m.e_down
        e_s[x], var_s[x] = m.e_sojourn, m.var_sojourn
        if 2 <= x <= M - 1:
            rc_d[x] = rc_site(env, x, "discrete")
            rc_c[x] = rc_site(env, x, "continuous")
        if x <= M - 2:
            obst[x] = obstacle_height(env, x)
    field = env.force.per_site
    constant_force = bool(np.all(field == field[0]))
    lc_d = lc_bound(env.table, env.beta, "discrete", g1=float(field[0])) if constant_force else nan
    lc_c = lc_bound(env.table, env.beta, "continuous")
    return RateReport(
        pbar=pb,
        inv_rc_discrete=rc_d,
        inv_rc_continuous=rc_c,
        obstacle=obst,
        e_up=e_up,
        var_up=var_up,
        e_down=e_down,
        e_sojourn=e_s,
        var_sojourn=var_s,
        inv_lc_discrete=lc_d,
        inv_lc_continuous=lc_c,
        time=expected_unzip_time(env, R),
        R=R,
    )
