"""Force schedules that sharpen the inference: windows, ladders, flips.

Two refinements over the constant-force experiment.  A position-dependent
force window traps the walk around a site of interest, boosting the visit
count there.  A decreasing force ladder interleaved with the distinct
binding-energy values turns each site's drift sign into a direct readout of
its energy: under force level k the down/up crossing ratio at x concentrates
on e^(beta (g0(x) - r_k)), so the first level at which the ratio crosses 1
identifies g0(x).  The estimators here work on raw energy sequences; mapping
energies back to bases is a separate (sometimes ambiguous) reconstruction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .energy import (
    BASES,
    Base,
    BaseSequence,
    EnergyEnvironment,
    EnergyTable,
    ForceField,
    ModelParams,
    hop_probability,
)
from .rates import gap_value, log_inv_pbar
from .walker import AggregateStats, SeedSpec, StepCapExceeded, simulate_ensemble

__all__ = [
    "LevelLadder",
    "LadderReport",
    "validate_ladder",
    "q_prob",
    "window_schedule",
    "ProtocolPlan",
    "PlanLevel",
    "build_protocol",
    "LevelStats",
    "ProtocolAbort",
    "run_protocol",
    "EnergyEstimate",
    "estimate_energy",
    "HMargins",
    "h_margins",
    "rc_energy",
    "ReconstructionResult",
    "sequence_from_energies",
]

SCHEMES = ("uniform-pair", "focus-at-x", "absorbing-tail")


@dataclass(frozen=True)
class LadderReport:
    valid: bool
    violations: tuple[str, ...]


def validate_ladder(mu: Sequence[float], r_levels: Sequence[float]) -> LadderReport:
    """Check the interlacing inequalities of a force ladder.

    Requirements: mu strictly decreasing (K distinct energies), r strictly
    decreasing with r_{K+1} = 0, and for every k: mu_k - r_k < 0,
    mu_k - r_{k+1} > 0, and mu_i - r_{k+1} < 0 for all i > k.  Together these
    pin the interleaving r_1 > mu_1 > r_2 > mu_2 > ... > r_K > mu_K > 0.
    """
    mu = [float(v) for v in mu]
    r = [float(v) for v in r_levels]
    bad: list[str] = []
    K = len(mu)
    if K < 1:
        bad.append("need at least one energy level")
    if len(r) != K + 1:
        bad.append(f"need K+1 = {K + 1} force values, got {len(r)}")
        return LadderReport(False, tuple(bad))
    for i in range(K - 1):
        if not mu[i] > mu[i + 1]:
            bad.append(f"mu[{i + 1}] > mu[{i + 2}] violated: {mu[i]} <= {mu[i + 1]}")
    for i in range(K):
        if not r[i] > r[i + 1]:
            bad.append(f"r[{i + 1}] > r[{i + 2}] violated: {r[i]} <= {r[i + 1]}")
    if r[K] != 0.0:
        bad.append(f"r[K+1] must be 0, got {r[K]}")
    for k in range(1, K + 1):
        if not mu[k - 1] - r[k - 1] < 0:
            bad.append(f"mu[{k}] - r[{k}] < 0 violated ({mu[k - 1]} - {r[k - 1]})")
        if not mu[k - 1] - r[k] > 0:
            bad.append(f"mu[{k}] - r[{k + 1}] > 0 violated ({mu[k - 1]} - {r[k]})")
        for i in range(k + 1, K + 1):
            if not mu[i - 1] - r[k] < 0:
                bad.append(f"mu[{i}] - r[{k + 1}] < 0 violated ({mu[i - 1]} - {r[k]})")
    return LadderReport(not bad, tuple(bad))


@dataclass(frozen=True)
class LevelLadder:
    """Energy levels mu_1 > ... > mu_K and forces r_1 > ... > r_K > r_{K+1} = 0."""

    mu: tuple[float, ...]
    r_levels: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "mu", tuple(float(v) for v in self.mu))
        object.__setattr__(self, "r_levels", tuple(float(v) for v in self.r_levels))

    @property
    def K(self) -> int:
        return len(self.mu)

    def validate(self) -> LadderReport:
        return validate_ladder(self.mu, self.r_levels)

    def require_valid(self) -> None:
        report = self.validate()
        if not report.valid:
            raise ValueError("invalid ladder: " + "; ".join(report.violations))

    def mu_at(self, m: int) -> float:
        if not 1 <= m <= self.K:
            raise IndexError(f"energy level {m} out of range [1, {self.K}]")
        return self.mu[m - 1]

    def r_at(self, i: int) -> float:
        if not 1 <= i <= self.K + 1:
            raise IndexError(f"force level {i} out of range [1, {self.K + 1}]")
        return self.r_levels[i - 1]

    def level_of(self, energy: float) -> int:
        """Ladder index of an exact energy value."""
        for m, v in enumerate(self.mu, start=1):
            if v == float(energy):
                return m
        raise ValueError(f"energy {energy} is not a ladder level")

    @classmethod
    def from_energies(cls, values: Sequence[float]) -> "LevelLadder":
        """Midpoint construction: r_i between consecutive mu's, r_1 above mu_1.

        The theory fixes only the inequalities; midpoints maximize the worst
        margin for this spacing.  With a single level the top gap falls back
        to mu_1 / 2.
        """
        mu = sorted({float(v) for v in values}, reverse=True)
        if not mu or mu[-1] <= 0:
            raise ValueError("ladder energies must be positive")
        half_gap = (mu[0] - mu[1]) / 2.0 if len(mu) > 1 else mu[0] / 2.0
        r = [mu[0] + half_gap]
        r += [(mu[i - 1] + mu[i]) / 2.0 for i in range(1, len(mu))]
        r.append(0.0)
        ladder = cls(tuple(mu), tuple(r))
        ladder.require_valid()
        return ladder

    @classmethod
    def from_table(cls, table: EnergyTable) -> "LevelLadder":
        return cls.from_energies(table.distinct_values())


def q_prob(ladder: LevelLadder, i: int, m: int, beta: float) -> float:
    """Probability q^i_m of moving right under force f_i in energy mu_m.

    Exceeds 1/2 exactly when mu_m < r_i.
    """
    return hop_probability(ladder.mu_at(m) - ladder.r_at(i), beta)


def window_schedule(
    y: int, A: int, C: float, M: int, baseline: float | ForceField = 0.0
) -> ForceField:
    """Linear force window g1(y + x) = C (A - x) for x in [-A, A].

    Strong stretch work behind y pushes the walk forward; the decay toward
    zero ahead of y erects a barrier, so the walk lingers near y.  Sites
    outside the window keep the caller-supplied baseline.
    """
    if C <= 0:
        raise ValueError(f"window slope C must be positive, got {C}")
    if not (1 <= y - A and y + A <= M - 1):
        raise ValueError(
            f"window [{y - A}, {y + A}] out of range [1, {M - 1}] for M = {M}"
        )
    if isinstance(baseline, ForceField):
        if len(baseline) != M - 1:
            raise ValueError("baseline force field has wrong length")
        values = baseline.per_site.copy()
    else:
        values = np.full(M - 1, float(baseline))
    for off in range(-A, A + 1):
        values[y + off - 1] = C * (A - off)
    return ForceField(values)


@dataclass(frozen=True)
class PlanLevel:
    level_index: int
    force: ForceField
    replicas: int


@dataclass(frozen=True)
class ProtocolPlan:
    """Which force field to apply at each ladder level, and how many walks."""

    scheme: str
    levels: tuple[PlanLevel, ...]
    site: int | None = None

    def level_indices(self) -> list[int]:
        return [lv.level_index for lv in self.levels]


def build_protocol(
    scheme: str,
    ladder: LevelLadder,
    M: int,
    replicas: int,
    *,
    site: int | None = None,
    k: int | None = None,
    max_level: int | None = None,
) -> ProtocolPlan:
    """Emit the per-level force fields for one of the three schemes.

    uniform-pair: constant fields; levels (k, k+1) when k is given, else
    levels 1..max_level (the union of the pair plans a full scan needs).
    focus-at-x: r_1 before the target site (fast approach), r_i at it,
    r_K beyond (slow tail keeps the walk focused); levels i = 1..K.
    absorbing-tail: r_1 before, r_i at the site, zero force beyond, so the
    prediction cost becomes independent of the unknown tail energies.
    """
    ladder.require_valid()
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if replicas < 1:
        raise ValueError(f"replica count must be >= 1, got {replicas}")
    K = ladder.K
    n_sites = M - 1
    if scheme == "uniform-pair":
        if k is not None:
            if not 1 <= k <= K:
                raise IndexError(f"pair index k = {k} out of range [1, {K}]")
            indices = [k, k + 1]
        else:
            top = K + 1 if max_level is None else max_level
            if not 2 <= top <= K + 1:
                raise ValueError(f"max_level = {top} out of range [2, {K + 1}]")
            indices = list(range(1, top + 1))
        levels = [
            PlanLevel(i, ForceField.constant(ladder.r_at(i), n_sites), replicas)
            for i in indices
        ]
        return ProtocolPlan(scheme, tuple(levels), None)

    if site is None or not 2 <= site <= M - 1:
        raise ValueError(f"scheme {scheme} needs a target site in [2, {M - 1}], got {site}")
    tail_r = ladder.r_at(K) if scheme == "focus-at-x" else ladder.r_at(K + 1)
    top = K if max_level is None else min(max_level, K)
    levels = []
    for i in range(1, top + 1):
        values = np.full(n_sites, ladder.r_at(1))
        values[site - 1] = ladder.r_at(i)
        values[site:] = tail_r
        levels.append(PlanLevel(i, ForceField(values), replicas))
    return ProtocolPlan(scheme, tuple(levels), site)


@dataclass(frozen=True)
class LevelStats:
    """Aggregate statistics keyed by force-level index."""

    stats: dict[int, AggregateStats]

    def level(self, i: int) -> AggregateStats:
        try:
            return self.stats[i]
        except KeyError:
            raise ValueError(f"no statistics for force level {i}") from None

    def has_level(self, i: int) -> bool:
        return i in self.stats

    def csv_rows(self) -> list[tuple]:
        rows = []
        for i in sorted(self.stats):
            agg = self.stats[i]
            for x in range(1, agg.M):
                rows.append((i, x, int(agg.up[x]), int(agg.down[x]), agg.R))
        return rows

    def to_json_dict(self) -> dict:
        return {str(i): agg.to_json_dict() for i, agg in sorted(self.stats.items())}


class ProtocolAbort(RuntimeError):
    """A replica of one force level hit the step cap."""

    def __init__(self, level: int, cause: StepCapExceeded):
        super().__init__(f"force level {level}: {cause}")
        self.level = level
        self.replica = cause.replica


def run_protocol(
    energies: Sequence[float],
    params: ModelParams,
    plan: ProtocolPlan,
    seed: SeedSpec,
    mode: str = "discrete",
    *,
    step_cap: int | None = None,
) -> LevelStats:
    """Simulate one ensemble per force level of the plan.

    Transitions are driven by the raw energy sequence; each level gets its
    own child seed, so levels are independent and individually reproducible.
    """
    out: dict[int, AggregateStats] = {}
    kwargs = {} if step_cap is None else {"step_cap": step_cap}
    for lv in plan.levels:
        env = EnergyEnvironment(tuple(float(e) for e in energies), lv.force, params)
        try:
            out[lv.level_index] = simulate_ensemble(
                env, lv.replicas, mode, seed.child(lv.level_index), **kwargs
            )
        except StepCapExceeded as e:
            raise ProtocolAbort(lv.level_index, e) from e
    return LevelStats(out)


@dataclass(frozen=True)
class EnergyEstimate:
    """Ratio-flip estimate of g0 at one site; undecided is reported, never
    replaced by a guess."""

    site: int
    level: int | None
    value: float | None
    undecided: bool
    ratios: dict[int, float]


def estimate_energy(stats: LevelStats, x: int, ladder: LevelLadder) -> EnergyEstimate:
    """First ladder level k with L-/L+ < 1 at level k and > 1 at level k+1.

    The down/up ratio at x under force r concentrates on e^(beta (g0(x) - r)),
    so the flip brackets g0(x) in (r_{k+1}, r_k), which contains exactly mu_k.
    Scanning stops at the first flip; both levels of every scanned pair must
    be present in the statistics.
    """
    ladder.require_valid()
    ratios: dict[int, float] = {}

    def ratio(i: int) -> float:
        if i not in ratios:
            agg = stats.level(i)
            if not 1 <= x <= agg.M - 1:
                raise IndexError(f"site index {x} out of range [1, {agg.M - 1}]")
            if agg.up[x] == 0:
                raise ValueError(f"no up-crossings recorded at site {x}, level {i}")
            ratios[i] = float(agg.down[x]) / float(agg.up[x])
        return ratios[i]

    for k in range(1, ladder.K + 1):
        if ratio(k) < 1.0 and ratio(k + 1) > 1.0:
            return EnergyEstimate(
                site=x, level=k, value=ladder.mu_at(k), undecided=False, ratios=dict(ratios)
            )
    return EnergyEstimate(site=x, level=None, value=None, undecided=True, ratios=dict(ratios))


@dataclass(frozen=True)
class HMargins:
    """Pairwise information margins per ladder level, and their maxima.

    per_pair[k-1] = (k, H^(k), H^(k+1)): the minimal relative information
    gained per crossing at force levels k and k+1 against the neighbouring
    energy levels.  h_forward / h_backward are the best margins over k <= K-1,
    which drive the focus and absorbing scheme bounds.
    """

    per_pair: tuple[tuple[int, float, float], ...]
    h_forward: float
    h_backward: float


def _pair_margin(ladder: LevelLadder, k: int, r: float, beta: float) -> float:
    """min over neighbouring levels l of H_a(mu_l - r) - H_a(a), a = mu_k - r.

    A single-level ladder has no confusable neighbour, so the margin is
    infinite: the estimator cannot pick a wrong value.
    """
    a = ladder.mu_at(k) - r
    base = gap_value("H", a, a, beta)
    neighbours = [l for l in (k - 1, k + 1) if 1 <= l <= ladder.K]
    if not neighbours:
        return math.inf
    return min(gap_value("H", a, ladder.mu_at(l) - r, beta) - base for l in neighbours)


def h_margins(ladder: LevelLadder, beta: float, scheme: str = "uniform-pair") -> HMargins:
    """Evaluate H^(k), H^(k+1) for every k, plus the scheme maxima."""
    ladder.require_valid()
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    per_pair = []
    for k in range(1, ladder.K + 1):
        hk = _pair_margin(ladder, k, ladder.r_at(k), beta)
        hk1 = _pair_margin(ladder, k, ladder.r_at(k + 1), beta)
        per_pair.append((k, hk, hk1))
    span = per_pair[:-1] if ladder.K > 1 else per_pair
    h_fwd = max(p[1] for p in span)
    h_bwd = max(p[2] for p in span)
    return HMargins(per_pair=tuple(per_pair), h_forward=h_fwd, h_backward=h_bwd)


def rc_energy(
    energies: Sequence[float],
    x: int,
    ladder: LevelLadder,
    beta: float,
    scheme: str,
    k: int | None = None,
) -> float:
    """Lower bound on the error decay rate of the energy estimator at x.

    uniform-pair (needs k): H^(k)/pbar_x^k + H^(k+1)/pbar_x^{k+1}, with
    pbar^l evaluated under the constant field r_l.
    focus-at-x: (H-> + H<-) / pbar_x^K, the slow tail force r_K beyond x.
    absorbing-tail: (H-> + H<-) e^(mu_K beta (M - x)); no tail energies enter,
    so the bound is independent of the unknown part of the molecule.
    """
    ladder.require_valid()
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    energies = tuple(float(e) for e in energies)
    M = len(energies) + 1
    if not 2 <= x <= M - 1:
        raise IndexError(f"site index {x} out of range [2, {M - 1}]")
    params = ModelParams(beta=beta, rate_scale=1.0)
    margins = h_margins(ladder, beta, scheme)

    def inv_pbar_const(r_level: float) -> float:
        env = EnergyEnvironment(
            energies, ForceField.constant(r_level, M - 1), params
        )
        return math.exp(log_inv_pbar(env, x))

    if scheme == "uniform-pair":
        if k is None or not 1 <= k <= ladder.K:
            raise ValueError(f"uniform-pair bound needs k in [1, {ladder.K}], got {k}")
        _, hk, hk1 = margins.per_pair[k - 1]
        return hk / inv_pbar_const(ladder.r_at(k)) + hk1 / inv_pbar_const(ladder.r_at(k + 1))
    total = margins.h_forward + margins.h_backward
    if scheme == "focus-at-x":
        return total / inv_pbar_const(ladder.r_at(ladder.K))
    return total * math.exp(ladder.mu_at(ladder.K) * beta * (M - x))


@dataclass(frozen=True)
class ReconstructionResult:
    """Base sequences compatible with an energy sequence.

    One entry: unambiguous recovery.  Several: the energies cannot separate
    them (degenerate repeats).  None: every candidate start dies at
    ``failed_site`` because the required energy is absent from that row.
    """

    sequences: tuple[BaseSequence, ...]
    failed_site: int | None = None

    @property
    def ambiguous(self) -> bool:
        return len(self.sequences) > 1

    @property
    def unique(self) -> BaseSequence:
        if len(self.sequences) != 1:
            raise ValueError("reconstruction is not unique")
        return self.sequences[0]


def sequence_from_energies(
    energies: Sequence[float],
    table: EnergyTable,
    b1: Base | None = None,
    *,
    tol: float = 0.0,
    cap: int = 16,
) -> ReconstructionResult:
    """Walk the energy chain left to right, resolving each next base.

    Given the current base a, the next base is any c with g0(a, c) equal to
    the observed energy (unique under row injectivity).  With b1 fixed, a
    missing energy in the current row is an error; without b1, all four
    starts are explored and every complete reconstruction is reported.
    """
    energies = [float(e) for e in energies]
    all_values = {float(v) for v in table.values.ravel()}
    for i, e in enumerate(energies, start=1):
        if not any(abs(e - v) <= tol for v in all_values):
            raise ValueError(f"energy {e} at site {i} appears nowhere in the table")

    results: list[tuple[Base, ...]] = []
    fail_site = 0
    fail_row: Base | None = None

    def extend(prefix: list[Base]) -> None:
        nonlocal fail_site, fail_row
        if len(results) >= cap:
            return
        x = len(prefix)
        if x == len(energies) + 1:
            results.append(tuple(prefix))
            return
        a = prefix[-1]
        row = table.row(a)
        candidates = [c for c in BASES if abs(float(row[c]) - energies[x - 1]) <= tol]
        if not candidates:
            if x > fail_site:
                fail_site, fail_row = x, a
            return
        for c in candidates:
            prefix.append(c)
            extend(prefix)
            prefix.pop()

    starts = [Base(b1)] if b1 is not None else list(BASES)
    for start in starts:
        extend([start])

    if not results:
        if b1 is not None:
            raise ValueError(
                f"energy {energies[fail_site - 1]} absent from row {fail_row.name} "
                f"at site {fail_site} (walking from b1 = {Base(b1).name})"
            )
        return ReconstructionResult(sequences=(), failed_site=fail_site)
    return ReconstructionResult(sequences=tuple(BaseSequence(s) for s in results))
