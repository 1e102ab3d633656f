"""Sequence environment, free-energy landscape and one-step transition law.

The number of open base pairs of a mechanically unzipped molecule performs a
nearest-neighbour walk on sites 1..M whose local drift is set by the
difference between the binding free energy g0 of the pair being opened
(including the stacking contribution of the next base) and the stretch work
g1 gained per opened pair.  Everything downstream (walk simulation, Bayesian
decoding, rate formulas) consumes the types defined here.

Site indexing is 1-based throughout: site-indexed arrays have ``arr[x]`` for
site ``x`` and slot 0 either holds the landscape origin ``g(0) = 0`` or is
unused padding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property

import numpy as np

__all__ = [
    "Base",
    "BASES",
    "BaseSequence",
    "EnergyTable",
    "ForceField",
    "ModelParams",
    "Environment",
    "EnergyEnvironment",
    "InjectivityReport",
    "DEFAULT_G0",
    "hop_probability",
    "delta_g",
    "free_energy_profile",
    "check_injectivity",
    "transition_rates",
    "environment_from_json",
]


class Base(IntEnum):
    """The four bases, with the fixed total order A < T < C < G.

    The order is load-bearing: every tie in the package (MAP decoding,
    per-site estimates) is broken by it, so results stay deterministic.
    """

    A = 0
    T = 1
    C = 2
    G = 3

    @classmethod
    def from_letter(cls, letter: str) -> "Base":
        try:
            return cls[letter.upper()]
        except KeyError:
            raise ValueError(f"unknown base letter {letter!r}") from None


BASES: tuple[Base, ...] = (Base.A, Base.T, Base.C, Base.G)

# Binding free energies (units of k_B T) for DNA at room temperature.
# Row = current base, column = next base; stacking makes the table asymmetric.
DEFAULT_G0: tuple[tuple[float, ...], ...] = (
    (1.78, 1.55, 2.52, 2.22),
    (1.06, 1.78, 2.28, 2.54),
    (2.54, 2.22, 3.14, 3.85),
    (2.28, 2.52, 3.90, 3.14),
)

# Tiniest positive double; hop probabilities are clamped into the open (0,1).
_TINY = math.ulp(0.0)
_ALMOST_ONE = math.nextafter(1.0, 0.0)


def _frozen_array(data, dtype=np.float64) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EnergyTable:
    """4x4 map (base, next base) -> binding free energy, in units of k_B T."""

    values: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.values)
        if arr.shape != (4, 4):
            raise ValueError(f"energy table must be 4x4, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("energy table entries must be finite")
        object.__setattr__(self, "values", arr)

    @classmethod
    def default(cls) -> "EnergyTable":
        """The standard room-temperature table (A, T, C, G order)."""
        return cls(np.array(DEFAULT_G0))

    def value(self, a: Base, c: Base) -> float:
        """Binding free energy of a pair holding base ``a``, followed by ``c``."""
        return float(self.values[a, c])

    def row(self, a: Base) -> np.ndarray:
        return self.values[a]

    def column(self, c: Base) -> np.ndarray:
        return self.values[:, c]

    def distinct_values(self) -> list[float]:
        """Distinct energies, sorted descending (ladder construction order)."""
        return sorted(set(float(v) for v in self.values.ravel()), reverse=True)

    def to_nested(self) -> list[list[float]]:
        return [[float(v) for v in row] for row in self.values]


def lookup_g0(table: EnergyTable, a: Base, c: Base) -> float:
    """Table entry for row ``a``, column ``c``."""
    return table.value(a, c)


@dataclass(frozen=True)
class BaseSequence:
    """A base sequence b_1..b_M, M >= 2.  Site M is the killing site."""

    bases: tuple[Base, ...]

    def __post_init__(self):
        bases = tuple(Base(b) for b in self.bases)
        if len(bases) < 2:
            raise ValueError("sequence length must be at least 2")
        object.__setattr__(self, "bases", bases)

    @classmethod
    def from_string(cls, letters: str) -> "BaseSequence":
        return cls(tuple(Base.from_letter(c) for c in letters))

    def __len__(self) -> int:
        return len(self.bases)

    def __str__(self) -> str:
        return "".join(b.name for b in self.bases)

    def base(self, x: int) -> Base:
        """Base at 1-indexed site ``x``."""
        if not 1 <= x <= len(self.bases):
            raise IndexError(f"site index {x} out of range [1, {len(self.bases)}]")
        return self.bases[x - 1]


@dataclass(frozen=True)
class ForceField:
    """Per-site stretch work g1 for sites 1..M-1 (units of k_B T).

    A constant force is just the filled constant field, so the site-dependent
    schedules of the force protocols share one code path with the basic model.
    """

    per_site: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.per_site)
        if arr.ndim != 1 or arr.size < 1:
            raise ValueError("force field needs at least one site entry")
        if not np.all(np.isfinite(arr)):
            raise ValueError("force field entries must be finite")
        object.__setattr__(self, "per_site", arr)

    @classmethod
    def constant(cls, value: float, n_sites: int) -> "ForceField":
        return cls(np.full(n_sites, float(value)))

    def __len__(self) -> int:
        return self.per_site.size

    def at(self, x: int) -> float:
        """Stretch work at 1-indexed site ``x``."""
        if not 1 <= x <= self.per_site.size:
            raise IndexError(f"site index {x} out of range [1, {self.per_site.size}]")
        return float(self.per_site[x - 1])

    def padded(self) -> np.ndarray:
        """Length M array with ``arr[x]`` = g1 at site x; slot 0 unused."""
        return np.concatenate([[0.0], self.per_site])


@dataclass(frozen=True)
class ModelParams:
    """Inverse temperature beta and the continuous-time rate scale r."""

    beta: float = 1.0
    rate_scale: float = 1.0

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not (self.rate_scale > 0 and math.isfinite(self.rate_scale)):
            raise ValueError(f"rate_scale must be positive, got {self.rate_scale}")


def hop_probability(dg: float, beta: float) -> float:
    """Probability 1 / (1 + e^(beta*dg)) of opening one more pair.

    Evaluated branch-wise through e^(-|beta*dg|) so large energies neither
    overflow nor return an exact 0 or 1; the result lies in the open (0, 1).
    """
    z = beta * dg
    if z >= 0:
        e = math.exp(-z) if z < 745.0 else 0.0
        p = e / (1.0 + e)
        return p if p > 0.0 else _TINY
    e = math.exp(z) if z > -745.0 else 0.0
    p = 1.0 / (1.0 + e)
    return p if p < 1.0 else _ALMOST_ONE


class _SiteModel:
    """Shared site-level accessors for base-backed and raw-energy environments.

    Subclasses provide ``edge_g0`` (length M, slot 0 unused) with the binding
    energy of edge x for x = 1..M-1.
    """

    @property
    def M(self) -> int:
        raise NotImplementedError

    @property
    def beta(self) -> float:
        return self.params.beta

    @property
    def rate(self) -> float:
        return self.params.rate_scale

    @cached_property
    def g1_padded(self) -> np.ndarray:
        return _frozen_array(self.force.padded())

    def _check_site(self, x: int) -> None:
        if not 1 <= x <= self.M - 1:
            raise IndexError(f"site index {x} out of range [1, {self.M - 1}]")

    def edge_energy(self, x: int) -> float:
        """Binding energy g0 of the pair at site ``x`` (1 <= x <= M-1)."""
        self._check_site(x)
        return float(self.edge_g0[x])

    def delta_g_site(self, x: int) -> float:
        """Free-energy increment g(x) - g(x-1) at this environment's force."""
        self._check_site(x)
        return float(self.edge_g0[x] - self.g1_padded[x])

    @cached_property
    def profile(self) -> np.ndarray:
        """Landscape g(0..M-1) with g(0) = 0; valleys trap the walk."""
        g = np.zeros(self.M)
        g[1:] = np.cumsum(self.edge_g0[1:] - self.g1_padded[1:])
        g.setflags(write=False)
        return g

    @cached_property
    def up_probabilities(self) -> np.ndarray:
        """p_x for x = 1..M-1 (slot 0 unused).  p_1 = 1: site 1 is always open."""
        p = np.zeros(self.M)
        p[1] = 1.0
        beta = self.beta
        for x in range(2, self.M):
            p[x] = hop_probability(self.edge_g0[x] - self.g1_padded[x], beta)
        p.setflags(write=False)
        return p


@dataclass(frozen=True)
class Environment(_SiteModel):
    """A base sequence with its energy table, force field and parameters."""

    seq: BaseSequence
    table: EnergyTable
    force: ForceField
    params: ModelParams

    def __post_init__(self):
        if len(self.force) != len(self.seq) - 1:
            raise ValueError(
                f"force field has {len(self.force)} sites, expected M-1 = {len(self.seq) - 1}"
            )

    @property
    def M(self) -> int:
        return len(self.seq)

    @cached_property
    def edge_g0(self) -> np.ndarray:
        vals = np.zeros(self.M)
        for x in range(1, self.M):
            vals[x] = self.table.value(self.seq.base(x), self.seq.base(x + 1))
        vals.setflags(write=False)
        return vals

    def edge_energies(self) -> list[float]:
        """g0(b_x, b_x+1) for x = 1..M-1, in site order."""
        return [float(v) for v in self.edge_g0[1:]]

    def to_energy_environment(self) -> "EnergyEnvironment":
        return EnergyEnvironment(tuple(self.edge_energies()), self.force, self.params)


@dataclass(frozen=True)
class EnergyEnvironment(_SiteModel):
    """Environment given by raw per-site binding energies, no base identities.

    This is the force-protocol view: transitions are driven by the energy
    sequence g0(1..M-1) directly.
    """

    energies: tuple[float, ...]
    force: ForceField
    params: ModelParams

    def __post_init__(self):
        energies = tuple(float(e) for e in self.energies)
        if len(energies) < 1:
            raise ValueError("need at least one site energy")
        if not all(math.isfinite(e) for e in energies):
            raise ValueError("site energies must be finite")
        if len(self.force) != len(energies):
            raise ValueError(
                f"force field has {len(self.force)} sites, expected {len(energies)}"
            )
        object.__setattr__(self, "energies", energies)

    @property
    def M(self) -> int:
        return len(self.energies) + 1

    @cached_property
    def edge_g0(self) -> np.ndarray:
        return _frozen_array(np.concatenate([[0.0], self.energies]))


def delta_g(env: Environment, x: int, a: Base, c: Base) -> float:
    """g0(a, c) minus the stretch work at site ``x``, for candidate bases a, c."""
    env._check_site(x)
    return env.table.value(a, c) - env.force.at(x)


def free_energy_profile(env: _SiteModel) -> np.ndarray:
    """g(0) = 0 and g(x) for x = 1..M-1."""
    return env.profile


def transition_rates(env: _SiteModel, x: int) -> tuple[float, float]:
    """Continuous-time (forward, backward) jump rates out of site ``x``.

    Backward rate is 0 at x = 1: the first base of the molecule is always
    open, so the walk can only advance from there.
    """
    env._check_site(x)
    forward = env.rate * math.exp(-env.beta * env.edge_g0[x])
    if x == 1:
        return forward, 0.0
    backward = env.rate * math.exp(-env.beta * env.g1_padded[x])
    return forward, backward


@dataclass(frozen=True)
class InjectivityReport:
    """Which of the 8 restricted maps g0(a, .), g0(., a) are injective."""

    rows_injective: dict[Base, bool]
    cols_injective: dict[Base, bool]
    violations: tuple[tuple[str, Base, Base, Base], ...]

    @property
    def satisfied(self) -> bool:
        return not self.violations

    @property
    def failing_map_count(self) -> int:
        failing = {(axis, a) for axis, a, _, _ in self.violations}
        return len(failing)


def check_injectivity(table: EnergyTable, tol: float = 0.0) -> InjectivityReport:
    """Check that g0 is injective in each variable with the other fixed.

    Entries are exact decimal inputs, so the default comparison is exact;
    pass ``tol`` to flag near-collisions as well.  Each violation is
    (axis, fixed base, first colliding base, second colliding base).
    """
    rows_ok: dict[Base, bool] = {}
    cols_ok: dict[Base, bool] = {}
    violations: list[tuple[str, Base, Base, Base]] = []
    for a in BASES:
        for axis, vec, ok in (("row", table.row(a), rows_ok), ("col", table.column(a), cols_ok)):
            bad = []
            for i in range(4):
                for j in range(i + 1, 4):
                    if abs(vec[i] - vec[j]) <= tol:
                        bad.append((axis, a, BASES[i], BASES[j]))
            ok[a] = not bad
            violations.extend(bad)
    return InjectivityReport(rows_ok, cols_ok, tuple(violations))


_ENV_KEYS = {"sequence", "g0", "beta", "r", "g1"}


def environment_from_json(doc: str | dict) -> Environment:
    """Build an Environment from a JSON document (string or parsed dict).

    Schema: {"sequence": "ACGT...", "g0": 4x4 array in A,T,C,G order
    (optional, defaults to the standard table), "beta": float, "r": float,
    "g1": float | array of length M-1}.  Unknown keys are rejected.
    """
    data = json.loads(doc) if isinstance(doc, str) else dict(doc)
    unknown = set(data) - _ENV_KEYS
    if unknown:
        raise ValueError(f"unknown environment key(s): {sorted(unknown)}")
    for key in ("sequence", "beta", "r", "g1"):
        if key not in data:
            raise ValueError(f"environment document missing required key {key!r}")
    seq = BaseSequence.from_string(data["sequence"])
    table = EnergyTable(np.array(data["g0"])) if "g0" in data else EnergyTable.default()
    g1 = data["g1"]
    if isinstance(g1, (int, float)):
        force = ForceField.constant(float(g1), len(seq) - 1)
    else:
        force = ForceField(np.asarray(g1, dtype=float))
    params = ModelParams(beta=float(data["beta"]), rate_scale=float(data["r"]))
    return Environment(seq, table, force, params)


def environment_to_json_dict(env: Environment) -> dict:
    """Inverse of environment_from_json (g1 always written per-site)."""
    return {
        "sequence": str(env.seq),
        "g0": env.table.to_nested(),
        "beta": env.params.beta,
        "r": env.params.rate_scale,
        "g1": [float(v) for v in env.force.per_site],
    }
