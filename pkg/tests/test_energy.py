import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unzipseq.energy import (
    BASES,
    Base,
    BaseSequence,
    EnergyTable,
    Environment,
    ForceField,
    ModelParams,
    check_injectivity,
    delta_g,
    environment_from_json,
    environment_to_json_dict,
    free_energy_profile,
    hop_probability,
    lookup_g0,
    transition_rates,
)

from conftest import make_env


def test_table1_values(table1):
    assert lookup_g0(table1, Base.A, Base.A) == 1.78
    assert lookup_g0(table1, Base.T, Base.A) == 1.06
    assert lookup_g0(table1, Base.G, Base.C) == 3.90
    assert lookup_g0(table1, Base.C, Base.G) == 3.85


def test_base_order_and_letters():
    assert Base.A < Base.T < Base.C < Base.G
    assert Base.from_letter("g") is Base.G
    with pytest.raises(ValueError):
        Base.from_letter("X")
    assert str(BaseSequence.from_string("ATCG")) == "ATCG"


def test_delta_g_examples():
    env = make_env("AAA", 1.78)
    assert delta_g(env, 1, Base.A, Base.A) == pytest.approx(0.0, abs=1e-15)
    env0 = make_env("TAA", 0.0)
    assert delta_g(env0, 1, Base.T, Base.A) == 1.06
    env1 = make_env("GCC", 1.0)
    assert delta_g(env1, 1, Base.G, Base.C) == pytest.approx(2.90)
    with pytest.raises(IndexError):
        delta_g(env, 3, Base.A, Base.A)
    with pytest.raises(IndexError):
        delta_g(env, 0, Base.A, Base.A)


def test_hop_probability_values():
    assert hop_probability(0.0, 1.0) == 0.5
    assert hop_probability(0.0, 17.3) == 0.5
    # 1/(1 + e), evaluated independently at high precision
    assert hop_probability(1.0, 1.0) == pytest.approx(0.26894142136999512, abs=1e-16)
    p = hop_probability(1000.0, 1.0)
    assert 0.0 < p <= 1e-300 and not math.isnan(p)
    q = hop_probability(-1000.0, 1.0)
    assert 0.0 < q < 1.0 and q > 1 - 1e-15


@settings(max_examples=300, derandomize=True)
@given(
    dg=st.floats(-500, 500, allow_nan=False),
    beta=st.floats(1e-6, 50, allow_nan=False),
)
def test_hop_probability_symmetry(dg, beta):
    assert hop_probability(dg, beta) + hop_probability(-dg, beta) == pytest.approx(
        1.0, abs=1e-15
    )


def test_hop_monotone():
    grid = np.linspace(-30, 30, 101)
    vals = [hop_probability(v, 1.3) for v in grid]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_free_energy_profile():
    env = make_env("AAA", 0.0)
    g = free_energy_profile(env)
    assert g[0] == 0.0
    assert g[1] == pytest.approx(1.78) and g[2] == pytest.approx(3.56)
    flat = make_env("AAA", 1.78)
    assert np.allclose(free_energy_profile(flat), 0.0, atol=1e-15)


def test_profile_increments_match_delta_g():
    env = make_env("ATCGGTAC", 1.3)
    g = free_energy_profile(env)
    for x in range(1, env.M):
        b, c = env.seq.base(x), env.seq.base(x + 1)
        assert g[x] - g[x - 1] == pytest.approx(delta_g(env, x, b, c), abs=1e-12)


def test_injectivity_table1(table1):
    report = check_injectivity(table1)
    assert report.satisfied
    assert all(report.rows_injective.values()) and all(report.cols_injective.values())


def test_injectivity_constructed_collision(table1):
    values = table1.values.copy()
    values[Base.A, Base.T] = values[Base.A, Base.A]
    report = check_injectivity(EnergyTable(values))
    assert not report.satisfied
    assert ("row", Base.A, Base.A, Base.T) in report.violations
    assert not report.rows_injective[Base.A]


def test_injectivity_constant_table():
    report = check_injectivity(EnergyTable(np.full((4, 4), 2.0)))
    assert not report.satisfied
    assert report.failing_map_count == 8
    assert not any(report.rows_injective.values())
    assert not any(report.cols_injective.values())


def test_transition_rates():
    env = make_env("AAAA", 0.0, beta=1.0, r=1.0)
    fwd, bwd = transition_rates(env, 1)
    assert bwd == 0.0
    fwd, bwd = transition_rates(env, 2)
    assert fwd == pytest.approx(math.exp(-1.78), rel=1e-15)
    assert bwd == pytest.approx(1.0)
    # zero energies at zero force: both rates reduce to the bare scale r
    env0 = make_env("AAAA", 0.0, beta=1.7, r=2.5, table=EnergyTable(np.zeros((4, 4))))
    fwd, bwd = transition_rates(env0, 2)
    assert fwd == 2.5 and bwd == 2.5
    with pytest.raises(IndexError):
        transition_rates(env, 4)


def test_discrete_hop_matches_embedded_chain():
    env = make_env("ATCGGTAC", 1.9, beta=1.3, r=0.7)
    for x in range(2, env.M):
        fwd, bwd = transition_rates(env, x)
        dg = env.edge_energy(x) - env.force.at(x)
        assert hop_probability(dg, env.beta) == pytest.approx(
            fwd / (fwd + bwd), abs=1e-12
        )


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(beta=0.0)
    with pytest.raises(ValueError):
        ModelParams(beta=1.0, rate_scale=-1.0)


def test_force_field_validation():
    with pytest.raises(ValueError):
        Environment(
            BaseSequence.from_string("ATG"),
            EnergyTable.default(),
            ForceField.constant(1.0, 5),
            ModelParams(),
        )
    f = ForceField(np.array([1.0, 2.0]))
    assert f.at(2) == 2.0
    with pytest.raises(IndexError):
        f.at(3)


def test_environment_json_roundtrip():
    doc = {"sequence": "ATCG", "beta": 1.5, "r": 2.0, "g1": 1.1}
    env = environment_from_json(json.dumps(doc))
    assert str(env.seq) == "ATCG"
    assert env.table.value(Base.G, Base.C) == 3.90  # default table applies
    assert np.all(env.force.per_site == 1.1)
    back = environment_to_json_dict(env)
    env2 = environment_from_json(back)
    assert str(env2.seq) == str(env.seq)
    assert np.array_equal(env2.table.values, env.table.values)
    assert np.array_equal(env2.force.per_site, env.force.per_site)


def test_environment_json_per_site_force_and_errors():
    env = environment_from_json(
        {"sequence": "ATCG", "beta": 1.0, "r": 1.0, "g1": [0.5, 1.0, 1.5]}
    )
    assert env.force.at(3) == 1.5
    with pytest.raises(ValueError, match="unknown"):
        environment_from_json({"sequence": "AT", "beta": 1, "r": 1, "g1": 0, "oops": 1})
    with pytest.raises(ValueError, match="g1"):
        environment_from_json({"sequence": "AT", "beta": 1, "r": 1})
