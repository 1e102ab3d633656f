import math

import numpy as np
import pytest

from unzipseq.energy import (
    Base,
    BaseSequence,
    EnergyEnvironment,
    EnergyTable,
    ForceField,
    ModelParams,
)
from unzipseq.protocols import (
    LevelLadder,
    ProtocolAbort,
    build_protocol,
    estimate_energy,
    h_margins,
    q_prob,
    rc_energy,
    run_protocol,
    sequence_from_energies,
    validate_ladder,
    window_schedule,
)
from unzipseq.rates import gap_value, pbar
from unzipseq.walker import AggregateStats, SeedSpec, simulate_ensemble, verify_conservation

from bruteforce import brute_pbar

TOY = LevelLadder((3.0, 1.0), (4.0, 2.0, 0.0))


def _level_stats_from_ratios(M, ratios_by_level, scale=10**6):
    """Synthetic LevelStats whose down/up ratio at every site is as given."""
    from unzipseq.protocols import LevelStats

    out = {}
    for lvl, ratios in ratios_by_level.items():
        up = np.zeros(M, dtype=np.int64)
        down = np.zeros(M, dtype=np.int64)
        for x in range(1, M):
            up[x] = scale
            down[x] = round(scale * ratios[x]) if x >= 2 else 0
        out[lvl] = AggregateStats(
            up=up, down=down, sojourn=None, steps=int(up.sum() + down.sum()),
            wall_time=None, mode="discrete", R=scale,
        )
    return LevelStats(out)


# ------------------------------------------------------------------- ladder


def test_validate_ladder_examples():
    assert validate_ladder([3, 1], [4, 2, 0]).valid
    bad = validate_ladder([3, 1], [2, 4, 0])
    assert not bad.valid
    assert any("r[1] > r[2]" in v for v in bad.violations)
    report = validate_ladder([3, 1], [4, 2, 1])
    assert not report.valid and any("r[K+1]" in v for v in report.violations)
    assert not validate_ladder([1, 3], [4, 2, 0]).valid
    assert not validate_ladder([3, 1], [4, 0.5, 0]).valid  # mu_2 - r_2 > 0


def test_ladder_from_table(table1):
    ladder = LevelLadder.from_table(table1)
    assert ladder.K == 10
    assert ladder.validate().valid
    # every inequality individually re-checked
    for k in range(1, ladder.K + 1):
        assert ladder.mu_at(k) - ladder.r_at(k) < 0
        assert ladder.mu_at(k) - ladder.r_at(k + 1) > 0
        for i in range(k + 1, ladder.K + 1):
            assert ladder.mu_at(i) - ladder.r_at(k + 1) < 0
    assert ladder.r_at(ladder.K + 1) == 0.0
    single = LevelLadder.from_energies([2.0, 2.0])
    assert single.K == 1 and single.validate().valid


def test_ladder_level_of():
    assert TOY.level_of(1.0) == 2
    with pytest.raises(ValueError):
        TOY.level_of(2.5)


def test_q_prob():
    lad = LevelLadder((3.0, 1.0), (4.0, 3.0 - 1e-12, 0.0))
    # mu_m == r_i (up to fp) gives 1/2
    assert q_prob(lad, 2, 1, beta=1.0) == pytest.approx(0.5, abs=1e-9)
    for ladder in (TOY, LevelLadder.from_table(EnergyTable.default())):
        assert q_prob(ladder, 1, 1, 1.0) > 0.5
        for k in range(1, ladder.K + 1):
            assert q_prob(ladder, k + 1, k, 1.0) < 0.5
    with pytest.raises(IndexError):
        q_prob(TOY, 4, 1, 1.0)
    with pytest.raises(IndexError):
        q_prob(TOY, 1, 3, 1.0)


# ------------------------------------------------------------------- window


def test_window_schedule_values():
    field = window_schedule(y=5, A=3, C=0.4, M=12, baseline=1.1)
    assert field.at(5 + 3) == pytest.approx(0.0)
    assert field.at(5) == pytest.approx(0.4 * 3)
    assert field.at(5 - 3) == pytest.approx(0.4 * 6)
    assert field.at(1) == 1.1 and field.at(11) == 1.1
    with pytest.raises(ValueError):
        window_schedule(y=2, A=3, C=0.4, M=12)
    with pytest.raises(ValueError):
        window_schedule(y=5, A=3, C=-1.0, M=12)


def test_window_traps_the_walk():
    # 1/pbar_y >= exp(-beta (C A(A-1)/2 - sum of window energies))
    energies = [1.9, 2.1, 2.0, 2.2, 1.8, 2.0, 2.1, 1.9, 2.0, 2.2, 1.9]
    M = len(energies) + 1
    y, A, C = 6, 4, 0.3
    field = window_schedule(y=y, A=A, C=C, M=M, baseline=0.0)
    env = EnergyEnvironment(tuple(energies), field, ModelParams(beta=1.0))
    bound = math.exp(-(C / 2 * A * (A - 1) - sum(energies[y : y + A])))
    assert 1.0 / pbar(env, y) >= bound - 1e-9
    assert 1.0 / pbar(env, y) > 1e3  # the window does create a deep trap


# ------------------------------------------------------------------- plans


def test_build_protocol_uniform_pair():
    plan = build_protocol("uniform-pair", TOY, M=6, replicas=10, k=1)
    assert plan.level_indices() == [1, 2]
    assert np.all(plan.levels[0].force.per_site == 4.0)
    assert np.all(plan.levels[1].force.per_site == 2.0)
    scan = build_protocol("uniform-pair", TOY, M=6, replicas=10, max_level=3)
    assert scan.level_indices() == [1, 2, 3]
    with pytest.raises(IndexError):
        build_protocol("uniform-pair", TOY, M=6, replicas=10, k=5)
    with pytest.raises(ValueError):
        build_protocol("sideways", TOY, M=6, replicas=10, k=1)


def test_build_protocol_focus_and_absorbing():
    x = 4
    focus = build_protocol("focus-at-x", TOY, M=8, replicas=5, site=x)
    assert focus.level_indices() == [1, 2]
    for lv in focus.levels:
        assert lv.force.at(x - 1) == TOY.r_at(1)
        assert lv.force.at(x) == TOY.r_at(lv.level_index)
        assert lv.force.at(x + 1) == TOY.r_at(TOY.K)
    absorbing = build_protocol("absorbing-tail", TOY, M=8, replicas=5, site=x)
    for lv in absorbing.levels:
        assert lv.force.at(x) == TOY.r_at(lv.level_index)
        assert all(lv.force.at(z) == 0.0 for z in range(x + 1, 8))
    with pytest.raises(ValueError):
        build_protocol("focus-at-x", TOY, M=8, replicas=5, site=1)


def test_run_protocol_single_level_equals_plain_ensemble():
    energies = (2.0, 1.5, 2.0)
    params = ModelParams(beta=1.0)
    plan = build_protocol("uniform-pair", TOY, M=4, replicas=25, k=1)
    stats = run_protocol(energies, params, plan, SeedSpec(3))
    env1 = EnergyEnvironment(energies, ForceField.constant(TOY.r_at(1), 3), params)
    direct = simulate_ensemble(env1, 25, "discrete", SeedSpec(3).child(1))
    assert np.array_equal(stats.level(1).up, direct.up)
    assert np.array_equal(stats.level(1).down, direct.down)
    for lvl in plan.level_indices():
        assert verify_conservation(stats.level(lvl)) == []


def test_run_protocol_forward_drift_at_high_force():
    # force far above every energy: forward moves dominate everywhere
    energies = tuple([1.0] * 7)
    lad = LevelLadder((1.0,), (5.0, 0.0))
    plan = build_protocol("uniform-pair", lad, M=8, replicas=400, k=1)
    stats = run_protocol(energies, ModelParams(beta=1.0), plan, SeedSpec(8))
    agg = stats.level(1)
    for x in range(2, 8):
        assert agg.down[x] < agg.up[x]


def test_run_protocol_step_cap_names_level():
    energies = tuple([3.0] * 6)
    plan = build_protocol("uniform-pair", TOY, M=7, replicas=3, k=2)
    with pytest.raises(ProtocolAbort) as err:
        run_protocol(energies, ModelParams(beta=2.0), plan, SeedSpec(4), step_cap=20)
    assert err.value.level in (2, 3)


# ------------------------------------------------------------------- estimate


def test_estimate_energy_synthetic_flip():
    stats = _level_stats_from_ratios(6, {1: [0, 0, 0.5, 0.5, 0.5, 0.5],
                                         2: [0, 0, 2.0, 2.0, 2.0, 2.0]})
    est = estimate_energy(stats, 3, TOY)
    assert est.level == 1 and est.value == 3.0 and not est.undecided


def test_estimate_energy_undecided_when_always_descending():
    stats = _level_stats_from_ratios(5, {1: [0, 0, 0.4, 0.4, 0.4],
                                         2: [0, 0, 0.5, 0.5, 0.5],
                                         3: [0, 0, 0.6, 0.6, 0.6]})
    est = estimate_energy(stats, 2, TOY)
    assert est.undecided and est.level is None and est.value is None


def test_estimate_energy_missing_level():
    stats = _level_stats_from_ratios(5, {1: [0, 0, 0.4, 0.4, 0.4]})
    with pytest.raises(ValueError, match="level"):
        estimate_energy(stats, 2, TOY)


def test_estimate_energy_noiseless_expected_counts(table1):
    # replace the empirical ratio by its mean e^{beta dg}: the flip must
    # recover the true level at every interior site for any level assignment
    ladder = LevelLadder.from_table(table1)
    beta = 1.0
    rng = np.random.default_rng(5)
    for _ in range(5):
        M = 7
        levels = rng.integers(1, ladder.K + 1, size=M - 1)
        energies = [ladder.mu_at(int(m)) for m in levels]
        ratios_by_level = {}
        for i in range(1, ladder.K + 2):
            r = ladder.r_at(i)
            ratios_by_level[i] = [0.0] + [math.exp(beta * (e - r)) for e in energies]
        stats = _level_stats_from_ratios(M, ratios_by_level, scale=10**7)
        for x in range(2, M):
            est = estimate_energy(stats, x, ladder)
            assert not est.undecided
            assert est.value == pytest.approx(energies[x - 1])


def test_estimate_energy_end_to_end_small():
    ladder = LevelLadder.from_table(EnergyTable.default())
    energies = (1.78, 1.55, 1.78, 1.78, 1.55)
    plan = build_protocol("uniform-pair", ladder, M=6, replicas=1500, max_level=10)
    for seed in (1, 2):
        stats = run_protocol(energies, ModelParams(beta=1.0), plan, SeedSpec(seed))
        for x in range(2, 6):
            est = estimate_energy(stats, x, ladder)
            assert est.value == pytest.approx(energies[x - 1]), (seed, x, est)


# ------------------------------------------------------------------- margins


def test_h_margins_nonnegative_and_toy_enumeration():
    for ladder in (TOY, LevelLadder.from_table(EnergyTable.default())):
        hm = h_margins(ladder, beta=1.0)
        assert all(h1 >= 0 and h2 >= 0 for _, h1, h2 in hm.per_pair)
        assert hm.h_forward >= 0 and hm.h_backward >= 0
    # K=2 toy ladder: hand enumeration of the displayed min over l in {k-1, k+1}
    beta = 1.0
    hm = h_margins(TOY, beta)
    mu, r = TOY.mu, TOY.r_levels
    for k in (1, 2):
        a_k = mu[k - 1] - r[k - 1]
        a_k1 = mu[k - 1] - r[k]
        ls = [l for l in (k - 1, k + 1) if 1 <= l <= 2]
        exp_k = min(
            gap_value("H", a_k, mu[l - 1] - r[k - 1], beta)
            - gap_value("H", a_k, a_k, beta)
            for l in ls
        )
        exp_k1 = min(
            gap_value("H", a_k1, mu[l - 1] - r[k], beta)
            - gap_value("H", a_k1, a_k1, beta)
            for l in ls
        )
        assert hm.per_pair[k - 1][1] == pytest.approx(exp_k, rel=1e-12)
        assert hm.per_pair[k - 1][2] == pytest.approx(exp_k1, rel=1e-12)
    assert hm.h_forward == hm.per_pair[0][1]
    assert hm.h_backward == hm.per_pair[0][2]


def test_h_margins_single_level_ladder():
    # one energy level: nothing to confuse, margins are infinite
    single = LevelLadder.from_energies([2.0])
    hm = h_margins(single, 1.0)
    assert hm.per_pair[0][1] == math.inf and hm.per_pair[0][2] == math.inf
    assert rc_energy((2.0, 2.0), 2, single, 1.0, "uniform-pair", k=1) == math.inf


def test_h_margin_grows_exponentially_with_beta():
    # H^(k+1) ~ beta exp(beta (mu_k - r_{k+1})) for the toy ladder at k = 1
    a = TOY.mu_at(1) - TOY.r_at(2)
    ratios = []
    for beta in (2.0, 4.0, 8.0):
        hm = h_margins(TOY, beta)
        ratios.append(hm.per_pair[0][2] / (beta * math.exp(beta * a)))
    assert abs(ratios[1] - 1) < abs(ratios[0] - 1)
    assert abs(ratios[2] - 1) < abs(ratios[1] - 1)
    assert abs(ratios[2] - 1) < 0.01


# ------------------------------------------------------------------- bounds


def test_rc_energy_uniform_pair_hand_formula():
    energies = (2.0, 2.0, 2.0, 2.0)
    beta, k = 1.0, 1
    bound = rc_energy(energies, 3, TOY, beta, "uniform-pair", k=k)
    hm = h_margins(TOY, beta)
    pb = []
    for lvl in (1, 2):
        env = EnergyEnvironment(
            energies, ForceField.constant(TOY.r_at(lvl), 4), ModelParams(beta=beta)
        )
        pb.append(brute_pbar(env, 3))
    hand = hm.per_pair[0][1] * pb[0] + hm.per_pair[0][2] * pb[1]
    assert bound == pytest.approx(hand, rel=1e-10)
    assert bound > 0


def test_rc_energy_rejects_invalid_ladder():
    dup = LevelLadder((3.0, 3.0), (4.0, 2.0, 0.0))
    with pytest.raises(ValueError, match="invalid ladder"):
        rc_energy((2.0, 2.0), 2, dup, 1.0, "uniform-pair", k=1)


def test_rc_energy_absorbing_scaling_and_invariance():
    beta = 1.0
    energies = [2.0, 1.5, 2.2, 1.9, 2.1, 1.7]
    vals = [rc_energy(energies, x, TOY, beta, "absorbing-tail") for x in (2, 3, 4)]
    factor = math.exp(TOY.mu_at(TOY.K) * beta)
    assert vals[0] / vals[1] == pytest.approx(factor, rel=1e-12)
    assert vals[1] / vals[2] == pytest.approx(factor, rel=1e-12)
    # perturbing the unknown tail leaves the bound exactly unchanged
    x = 3
    before = rc_energy(energies, x, TOY, beta, "absorbing-tail")
    perturbed = list(energies)
    for z in range(x, len(energies)):
        perturbed[z] += 0.37
    after = rc_energy(perturbed, x, TOY, beta, "absorbing-tail")
    assert before == after
    assert before > 0


def test_rc_energy_focus_positive_and_tail_dependent():
    beta = 1.0
    energies = [2.0, 1.5, 2.2, 1.9, 2.1, 1.7]
    x = 3
    val = rc_energy(energies, x, TOY, beta, "focus-at-x")
    assert val > 0
    perturbed = list(energies)
    perturbed[-1] += 0.5
    assert rc_energy(perturbed, x, TOY, beta, "focus-at-x") != val


# ------------------------------------------------------- energy -> sequence


def test_sequence_from_energies_unique(table1):
    res = sequence_from_energies([1.78, 1.78], table1, Base.A)
    assert str(res.unique) == "AAA"
    assert not res.ambiguous


def test_sequence_from_energies_homopolymer_twins(table1):
    res = sequence_from_energies([3.14, 3.14, 3.14], table1, None)
    names = {str(s) for s in res.sequences}
    assert names == {"CCCC", "GGGG"}
    assert res.ambiguous


def test_sequence_from_energies_alternation_twins(table1):
    truth = BaseSequence.from_string("ACACAC")
    energies = [table1.value(truth.base(x), truth.base(x + 1)) for x in range(1, 6)]
    with_b1 = sequence_from_energies(energies, table1, Base.A)
    assert str(with_b1.unique) == "ACACAC"
    free = sequence_from_energies(energies, table1, None)
    assert {str(s) for s in free.sequences} == {"ACACAC", "GTGTGT"}


def test_sequence_from_energies_roundtrip_random(table1):
    rng = np.random.default_rng(99)
    for _ in range(30):
        M = int(rng.integers(3, 12))
        letters = "".join(rng.choice(list("ATCG"), size=M))
        seq = BaseSequence.from_string(letters)
        energies = [table1.value(seq.base(x), seq.base(x + 1)) for x in range(1, M)]
        res = sequence_from_energies(energies, table1, seq.base(1))
        assert str(res.unique) == letters  # row injectivity: unique given b1
        free = sequence_from_energies(energies, table1, None)
        assert letters in {str(s) for s in free.sequences}


def test_sequence_from_energies_errors(table1):
    with pytest.raises(ValueError, match="appears nowhere"):
        sequence_from_energies([1.78, 9.99], table1, Base.A)
    # 1.06 exists in the table but not in row A
    with pytest.raises(ValueError, match="absent from row A"):
        sequence_from_energies([1.06], table1, Base.A)
    res = sequence_from_energies([1.06], table1, None)
    assert str(res.unique) == "TA"
