import numpy as np
import pytest
from scipy import stats

from nkd.control import build_block, build_global, build_random, build_subset, build_correlated
from nkd.errors import ParameterError
from nkd.landscape import contributions, generate_nk, partial_fitness, total_fitness
from nkd.prng import RandomStream, SeedPath, Tag
from nkd.walk import (
    WalkConfig,
    WalkStreams,
    decide,
    initial_state,
    propose,
    run_walk,
    step,
)

from conftest import hand_landscape


def full_recompute_decision(state, mutation, landscape, control):
    """Sign of the change in the summed contributions over J, computed from scratch."""
    J = set().union(*(control.decision_sets[g] for g in mutation))
    mutant = state.genome.copy()
    mutant[list(mutation)] ^= 1
    before = partial_fitness(landscape, state.genome, J)
    after = partial_fitness(landscape, mutant, J)
    return np.sign(after - before)


def walk_decisions(landscape, control, config, seed_path):
    streams = WalkStreams.from_seed_path(seed_path)
    state = initial_state(landscape, streams.init)
    out = []
    while state.generation < config.generations:
        new = step(state, landscape, control, config, streams)
        out.append(new.accepted > state.accepted)
        state = new
    return out


@pytest.fixture
def land(path):
    return generate_nk(10, 2, path.stream(), path)


def test_propose_single(land, path):
    state = initial_state(land, RandomStream(1))
    s = RandomStream(2)
    muts = [propose(state, WalkConfig(), s) for _ in range(200)]
    assert all(len(m) == 1 and 0 <= m[0] < 10 for m in muts)


def test_propose_all_genes(land):
    state = initial_state(land, RandomStream(1))
    m = propose(state, WalkConfig(mutations_per_generation=10), RandomStream(3))
    assert sorted(m) == list(range(10))


def test_propose_uniform_chi_square(path):
    land20 = generate_nk(20, 1, path.stream())
    state = initial_state(land20, RandomStream(1))
    s = RandomStream(4)
    counts = np.bincount([propose(state, WalkConfig(), s)[0] for _ in range(100000)], minlength=20)
    assert stats.chisquare(counts).pvalue > 0.01


def test_global_decide_equals_total_fitness_comparison(land):
    ctl = build_global(10)
    s = RandomStream(5)
    state = initial_state(land, RandomStream(6))
    for _ in range(300):
        g = s.integers(10)
        mutant = state.genome.copy()
        mutant[g] ^= 1
        expected = total_fitness(land, mutant) > total_fitness(land, state.genome)
        assert decide(state, [g], land, ctl, s) == expected


def test_k0_decide_independent_of_control(path):
    land0 = generate_nk(12, 0, path.stream())
    controls = [build_global(12), build_random(12, 3, RandomStream(1)), build_block(12, 4),
                build_subset(12, 5, 6, RandomStream(2)), build_random(12, 0, RandomStream(3))]
    state = initial_state(land0, RandomStream(7))
    for g in range(12):
        outcomes = {decide(state, [g], land0, c, RandomStream(9)) for c in controls}
        assert len(outcomes) == 1


def test_decide_matches_oracle(path):
    land = generate_nk(10, 2, path.stream())
    ctl = build_random(10, 3, RandomStream(8))
    s = RandomStream(10)
    state = initial_state(land, RandomStream(11))
    for _ in range(1000):
        mutation = propose(state, WalkConfig(), s)
        expected = full_recompute_decision(state, mutation, land, ctl)
        assert expected != 0
        assert decide(state, mutation, land, ctl, s) == (expected > 0)
        state = initial_state(land, RandomStream(s.next_u64()))


def test_decide_rejects_empty(land):
    state = initial_state(land, RandomStream(1))
    with pytest.raises(ParameterError):
        decide(state, [], land, build_global(10), RandomStream(1))


def test_ties_broken_by_coin_and_consume_one_draw():
    # gene 0's table is flat, so flipping it is always an exact tie
    tied = hand_landscape([[], []], [[0.5, 0.5], [0.2, 0.9]])
    ctl = build_global(2)
    state = initial_state(tied, RandomStream(1))
    s = RandomStream(42)
    outcomes = []
    for _ in range(2000):
        before = s.counter
        outcomes.append(decide(state, [0], tied, ctl, s))
        assert s.counter == before + 1
    assert 0.45 < np.mean(outcomes) < 0.55
    before = s.counter
    decide(state, [1], tied, ctl, s)
    assert s.counter == before


def test_step_rejection_keeps_genome(land):
    ctl = build_global(10)
    streams = WalkStreams.from_seed_path(SeedPath(1, ((Tag.START, 0),)))
    state = initial_state(land, streams.init)
    config = WalkConfig(generations=2000)
    saw_reject = saw_accept = False
    while state.generation < config.generations:
        new = step(state, land, ctl, config, streams)
        assert new.generation == state.generation + 1
        if new.accepted == state.accepted:
            saw_reject = True
            assert np.array_equal(new.genome, state.genome)
        else:
            saw_accept = True
            assert new.fitness > state.fitness
        state = new
    assert saw_reject and saw_accept


def test_step_past_end_rejected(land):
    streams = WalkStreams.from_seed_path(SeedPath(1, ((Tag.START, 0),)))
    state = initial_state(land, streams.init)
    with pytest.raises(ParameterError):
        step(state, land, build_global(10), WalkConfig(generations=0), streams)


def test_cache_consistency_every_step(path):
    land = generate_nk(12, 3, path.stream())
    for ctl, config in [
        (build_random(12, 4, RandomStream(3)), WalkConfig(300)),
        (build_global(12), WalkConfig(300, mutations_per_generation=3)),
        (build_global(12), WalkConfig(300, dynamic_control=True, dynamic_d=5)),
    ]:
        streams = WalkStreams.from_seed_path(SeedPath(2, ((Tag.START, 1),)))
        state = initial_state(land, streams.init)
        while state.generation < config.generations:
            state = step(state, land, ctl, config, streams)
            assert np.array_equal(state.contributions, contributions(land, state.genome))
            assert abs(state.fitness - total_fitness(land, state.genome)) < 2**-40


def test_generations_zero_is_start_fitness(land):
    sp = SeedPath(3, ((Tag.START, 0),))
    r = run_walk(land, build_global(10), WalkConfig(generations=0), sp)
    start = WalkStreams.from_seed_path(sp).init.bits(10)
    assert r.final_fitness == pytest.approx(total_fitness(land, start), abs=1e-15)
    assert r.accepted_count == 0


def test_run_walk_deterministic(land):
    sp = SeedPath(3, ((Tag.START, 4),))
    a = run_walk(land, build_random(10, 3, RandomStream(1)), WalkConfig(1000, trajectory_interval=50), sp)
    b = run_walk(land, build_random(10, 3, RandomStream(1)), WalkConfig(1000, trajectory_interval=50), sp)
    assert a.final_fitness == b.final_fitness and a.accepted_count == b.accepted_count
    assert a.trajectory == b.trajectory and len(a.trajectory) == 21


CONFIGS = [
    WalkConfig(400, trajectory_interval=7),
    WalkConfig(400, mutations_per_generation=2),
    WalkConfig(400, mutations_per_generation=5),
    WalkConfig(400, dynamic_control=True, dynamic_d=0),
    WalkConfig(400, dynamic_control=True, dynamic_d=4, trajectory_interval=25),
]


@pytest.mark.parametrize("config", CONFIGS)
@pytest.mark.parametrize("mode", ["global", "random", "subset", "block", "correlated"])
def test_kernel_matches_reference(path, config, mode):
    land = generate_nk(12, 3, path.stream())
    ctl = {
        "global": build_global(12),
        "random": build_random(12, 4, RandomStream(1)),
        "subset": build_subset(12, 4, 7, RandomStream(2)),
        "block": build_block(12, 3),
        "correlated": build_correlated(land, 6, RandomStream(3)),
    }[mode]
    for start in range(3):
        sp = SeedPath(8, ((Tag.START, start),))
        fast = run_walk(land, ctl, config, sp)
        ref = run_walk(land, ctl, config, sp, reference=True)
        assert fast.final_fitness == ref.final_fitness
        assert fast.accepted_count == ref.accepted_count
        assert np.array_equal(fast.final_genome, ref.final_genome)
        assert fast.trajectory == ref.trajectory


def test_global_monotone_and_final_not_below_start(path):
    land = generate_nk(20, 4, path.stream())
    ctl = build_global(20)
    for run in range(100):
        r = run_walk(land, ctl, WalkConfig(5000, trajectory_interval=1), SeedPath(run, ((Tag.START, 0),)))
        values = [f for _, f in r.trajectory]
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert r.final_fitness >= values[0]


def test_converges_to_local_optimum(land):
    ctl = build_global(10)
    for run in range(20):
        r = run_walk(land, ctl, WalkConfig(5000), SeedPath(run, ((Tag.START, 1),)))
        for g in range(10):
            neighbor = r.final_genome.copy()
            neighbor[g] ^= 1
            assert total_fitness(land, neighbor) <= total_fitness(land, r.final_genome)
        assert r.final_fitness == pytest.approx(total_fitness(land, r.final_genome), abs=1e-12)


def test_nk_reduction_identical_decisions(path):
    land = generate_nk(10, 3, path.stream())
    config = WalkConfig(500)
    for run in range(3):
        sp = SeedPath(run, ((Tag.START, 0),))
        a = walk_decisions(land, build_global(10), config, sp)
        b = walk_decisions(land, build_random(10, 9, RandomStream(run)), config, sp)
        assert a == b


def test_k0_control_independence_of_whole_runs(path):
    land = generate_nk(15, 0, path.stream())
    sp = SeedPath(5, ((Tag.START, 0),))
    config = WalkConfig(400)
    ref = walk_decisions(land, build_global(15), config, sp)
    for ctl in (build_random(15, 2, RandomStream(1)), build_subset(15, 6, 5, RandomStream(2)), build_block(15, 5)):
        assert walk_decisions(land, ctl, config, sp) == ref
    assert walk_decisions(land, build_global(15), WalkConfig(400, dynamic_control=True, dynamic_d=3), sp) == ref


def test_config_validation(land):
    with pytest.raises(ParameterError):
        run_walk(land, build_global(10), WalkConfig(mutations_per_generation=11), SeedPath(1, ((1, 1),)))
    with pytest.raises(ParameterError):
        run_walk(land, build_global(10), WalkConfig(dynamic_control=True, dynamic_d=10), SeedPath(1, ((1, 1),)))
    with pytest.raises(ParameterError):
        run_walk(land, build_global(9), WalkConfig(), SeedPath(1, ((1, 1),)))
