import json

import numpy as np
import pytest

from cubevo.env import (
    Action,
    EnvironmentSpec,
    EnvRuntime,
    GeneratorParams,
    Goal,
    apply_action,
    apply_noise,
    available_reward,
    difficulty,
    env_step,
    generate_environment,
    match_achieved_goals,
    occupancy,
)


def bits(text: str) -> np.ndarray:
    return np.array([int(c) for c in text], dtype=np.int8)


def make_spec(sequences, n_env=8, t_rec=30, p_stoch=0.0, reward_scale=1.0):
    goals = tuple(
        Goal(id=i, sequence=tuple(seq), full_reward=reward_scale * len(seq))
        for i, seq in enumerate(sequences)
    )
    spec = EnvironmentSpec(
        n_env=n_env, goals=goals, t_rec=t_rec, p_stoch=p_stoch, reward_scale=reward_scale
    )
    spec.validate()
    return spec


# ---------------------------------------------------------------- actions


def test_apply_action_sets_bit():
    state, effective = apply_action(bits("00000000"), Action(3, 1))
    assert effective
    assert "".join(map(str, state)) == "00010000"


def test_apply_action_ineffective_when_bit_already_set():
    state, effective = apply_action(bits("00010000"), Action(3, 1))
    assert not effective
    assert "".join(map(str, state)) == "00010000"


def test_apply_action_clears_bit():
    state, effective = apply_action(bits("11111111"), Action(0, 0))
    assert effective
    assert "".join(map(str, state)) == "01111111"


def test_apply_action_rejects_out_of_range_bit():
    with pytest.raises(ValueError):
        apply_action(bits("0000"), Action(4, 1))


def test_apply_action_changes_at_most_one_bit():
    rng = np.random.default_rng(0)
    for _ in range(200):
        state = rng.integers(0, 2, 8).astype(np.int8)
        action = Action(int(rng.integers(8)), int(rng.integers(2)))
        new_state, effective = apply_action(state, action)
        hamming = int(np.sum(state != new_state))
        assert hamming <= 1
        assert effective == (hamming == 1)


def test_action_index_round_trip():
    for bit in range(8):
        for value in (0, 1):
            action = Action(bit, value)
            assert action.index == 2 * bit + value
            assert Action.from_index(action.index) == action


# ---------------------------------------------------------------- noise


def test_apply_noise_zero_probability_is_identity():
    rng = np.random.default_rng(1)
    state = bits("10110100")
    new_state, flipped = apply_noise(state, 0.0, rng)
    assert flipped == []
    assert np.array_equal(new_state, state)


def test_apply_noise_certain_flip_inverts_everything():
    rng = np.random.default_rng(1)
    state = bits("10110100")
    new_state, flipped = apply_noise(state, 1.0, rng)
    assert flipped == list(range(8))
    assert np.array_equal(new_state, 1 - state)


def test_apply_noise_flip_fraction_matches_probability():
    # 10^6 bit draws at the reference flip probability.
    rng = np.random.default_rng(2)
    state = np.zeros(1000, dtype=np.int8)
    flips = 0
    for _ in range(1000):
        _, flipped = apply_noise(state, 0.0085, rng)
        flips += len(flipped)
    assert abs(flips / 1e6 - 0.0085) < 0.0005


def test_apply_noise_deterministic_given_stream():
    state = bits("01010101")
    out1, f1 = apply_noise(state, 0.3, np.random.default_rng(7))
    out2, f2 = apply_noise(state, 0.3, np.random.default_rng(7))
    assert np.array_equal(out1, out2)
    assert f1 == f2


# ---------------------------------------------------------------- rewards


def test_available_reward_full_when_never_reached():
    spec = make_spec([[(0, 1), (1, 1), (2, 1)]], reward_scale=1.0)
    runtime = EnvRuntime(spec, np.zeros(8, dtype=np.int8))
    assert available_reward(runtime, spec.goals[0], 50) == 3.0


def test_available_reward_linear_midpoint():
    spec = make_spec([[(0, 1), (1, 1), (2, 1)]])
    runtime = EnvRuntime(spec, np.zeros(8, dtype=np.int8))
    runtime.last_reached[0] = 100
    assert available_reward(runtime, spec.goals[0], 115) == pytest.approx(1.5)


def test_available_reward_recovers_fully_and_clamps():
    spec = make_spec([[(0, 1), (1, 1), (2, 1)]])
    runtime = EnvRuntime(spec, np.zeros(8, dtype=np.int8))
    runtime.last_reached[0] = 100
    assert available_reward(runtime, spec.goals[0], 130) == 3.0
    assert available_reward(runtime, spec.goals[0], 500) == 3.0


def test_available_reward_piecewise_linear_non_decreasing():
    spec = make_spec([[(0, 1), (0, 0)]])
    runtime = EnvRuntime(spec, np.zeros(8, dtype=np.int8))
    runtime.last_reached[0] = 10
    values = [available_reward(runtime, spec.goals[0], t) for t in range(10, 60)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert all(0.0 <= v <= spec.goals[0].full_reward for v in values)


# ---------------------------------------------------------------- matching


def test_match_single_element_goal():
    spec = make_spec([[(2, 1)]])
    assert match_achieved_goals([(2, 1)], spec.goals) == [0]


def test_match_respects_order():
    spec = make_spec([[(5, 0), (2, 1)]])
    assert match_achieved_goals([(2, 1), (5, 0)], spec.goals) == []


def test_match_multiple_simultaneous_goals():
    spec = make_spec([[(1, 0), (1, 1)], [(1, 1)]])
    history = [(1, 1), (1, 0), (1, 1)]
    assert match_achieved_goals(history, spec.goals) == [0, 1]


def _brute_force_matches(history, goals):
    pairs = [tuple(h) for h in history]
    out = []
    for goal in goals:
        k = goal.complexity
        if len(pairs) >= k and all(
            pairs[len(pairs) - k + j] == goal.sequence[j] for j in range(k)
        ):
            out.append(goal.id)
    return out


def test_match_agrees_with_brute_force_oracle():
    rng = np.random.default_rng(11)
    for _ in range(300):
        n_env = 3
        history = [
            (int(rng.integers(n_env)), int(rng.integers(2)))
            for _ in range(int(rng.integers(0, 11)))
        ]
        goals = []
        for gid in range(int(rng.integers(1, 6))):
            length = int(rng.integers(1, 4))
            seq = []
            last = {}
            for _ in range(length):
                bit = int(rng.integers(n_env))
                val = 1 - last[bit] if bit in last else int(rng.integers(2))
                last[bit] = val
                seq.append((bit, val))
            goals.append(Goal(id=gid, sequence=tuple(seq), full_reward=float(length)))
        assert match_achieved_goals(history, goals) == _brute_force_matches(history, goals)


# ---------------------------------------------------------------- stepping


def test_env_step_immediate_goal_pays_full_reward():
    spec = make_spec([[(0, 1)]])
    runtime = EnvRuntime(spec, np.zeros(8, dtype=np.int8))
    outcome = env_step(runtime, Action(0, 1), np.random.default_rng(0))
    assert outcome.effective
    assert outcome.achieved == [(0, 1.0)]
    assert outcome.reward_total == 1.0


def test_env_step_ineffective_action_pays_nothing():
    spec = make_spec([[(0, 1)]])
    runtime = EnvRuntime(spec, np.zeros(8, dtype=np.int8))
    outcome = env_step(runtime, Action(0, 0), np.random.default_rng(0))
    assert not outcome.effective
    assert outcome.achieved == []
    assert outcome.reward_total == 0.0


def test_env_step_reachievement_collects_partial_pool():
    # Scripted alternator on a single-bit goal: achieve at t=0, reset the
    # bit at t=1, achieve again at t=2 -> pays full * 2/30.
    spec = make_spec([[(0, 1)]], t_rec=30)
    runtime = EnvRuntime(spec, np.zeros(8, dtype=np.int8))
    rng = np.random.default_rng(0)
    first = env_step(runtime, Action(0, 1), rng)
    assert first.reward_total == 1.0
    second = env_step(runtime, Action(0, 0), rng)
    assert second.effective and second.reward_total == 0.0
    third = env_step(runtime, Action(0, 1), rng)
    assert third.reward_total == pytest.approx(2.0 / 30.0)


def test_env_step_idle_repetition_never_repays():
    # After achieving a goal, hammering the same (now ineffective) action
    # must not trickle reward out of the recovering pool.
    spec = make_spec([[(0, 1)]], t_rec=30)
    runtime = EnvRuntime(spec, np.zeros(8, dtype=np.int8))
    rng = np.random.default_rng(0)
    env_step(runtime, Action(0, 1), rng)
    for _ in range(5):
        outcome = env_step(runtime, Action(0, 1), rng)
        assert outcome.reward_total == 0.0


def test_env_step_noise_flips_do_not_match_goals():
    # p_stoch=1 flips every bit after the action; goal matching only sees
    # the agent's effective actions.
    spec = make_spec([[(1, 1)]], p_stoch=1.0)
    runtime = EnvRuntime(spec, np.zeros(8, dtype=np.int8))
    outcome = env_step(runtime, Action(0, 1), np.random.default_rng(3))
    assert outcome.achieved == []
    assert outcome.noise_flips == list(range(8))
    # bit 0 was set by the agent then flipped back by noise
    assert runtime.state[0] == 0


def test_env_step_deterministic_without_noise():
    spec = make_spec([[(0, 1), (1, 1)]])
    results = []
    for _ in range(2):
        runtime = EnvRuntime(spec, bits("01000000"))
        rng = np.random.default_rng(99)
        log = [env_step(runtime, Action(t % 8, t % 2), rng).reward_total for t in range(20)]
        results.append((log, runtime.state.tolist(), runtime.t))
    assert results[0] == results[1]


# ---------------------------------------------------------------- metrics


def test_occupancy_single_simple_goal():
    spec = make_spec([[(3, 1)]])
    assert occupancy(spec) == 0.0625


def test_occupancy_repeated_bit_goal():
    spec = make_spec([[(3, 1), (3, 0)]])
    assert occupancy(spec) == 0.0078125


def test_occupancy_empty_goal_list_is_zero():
    spec = EnvironmentSpec(n_env=8, goals=())
    assert occupancy(spec) == 0.0


def test_occupancy_is_additive_over_disjoint_goal_sets():
    rng = np.random.default_rng(5)
    params = GeneratorParams(n_env=8, n_root_goals=4, max_complexity=3)
    spec = generate_environment(params, rng)
    half = len(spec.goals) // 2
    left = EnvironmentSpec(n_env=8, goals=spec.goals[:half])
    right = EnvironmentSpec(n_env=8, goals=spec.goals[half:])
    assert occupancy(left) + occupancy(right) == pytest.approx(occupancy(spec), rel=1e-12)


def test_difficulty_is_reciprocal():
    assert difficulty(make_spec([[(3, 1)]])) == 16.0
    assert difficulty(make_spec([[(3, 1), (3, 0)]])) == 128.0


def test_difficulty_rejects_empty_goal_list():
    with pytest.raises(ValueError):
        difficulty(EnvironmentSpec(n_env=8, goals=()))


# ---------------------------------------------------------------- validation


def test_goal_rejects_adjacent_duplicate_elements():
    goal = Goal(id=0, sequence=((1, 1), (1, 1)), full_reward=2.0)
    with pytest.raises(ValueError):
        goal.validate(8)


def test_goal_rejects_non_alternating_repeat_writes():
    goal = Goal(id=0, sequence=((1, 1), (2, 0), (1, 1)), full_reward=3.0)
    with pytest.raises(ValueError):
        goal.validate(8)


def test_goal_allows_alternating_repeat_writes():
    Goal(id=0, sequence=((1, 1), (2, 0), (1, 0)), full_reward=3.0).validate(8)


def test_spec_rejects_bad_parameters():
    good = make_spec([[(0, 1)]])
    with pytest.raises(ValueError):
        EnvironmentSpec(n_env=0, goals=()).validate()
    with pytest.raises(ValueError):
        EnvironmentSpec(n_env=8, goals=good.goals, t_rec=0).validate()
    with pytest.raises(ValueError):
        EnvironmentSpec(n_env=8, goals=good.goals, p_stoch=1.5).validate()


# ---------------------------------------------------------------- generator


def test_generator_degenerate_parameters_yield_single_trivial_goal():
    params = GeneratorParams(n_env=8, n_root_goals=1, max_complexity=1)
    spec = generate_environment(params, np.random.default_rng(0))
    assert len(spec.goals) == 1
    assert spec.goals[0].complexity == 1


def test_generator_output_always_satisfies_invariants():
    for seed in range(1000):
        params = GeneratorParams(n_env=6, n_root_goals=3, max_complexity=5)
        spec = generate_environment(params, np.random.default_rng(seed))
        spec.validate()  # raises on any invariant violation


def test_generator_is_deterministic_given_seed():
    params = GeneratorParams(n_env=8, n_root_goals=3, max_complexity=4)
    one = generate_environment(params, np.random.default_rng(42))
    two = generate_environment(params, np.random.default_rng(42))
    assert one.to_json_dict() == two.to_json_dict()


def test_generator_rejects_unsatisfiable_parameters():
    with pytest.raises(ValueError):
        generate_environment(
            GeneratorParams(n_env=8, n_root_goals=1, max_complexity=0),
            np.random.default_rng(0),
        )
    with pytest.raises(ValueError):
        generate_environment(
            GeneratorParams(n_env=0, n_root_goals=1, max_complexity=1),
            np.random.default_rng(0),
        )


def test_generator_registers_subgoals_of_split_roots():
    params = GeneratorParams(
        n_env=8, n_root_goals=1, max_complexity=6, min_complexity=6, split_prob=1.0
    )
    spec = generate_environment(params, np.random.default_rng(3))
    root = spec.goals[0]
    assert root.complexity == 6
    assert len(spec.goals) > 1
    # every subgoal is a contiguous slice of its root
    text = list(root.sequence)
    for goal in spec.goals[1:]:
        sub = list(goal.sequence)
        assert any(text[i : i + len(sub)] == sub for i in range(len(text)))


# ---------------------------------------------------------------- serialization


def test_environment_json_round_trip_is_lossless():
    rng = np.random.default_rng(8)
    params = GeneratorParams(n_env=8, n_root_goals=3, max_complexity=4, p_stoch=0.0085)
    spec = generate_environment(params, rng)
    doc = json.loads(json.dumps(spec.to_json_dict()))
    restored = EnvironmentSpec.from_json_dict(doc)
    assert restored == spec


def test_environment_parse_error_names_missing_field():
    with pytest.raises(ValueError, match="n_env"):
        EnvironmentSpec.from_json_dict({"t_rec": 30, "p_stoch": 0, "reward_scale": 1, "goals": []})
