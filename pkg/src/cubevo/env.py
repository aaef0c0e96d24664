"""Multi-goal hypercube environment.

The world state is a vector of bits. Each step the agent writes one bit
(possibly a no-op if the bit already holds the target value); goals are
ordered sequences of bit writes and a goal is achieved whenever the most
recent *effective* actions equal its sequence. Each goal pays from a
reward pool that empties on achievement and refills linearly over
``t_rec`` steps. Independently of the agent, every bit may flip at random
each step with probability ``p_stoch``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Action",
    "Goal",
    "EnvironmentSpec",
    "EnvRuntime",
    "StepOutcome",
    "GeneratorParams",
    "apply_action",
    "apply_noise",
    "available_reward",
    "match_achieved_goals",
    "env_step",
    "occupancy",
    "difficulty",
    "generate_environment",
]


@dataclass(frozen=True, order=True)
class Action:
    """A single-bit write: set bit ``bit_index`` to ``target_value``."""

    bit_index: int
    target_value: int

    @property
    def index(self) -> int:
        """Canonical integer encoding: ``2 * bit_index + target_value``."""
        return 2 * self.bit_index + self.target_value

    @classmethod
    def from_index(cls, index: int) -> "Action":
        return cls(index // 2, index % 2)

    def pair(self) -> tuple[int, int]:
        return (self.bit_index, self.target_value)


def _as_pair(item) -> tuple[int, int]:
    if isinstance(item, Action):
        return item.pair()
    bit, value = item
    return (int(bit), int(value))


@dataclass(frozen=True)
class Goal:
    """An ordered sequence of bit writes; achieving it pays ``full_reward``.

    ``complexity`` is the sequence length; the reward is proportional to it
    (see ``EnvironmentSpec.reward_scale``).
    """

    id: int
    sequence: tuple[tuple[int, int], ...]
    full_reward: float

    @property
    def complexity(self) -> int:
        return len(self.sequence)

    @property
    def distinct_bits(self) -> int:
        return len({bit for bit, _ in self.sequence})

    def validate(self, n_env: int) -> None:
        if self.complexity < 1:
            raise ValueError(f"goal {self.id}: empty sequence")
        if self.full_reward <= 0:
            raise ValueError(f"goal {self.id}: full_reward must be positive")
        last_value: dict[int, int] = {}
        prev = None
        for step, (bit, value) in enumerate(self.sequence):
            if not (0 <= bit < n_env):
                raise ValueError(
                    f"goal {self.id}: bit index {bit} out of range for {n_env} bits"
                )
            if value not in (0, 1):
                raise ValueError(f"goal {self.id}: target value {value} not a bit")
            if (bit, value) == prev:
                raise ValueError(
                    f"goal {self.id}: adjacent duplicate element at position {step}"
                )
            if bit in last_value and last_value[bit] == value:
                raise ValueError(
                    f"goal {self.id}: repeated write of {value} to bit {bit} "
                    f"without an intervening opposite write"
                )
            last_value[bit] = value
            prev = (bit, value)


@dataclass(frozen=True)
class EnvironmentSpec:
    """Immutable description of a world: size, goals, reward dynamics, noise."""

    n_env: int
    goals: tuple[Goal, ...]
    t_rec: int = 30
    p_stoch: float = 0.0
    reward_scale: float = 1.0

    def validate(self) -> None:
        if self.n_env < 1:
            raise ValueError("n_env must be at least 1")
        if self.t_rec < 1:
            raise ValueError("t_rec must be at least 1")
        if not (0.0 <= self.p_stoch <= 1.0):
            raise ValueError("p_stoch must lie in [0, 1]")
        if self.reward_scale <= 0:
            raise ValueError("reward_scale must be positive")
        seen_ids = set()
        for goal in self.goals:
            if goal.id in seen_ids:
                raise ValueError(f"duplicate goal id {goal.id}")
            seen_ids.add(goal.id)
            goal.validate(self.n_env)

    @property
    def max_complexity(self) -> int:
        return max((g.complexity for g in self.goals), default=0)

    def with_noise(self, p_stoch: float) -> "EnvironmentSpec":
        return replace(self, p_stoch=p_stoch)

    def to_json_dict(self) -> dict:
        return {
            "n_env": self.n_env,
            "t_rec": self.t_rec,
            "p_stoch": self.p_stoch,
            "reward_scale": self.reward_scale,
            "goals": [
                {"id": g.id, "sequence": [[bit, value] for bit, value in g.sequence]}
                for g in self.goals
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "EnvironmentSpec":
        try:
            n_env = int(doc["n_env"])
            t_rec = int(doc["t_rec"])
            p_stoch = float(doc["p_stoch"])
            reward_scale = float(doc["reward_scale"])
            raw_goals = doc["goals"]
        except KeyError as err:
            raise ValueError(f"environment document missing field {err.args[0]!r}") from None
        goals = []
        for raw in raw_goals:
            try:
                goal_id = int(raw["id"])
                sequence = tuple((int(b), int(v)) for b, v in raw["sequence"])
            except (KeyError, TypeError, ValueError):
                raise ValueError(f"malformed goal entry: {raw!r}") from None
            goals.append(
                Goal(id=goal_id, sequence=sequence, full_reward=reward_scale * len(sequence))
            )
        spec = cls(
            n_env=n_env,
            goals=tuple(goals),
            t_rec=t_rec,
            p_stoch=p_stoch,
            reward_scale=reward_scale,
        )
        spec.validate()
        return spec


@dataclass
class StepOutcome:
    """What one environment step produced."""

    effective: bool
    achieved: list[tuple[int, float]]
    noise_flips: list[int]
    reward_total: float


class EnvRuntime:
    """Mutable world state for one agent lifetime.

    Owns the bit vector, the per-goal reward pools (stored as the step at
    which each goal was last achieved) and the ring buffer of recent
    effective actions used for goal matching. Single-owner: never share a
    runtime between concurrent evaluations.
    """

    def __init__(self, spec: EnvironmentSpec, initial_state) -> None:
        state = np.asarray(initial_state, dtype=np.int8)
        if state.shape != (spec.n_env,):
            raise ValueError(
                f"initial state has shape {state.shape}, expected ({spec.n_env},)"
            )
        self.spec = spec
        self.state = state.copy()
        self.t = 0
        self.last_reached: dict[int, int] = {}
        self.history: deque[Action] = deque(maxlen=max(1, spec.max_complexity))


def apply_action(state: np.ndarray, action: Action) -> tuple[np.ndarray, bool]:
    """Write one bit; returns the new state and whether anything changed."""
    if not (0 <= action.bit_index < len(state)):
        raise ValueError(
            f"action bit index {action.bit_index} out of range for {len(state)} bits"
        )
    new_state = np.array(state, dtype=np.int8, copy=True)
    effective = new_state[action.bit_index] != action.target_value
    new_state[action.bit_index] = action.target_value
    return new_state, bool(effective)


def apply_noise(
    state: np.ndarray, p_stoch: float, rng: np.random.Generator
) -> tuple[np.ndarray, list[int]]:
    """Flip each bit independently with probability ``p_stoch``.

    Always consumes exactly ``len(state)`` uniform draws so that streams
    stay aligned whether or not any flip occurs.
    """
    if not (0.0 <= p_stoch <= 1.0):
        raise ValueError("p_stoch must lie in [0, 1]")
    draws = rng.random(len(state))
    flipped = np.flatnonzero(draws < p_stoch)
    new_state = np.array(state, dtype=np.int8, copy=True)
    new_state[flipped] ^= 1
    return new_state, [int(i) for i in flipped]


def available_reward(runtime: EnvRuntime, goal: Goal, t: int) -> float:
    """Reward currently in the goal's pool: full until first achieved, then
    refilling linearly over ``t_rec`` steps since the last achievement."""
    last = runtime.last_reached.get(goal.id)
    if last is None:
        return goal.full_reward
    fraction = (t - last) / runtime.spec.t_rec
    return goal.full_reward * min(1.0, fraction)


def match_achieved_goals(history, goals) -> list[int]:
    """Ids of every goal whose sequence equals the most recent effective
    actions (most-recent-last). Simultaneous matches are all returned."""
    recent = [_as_pair(item) for item in history]
    matched = []
    for goal in goals:
        k = goal.complexity
        if k <= len(recent) and tuple(recent[-k:]) == goal.sequence:
            matched.append(goal.id)
    return matched


def env_step(runtime: EnvRuntime, action: Action, rng: np.random.Generator) -> StepOutcome:
    """Advance the world one step.

    Order: apply the agent's action; if it changed the state, record it and
    check goals (each matched goal pays its available reward and its pool
    resets to this step); then apply stochastic flips; then advance time.
    Goal matching only fires on effective steps: an unchanged history means
    no new achievement.
    """
    new_state, effective = apply_action(runtime.state, action)
    runtime.state = new_state
    achieved: list[tuple[int, float]] = []
    reward_total = 0.0
    if effective:
        runtime.history.append(action)
        for goal_id in match_achieved_goals(runtime.history, runtime.spec.goals):
            goal = next(g for g in runtime.spec.goals if g.id == goal_id)
            amount = available_reward(runtime, goal, runtime.t)
            achieved.append((goal_id, amount))
            reward_total += amount
            runtime.last_reached[goal_id] = runtime.t
    noisy_state, flips = apply_noise(runtime.state, runtime.spec.p_stoch, rng)
    runtime.state = noisy_state
    runtime.t += 1
    return StepOutcome(
        effective=effective,
        achieved=achieved,
        noise_flips=flips,
        reward_total=reward_total,
    )


def occupancy(spec: EnvironmentSpec) -> float:
    """Probabilistic goal density: sum over goals of
    ``2^(k - k') * (1 / (2 n_env))^k`` where k is the goal length and k'
    its number of distinct bits."""
    base = 1.0 / (2.0 * spec.n_env)
    return math.fsum(
        2.0 ** (g.complexity - g.distinct_bits) * base**g.complexity for g in spec.goals
    )


def difficulty(spec: EnvironmentSpec) -> float:
    """Reciprocal of occupancy."""
    occ = occupancy(spec)
    if occ == 0.0:
        raise ValueError("difficulty is undefined for zero occupancy (no goals)")
    return 1.0 / occ


@dataclass(frozen=True)
class GeneratorParams:
    """Knobs for procedural environment generation."""

    n_env: int = 8
    n_root_goals: int = 3
    max_complexity: int = 4
    min_complexity: int = 1
    split_prob: float = 0.5
    t_rec: int = 30
    p_stoch: float = 0.0
    reward_scale: float = 1.0

    def validate(self) -> None:
        if self.n_env < 1:
            raise ValueError("generator: n_env must be at least 1")
        if self.n_root_goals < 1:
            raise ValueError("generator: need at least one root goal")
        if self.max_complexity < 1:
            raise ValueError("generator: max complexity must be at least 1")
        if not (1 <= self.min_complexity <= self.max_complexity):
            raise ValueError("generator: need 1 <= min_complexity <= max_complexity")
        if not (0.0 <= self.split_prob <= 1.0):
            raise ValueError("generator: split_prob must lie in [0, 1]")


def _random_goal_sequence(
    n_env: int, length: int, rng: np.random.Generator
) -> tuple[tuple[int, int], ...]:
    # Valid by construction: repeat writes to a bit always alternate value,
    # which also rules out adjacent duplicates.
    last_value: dict[int, int] = {}
    out = []
    for _ in range(length):
        bit = int(rng.integers(n_env))
        if bit in last_value:
            value = 1 - last_value[bit]
        else:
            value = int(rng.integers(2))
        last_value[bit] = value
        out.append((bit, value))
    return tuple(out)


def generate_environment(
    params: GeneratorParams, rng: np.random.Generator
) -> EnvironmentSpec:
    """Sample a goal hierarchy: random root goals, each recursively split
    into contiguous sub-sequences that are registered as goals of their own.
    """
    params.validate()
    sequences: list[tuple[tuple[int, int], ...]] = []

    def split(sequence: tuple[tuple[int, int], ...]) -> None:
        if len(sequence) < 2 or rng.random() >= params.split_prob:
            return
        cut = int(rng.integers(1, len(sequence)))
        left, right = sequence[:cut], sequence[cut:]
        sequences.append(left)
        split(left)
        sequences.append(right)
        split(right)

    for _ in range(params.n_root_goals):
        length = int(rng.integers(params.min_complexity, params.max_complexity + 1))
        root = _random_goal_sequence(params.n_env, length, rng)
        sequences.append(root)
        split(root)

    goals = tuple(
        Goal(id=i, sequence=seq, full_reward=params.reward_scale * len(seq))
        for i, seq in enumerate(sequences)
    )
    spec = EnvironmentSpec(
        n_env=params.n_env,
        goals=goals,
        t_rec=params.t_rec,
        p_stoch=params.p_stoch,
        reward_scale=params.reward_scale,
    )
    spec.validate()
    return spec
