"""Behavioral and neural analyses of recorded lifetimes.

Everything here is a pure function over an immutable ``Trajectory``:
cycle detection, strategy signatures, alternative-action events with
their short-term-memory depth bounds, neuron specialization summaries,
slow-oscillation scans, the two-sample Welch test, and the occupancy
sweep experiment built on top of ``evo.evolve``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from cubevo import seeds
from cubevo.env import EnvironmentSpec, GeneratorParams, Action, generate_environment, occupancy
from cubevo.evo import EvoParams, evolve
from cubevo.kernel import noise_matrix, pack_environment, pack_network, run_lifetime
from cubevo.net import Network

__all__ = [
    "Trajectory",
    "CycleInfo",
    "AlternativeEvent",
    "record_trajectory",
    "detect_main_cycle",
    "strategy_signature",
    "detect_alternatives",
    "stm_depth_lower_bound",
    "neuron_specialization",
    "slow_oscillation_scan",
    "welch_t_test",
    "TTestResult",
    "SweepBand",
    "SweepConfig",
    "SweepCell",
    "SweepResult",
    "occupancy_sweep",
]


@dataclass
class Trajectory:
    """Per-step record of one lifetime.

    ``states[t]`` is the world state the agent saw at step t (before its
    action); ``outputs[t]`` holds every neuron's output that step, columns
    ordered as ``neuron_ids``.
    """

    states: np.ndarray  # (T, n_env) int8
    actions: np.ndarray  # (T,) int32, encoded 2*bit + value
    effective: np.ndarray  # (T,) bool
    rewards: np.ndarray  # (T,) float64
    achieved: list[list[int]]  # goal ids per step
    noise_flips: list[list[int]]  # flipped bit indices per step
    outputs: np.ndarray  # (T, n_neurons) float64
    neuron_ids: list[int]
    threshold: float = 0.5

    @property
    def steps(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        # Sequential sum matches the evaluator's accumulation order exactly.
        total = 0.0
        for value in self.rewards.tolist():
            total += value
        return total

    def action_at(self, t: int) -> Action:
        return Action.from_index(int(self.actions[t]))

    def state_key(self, t: int) -> bytes:
        return self.states[t].tobytes()


def record_trajectory(
    genome: Network,
    spec: EnvironmentSpec,
    steps: int,
    initial_state: np.ndarray,
    seed,
) -> Trajectory:
    """Run one lifetime with full recording. World dynamics are identical
    to ``evo.evaluate_fitness``: same seed, same rewards."""
    pnet = pack_network(genome)
    penv = pack_environment(spec)
    noise = noise_matrix(steps, spec.n_env, seed) if spec.p_stoch > 0 else None
    _, log = run_lifetime(pnet, penv, steps, initial_state, noise, record=True)
    goal_ids = [goal.id for goal in spec.goals]
    achieved = [
        [goal_ids[g] for g in np.flatnonzero(log.achieved[t])] for t in range(steps)
    ]
    flips = [[int(i) for i in np.flatnonzero(log.flips[t])] for t in range(steps)]
    return Trajectory(
        states=log.states,
        actions=log.actions,
        effective=log.effective,
        rewards=log.reward,
        achieved=achieved,
        noise_flips=flips,
        outputs=log.outputs,
        neuron_ids=[int(i) for i in pnet.neuron_ids],
        threshold=genome.threshold,
    )


@dataclass
class CycleInfo:
    """A periodic suffix of the (state, action) sequence.

    ``goal_sequence`` lists the goals achieved across the last complete
    period of the trajectory, where the matching context itself is already
    periodic (the first period can still carry pre-cycle history).
    """

    start: int
    period: int
    action_sequence: list[Action]
    goal_sequence: list[int]


def detect_main_cycle(traj: Trajectory) -> CycleInfo | None:
    """Smallest period p (and earliest start s for that p) such that the
    (state, action) sequence repeats exactly from s to the end, covering
    at least two full periods; None when no suffix is periodic."""
    steps = traj.steps
    sequence = [(traj.state_key(t), int(traj.actions[t])) for t in range(steps)]
    for period in range(1, steps // 2 + 1):
        start = 0
        for i in range(steps - period - 1, -1, -1):
            if sequence[i] != sequence[i + period]:
                start = i + 1
                break
        if steps - start >= 2 * period:
            full_periods = (steps - start) // period
            window_start = start + (full_periods - 1) * period
            goal_sequence = [
                goal_id
                for t in range(window_start, window_start + period)
                for goal_id in traj.achieved[t]
            ]
            return CycleInfo(
                start=start,
                period=period,
                action_sequence=[traj.action_at(t) for t in range(start, start + period)],
                goal_sequence=goal_sequence,
            )
    return None


def _least_rotation(items: list[int]) -> list[int]:
    if not items:
        return []
    doubled = items + items
    n = len(items)
    return min((doubled[i : i + n] for i in range(n)), key=tuple)


def strategy_signature(traj: Trajectory, cycle: CycleInfo) -> list[int]:
    """Canonical label of a behavioral strategy: the goals achieved during
    one period, rotated to the lexicographically smallest rotation so the
    same cycle entered at any phase yields one label."""
    return _least_rotation(list(cycle.goal_sequence))


@dataclass
class AlternativeEvent:
    """Two visits to the same world state with different actions — the
    behavioral footprint of memory."""

    state: np.ndarray
    t1: int
    action1: Action
    t2: int
    action2: Action
    stm_lower_bound: int


def _stm_depth(traj: Trajectory, t1: int, t2: int) -> int:
    depth = 0
    while True:
        i, j = t1 - depth - 1, t2 - depth - 1
        if i < 0 or j < 0:
            break
        if traj.state_key(i) != traj.state_key(j):
            break
        if traj.actions[i] != traj.actions[j]:
            break
        depth += 1
    return depth + 1


def stm_depth_lower_bound(traj: Trajectory, event: AlternativeEvent) -> int:
    """How far back the event's two histories agree, plus one.

    Compares (state, action) pairs at t1-1, t2-1, then t1-2, t2-2, and so
    on until they differ or step 0 is passed; if d pairs match, the agent
    must have retained at least d+1 steps of history to act differently
    at t1 versus t2. Minimum result is 1.
    """
    return _stm_depth(traj, event.t1, event.t2)


def detect_alternatives(traj: Trajectory) -> list[AlternativeEvent]:
    """All first-occurrence pairs of steps that share a world state but
    differ in action, annotated with their memory-depth lower bounds.

    For a given state, the pair (a1, a2) is reported once: the first step
    choosing a2 after a1 has been seen in that state.
    """
    first_seen: dict[bytes, dict[int, int]] = {}
    reported: set[tuple[bytes, int, int]] = set()
    events = []
    for t in range(traj.steps):
        key = traj.state_key(t)
        action = int(traj.actions[t])
        actions_here = first_seen.setdefault(key, {})
        for earlier_action, earlier_t in actions_here.items():
            if earlier_action == action:
                continue
            triple = (key, earlier_action, action)
            if triple in reported:
                continue
            reported.add(triple)
            events.append(
                AlternativeEvent(
                    state=traj.states[t].copy(),
                    t1=earlier_t,
                    action1=Action.from_index(earlier_action),
                    t2=t,
                    action2=Action.from_index(action),
                    stm_lower_bound=_stm_depth(traj, earlier_t, t),
                )
            )
        if action not in actions_here:
            actions_here[action] = t
    return events


def neuron_specialization(traj: Trajectory) -> dict[int, tuple[float, int]]:
    """Per neuron: (fraction of steps active, number of distinct world
    states in which it was active). Active means output above threshold."""
    result: dict[int, tuple[float, int]] = {}
    state_keys = [traj.state_key(t) for t in range(traj.steps)]
    active = traj.outputs > traj.threshold
    for column, neuron_id in enumerate(traj.neuron_ids):
        mask = active[:, column]
        fraction = float(mask.sum()) / traj.steps if traj.steps else 0.0
        distinct = len({state_keys[t] for t in np.flatnonzero(mask)})
        result[neuron_id] = (fraction, distinct)
    return result


def slow_oscillation_scan(
    traj: Trajectory, min_period: int
) -> list[tuple[int, list[int]]]:
    """Neurons whose output exhibits slow threshold oscillations.

    For each neuron, measures the intervals between consecutive downward
    threshold crossings and reports (neuron id, intervals) for every
    neuron with at least one interval of ``min_period`` steps or more.
    """
    if min_period < 2:
        raise ValueError("min_period must be at least 2")
    reported = []
    for column, neuron_id in enumerate(traj.neuron_ids):
        series = traj.outputs[:, column]
        crossings = [
            t
            for t in range(1, traj.steps)
            if series[t - 1] > traj.threshold >= series[t]
        ]
        intervals = [b - a for a, b in zip(crossings, crossings[1:])]
        if any(interval >= min_period for interval in intervals):
            reported.append((neuron_id, intervals))
    return reported


# ----------------------------------------------------------------------
# Two-sample statistics
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    df: float
    p_value: float


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            return h
    raise RuntimeError("incomplete beta continued fraction failed to converge")


def _regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def _student_t_two_sided_p(t: float, df: float) -> float:
    x = df / (df + t * t)
    return _regularized_incomplete_beta(df / 2.0, 0.5, x)


def welch_t_test(sample_a, sample_b) -> TTestResult:
    """Welch's unequal-variance two-sample t-test.

    Returns the t statistic, the Welch-Satterthwaite degrees of freedom
    and the two-sided p-value from the t distribution.
    """
    a = [float(v) for v in sample_a]
    b = [float(v) for v in sample_b]
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 observations")
    na, nb = len(a), len(b)
    mean_a, mean_b = sum(a) / na, sum(b) / nb
    var_a = sum((v - mean_a) ** 2 for v in a) / (na - 1)
    var_b = sum((v - mean_b) ** 2 for v in b) / (nb - 1)
    if var_a == 0.0 and var_b == 0.0:
        raise ValueError("t statistic undefined: both samples have zero variance")
    sa, sb = var_a / na, var_b / nb
    t = (mean_a - mean_b) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa**2 / (na - 1) + sb**2 / (nb - 1))
    return TTestResult(statistic=t, df=df, p_value=_student_t_two_sided_p(t, df))


# ----------------------------------------------------------------------
# Occupancy sweep (reward vs. goal density, deterministic vs. stochastic)
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SweepBand:
    """Target occupancy interval, with optional generator overrides."""

    lo: float
    hi: float
    generator: GeneratorParams | None = None


@dataclass
class SweepConfig:
    bands: list[SweepBand]
    envs_per_band: int
    runs_per_env: int
    evo: EvoParams
    generator: GeneratorParams
    conditions: dict[str, float] = field(
        default_factory=lambda: {"deterministic": 0.0, "stochastic": 0.0085}
    )
    seed: int = 0
    retry_budget: int = 200
    workers: int = 1


@dataclass
class SweepCell:
    band_index: int
    band_lo: float
    band_hi: float
    env_index: int
    env_occupancy: float
    run_index: int
    condition: str
    p_stoch: float
    final_mean_fitness: float
    champion_fitness: float


@dataclass
class BandSummary:
    band_index: int
    condition_means: dict[str, float]
    welch: TTestResult | None
    note: str = ""


@dataclass
class SweepResult:
    cells: list[SweepCell]
    summaries: list[BandSummary]
    skipped_bands: list[tuple[int, str]]
    environments: dict[tuple[int, int], EnvironmentSpec] = field(default_factory=dict)


def _sample_band_environment(
    band: SweepBand,
    base: GeneratorParams,
    master_seed: int,
    band_index: int,
    env_index: int,
    retry_budget: int,
) -> EnvironmentSpec:
    params = band.generator if band.generator is not None else base
    for attempt in range(retry_budget):
        rng = seeds.stream(master_seed, "envgen", band_index, env_index, attempt)
        spec = generate_environment(params, rng)
        if band.lo <= occupancy(spec) <= band.hi:
            return spec
    raise RuntimeError(
        f"no environment with occupancy in [{band.lo}, {band.hi}] "
        f"found within {retry_budget} attempts"
    )


def occupancy_sweep(config: SweepConfig) -> SweepResult:
    """Generate environments per occupancy band (rejection sampling), run
    evolution under each condition, and summarize per band.

    Evolution seeds are keyed by (env index, run index) only — not by band
    or condition — so comparisons across bands and between deterministic
    and stochastic conditions are seed-paired.
    """
    result = SweepResult(cells=[], summaries=[], skipped_bands=[])
    for band_index, band in enumerate(config.bands):
        environments = []
        try:
            for env_index in range(config.envs_per_band):
                environments.append(
                    _sample_band_environment(
                        band,
                        config.generator,
                        config.seed,
                        band_index,
                        env_index,
                        config.retry_budget,
                    )
                )
        except RuntimeError as err:
            result.skipped_bands.append((band_index, str(err)))
            continue
        champion_by_condition: dict[str, list[float]] = {
            name: [] for name in config.conditions
        }
        for env_index, base_spec in enumerate(environments):
            result.environments[(band_index, env_index)] = base_spec
            for run_index in range(config.runs_per_env):
                run_seed = seeds.spawn_seed(config.seed, "cell", env_index, run_index)
                for condition, p_stoch in config.conditions.items():
                    spec = base_spec.with_noise(p_stoch)
                    evo = replace(config.evo, seed=run_seed)
                    history = evolve(spec, evo, workers=config.workers)
                    final = history.records[-1]
                    result.cells.append(
                        SweepCell(
                            band_index=band_index,
                            band_lo=band.lo,
                            band_hi=band.hi,
                            env_index=env_index,
                            env_occupancy=occupancy(base_spec),
                            run_index=run_index,
                            condition=condition,
                            p_stoch=p_stoch,
                            final_mean_fitness=final.mean_fitness,
                            champion_fitness=final.max_fitness,
                        )
                    )
                    champion_by_condition[condition].append(final.max_fitness)
        means = {
            name: (sum(values) / len(values)) if values else math.nan
            for name, values in champion_by_condition.items()
        }
        welch = None
        note = ""
        names = list(config.conditions)
        if len(names) == 2:
            try:
                welch = welch_t_test(
                    champion_by_condition[names[0]], champion_by_condition[names[1]]
                )
            except ValueError as err:
                note = str(err)
        result.summaries.append(
            BandSummary(
                band_index=band_index,
                condition_means=means,
                welch=welch,
                note=note,
            )
        )
    return result
