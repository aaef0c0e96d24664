"""Compiled lifetime runner.

Evolution and trajectory recording both push an agent through thousands of
(world step, network step) iterations; doing that through the Python-level
objects is orders of magnitude too slow for population sweeps. This module
packs a network and an environment into flat arrays and runs whole
lifetimes inside one nopython kernel. The kernel replicates the semantics
of ``net.step_network`` + ``env.env_step`` exactly, including the
canonical per-neuron summation order, so results agree bitwise with the
pure-Python path (covered by tests).

The kernel releases the GIL, so populations can be evaluated from a thread
pool; every evaluation is a pure function of its arguments, which keeps
results identical for any worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from cubevo.env import EnvironmentSpec
from cubevo.net import Network, activation, layer_sort_key

__all__ = [
    "PackedNetwork",
    "PackedEnvironment",
    "pack_network",
    "pack_environment",
    "run_lifetime",
    "LifetimeLog",
    "noise_matrix",
]


@dataclass(frozen=True)
class PackedNetwork:
    """Flat-array view of a network, neurons in evaluation order."""

    neuron_ids: np.ndarray  # dense index -> original neuron id
    rank: np.ndarray  # dense layer rank (0 = input, highest = output)
    in_ptr: np.ndarray  # incoming-synapse slice bounds per neuron
    in_pre: np.ndarray  # presynaptic dense index per synapse
    in_w: np.ndarray  # weight per synapse
    n_inputs: int
    n_outputs: int
    threshold: float


@dataclass(frozen=True)
class PackedEnvironment:
    """Flat-array view of an environment's goal set."""

    n_env: int
    goal_actions: np.ndarray  # encoded (2*bit + value), all goals concatenated
    goal_offset: np.ndarray
    goal_length: np.ndarray
    goal_reward: np.ndarray
    history_capacity: int
    t_rec: int
    p_stoch: float


def pack_network(net: Network) -> PackedNetwork:
    order = net.evaluation_order()
    index_of = {nid: i for i, nid in enumerate(order)}
    layer_keys = sorted({layer_sort_key(layer) for layer in net.neurons.values()})
    rank_of_key = {key: r for r, key in enumerate(layer_keys)}
    rank = np.array(
        [rank_of_key[layer_sort_key(net.neurons[nid])] for nid in order], dtype=np.int32
    )
    # Incoming synapses grouped by postsynaptic neuron (in evaluation
    # order), each group sorted by presynaptic id: the canonical order.
    incoming: dict[int, list[tuple[int, float]]] = {nid: [] for nid in order}
    for (pre, post), w in net.synapses.items():
        incoming[post].append((pre, w))
    in_ptr = np.zeros(len(order) + 1, dtype=np.int32)
    pres: list[int] = []
    weights: list[float] = []
    for i, nid in enumerate(order):
        for pre, w in sorted(incoming[nid]):
            pres.append(index_of[pre])
            weights.append(w)
        in_ptr[i + 1] = len(pres)
    return PackedNetwork(
        neuron_ids=np.array(order, dtype=np.int64),
        rank=rank,
        in_ptr=in_ptr,
        in_pre=np.array(pres, dtype=np.int32),
        in_w=np.array(weights, dtype=np.float64),
        n_inputs=net.n_inputs,
        n_outputs=net.n_outputs,
        threshold=net.threshold,
    )


def pack_environment(spec: EnvironmentSpec) -> PackedEnvironment:
    actions: list[int] = []
    offsets = np.zeros(len(spec.goals), dtype=np.int32)
    lengths = np.zeros(len(spec.goals), dtype=np.int32)
    rewards = np.zeros(len(spec.goals), dtype=np.float64)
    for g, goal in enumerate(spec.goals):
        offsets[g] = len(actions)
        lengths[g] = goal.complexity
        rewards[g] = goal.full_reward
        actions.extend(2 * bit + value for bit, value in goal.sequence)
    return PackedEnvironment(
        n_env=spec.n_env,
        goal_actions=np.array(actions, dtype=np.int32),
        goal_offset=offsets,
        goal_length=lengths,
        goal_reward=rewards,
        history_capacity=max(1, spec.max_complexity),
        t_rec=spec.t_rec,
        p_stoch=spec.p_stoch,
    )


def noise_matrix(steps: int, n_env: int, seed) -> np.ndarray:
    """Per-(step, bit) uniforms, drawn in the same order the pure path
    consumes them (one row of ``n_env`` draws per step)."""
    return np.random.default_rng(seed).random((steps, n_env))


_EMPTY_F2 = np.zeros((0, 0), dtype=np.float64)
_EMPTY_I2 = np.zeros((0, 0), dtype=np.int8)
_EMPTY_B2 = np.zeros((0, 0), dtype=np.bool_)
_EMPTY_I1 = np.zeros(0, dtype=np.int32)
_EMPTY_B1 = np.zeros(0, dtype=np.bool_)
_EMPTY_F1 = np.zeros(0, dtype=np.float64)


@njit(cache=True, nogil=True)
def _lifetime(
    rank,
    in_ptr,
    in_pre,
    in_w,
    n_inputs,
    n_outputs,
    threshold,
    state,
    goal_actions,
    goal_offset,
    goal_length,
    goal_reward,
    history_capacity,
    t_rec,
    p_stoch,
    noise,
    steps,
    record,
    log_outputs,
    log_states,
    log_actions,
    log_effective,
    log_reward,
    log_achieved,
    log_flips,
):
    n_neurons = rank.shape[0]
    n_env = state.shape[0]
    n_goals = goal_length.shape[0]
    out_base = n_neurons - n_outputs

    prev = np.zeros(n_neurons, dtype=np.float64)
    curr = np.zeros(n_neurons, dtype=np.float64)
    history = np.zeros(history_capacity, dtype=np.int32)
    head = -1
    hist_n = 0
    last_reached = np.full(n_goals, -1, dtype=np.int64)
    total = 0.0

    for t in range(steps):
        # --- network update ---
        for i in range(n_inputs):
            curr[i] = float(state[i])
        for j in range(n_inputs, n_neurons):
            x = 0.0
            for s in range(in_ptr[j], in_ptr[j + 1]):
                p = in_pre[s]
                y = curr[p] if rank[p] < rank[j] else prev[p]
                if y > threshold:
                    x += in_w[s] * y
            curr[j] = activation(x)

        if record:
            for j in range(n_neurons):
                log_outputs[t, j] = curr[j]
            for i in range(n_env):
                log_states[t, i] = state[i]

        # --- action selection: most active output, lowest index on ties ---
        best = 0
        best_value = curr[out_base]
        for k in range(1, n_outputs):
            v = curr[out_base + k]
            if v > best_value:
                best_value = v
                best = k
        bit = best // 2
        value = best % 2

        # --- environment update ---
        effective = state[bit] != value
        step_reward = 0.0
        if effective:
            state[bit] = value
            head = (head + 1) % history_capacity
            history[head] = best
            if hist_n < history_capacity:
                hist_n += 1
            for g in range(n_goals):
                length = goal_length[g]
                if length <= hist_n:
                    matched = True
                    for q in range(length):
                        slot = (head - length + 1 + q) % history_capacity
                        if history[slot] != goal_actions[goal_offset[g] + q]:
                            matched = False
                            break
                    if matched:
                        last = last_reached[g]
                        if last < 0:
                            amount = goal_reward[g]
                        else:
                            fraction = (t - last) / t_rec
                            if fraction > 1.0:
                                fraction = 1.0
                            amount = goal_reward[g] * fraction
                        step_reward += amount
                        last_reached[g] = t
                        if record:
                            log_achieved[t, g] = True
        total += step_reward

        if record:
            log_actions[t] = best
            log_effective[t] = effective
            log_reward[t] = step_reward

        # --- stochastic perturbation ---
        if p_stoch > 0.0:
            for i in range(n_env):
                if noise[t, i] < p_stoch:
                    state[i] = 1 - state[i]
                    if record:
                        log_flips[t, i] = True

        prev, curr = curr, prev

    return total


@dataclass
class LifetimeLog:
    """Per-step record of one lifetime (kernel recording mode)."""

    outputs: np.ndarray  # (steps, n_neurons), columns in evaluation order
    states: np.ndarray  # (steps, n_env), state before the action
    actions: np.ndarray  # (steps,), encoded 2*bit + value
    effective: np.ndarray  # (steps,), bool
    reward: np.ndarray  # (steps,), reward collected that step
    achieved: np.ndarray  # (steps, n_goals), bool
    flips: np.ndarray  # (steps, n_env), bool
    total_reward: float


def run_lifetime(
    pnet: PackedNetwork,
    penv: PackedEnvironment,
    steps: int,
    initial_state: np.ndarray,
    noise: np.ndarray | None = None,
    record: bool = False,
):
    """Run one lifetime; returns the total reward, plus a ``LifetimeLog``
    when ``record`` is set.

    ``noise`` is the matrix of per-(step, bit) uniforms (ignored when the
    environment is deterministic); the caller owns it so that one shared
    noise realization can be applied to a whole population.
    """
    state = np.asarray(initial_state, dtype=np.int8)
    if state.shape != (penv.n_env,):
        raise ValueError(
            f"initial state has shape {state.shape}, expected ({penv.n_env},)"
        )
    if pnet.n_inputs != penv.n_env or pnet.n_outputs != 2 * penv.n_env:
        raise ValueError(
            f"network with {pnet.n_inputs} inputs / {pnet.n_outputs} outputs "
            f"does not fit a {penv.n_env}-bit environment"
        )
    if penv.p_stoch > 0.0:
        if noise is None or noise.shape != (steps, penv.n_env):
            raise ValueError("stochastic run needs a (steps, n_env) noise matrix")
    elif noise is None:
        noise = _EMPTY_F2

    state = state.copy()
    n_neurons = len(pnet.neuron_ids)
    n_goals = len(penv.goal_length)
    if record:
        log = LifetimeLog(
            outputs=np.zeros((steps, n_neurons), dtype=np.float64),
            states=np.zeros((steps, penv.n_env), dtype=np.int8),
            actions=np.zeros(steps, dtype=np.int32),
            effective=np.zeros(steps, dtype=np.bool_),
            reward=np.zeros(steps, dtype=np.float64),
            achieved=np.zeros((steps, n_goals), dtype=np.bool_),
            flips=np.zeros((steps, penv.n_env), dtype=np.bool_),
            total_reward=0.0,
        )
        args = (
            log.outputs,
            log.states,
            log.actions,
            log.effective,
            log.reward,
            log.achieved,
            log.flips,
        )
    else:
        log = None
        args = (_EMPTY_F2, _EMPTY_I2, _EMPTY_I1, _EMPTY_B1, _EMPTY_F1, _EMPTY_B2, _EMPTY_B2)

    total = _lifetime(
        pnet.rank,
        pnet.in_ptr,
        pnet.in_pre,
        pnet.in_w,
        pnet.n_inputs,
        pnet.n_outputs,
        pnet.threshold,
        state,
        penv.goal_actions,
        penv.goal_offset,
        penv.goal_length,
        penv.goal_reward,
        penv.history_capacity,
        penv.t_rec,
        penv.p_stoch,
        noise,
        steps,
        record,
        *args,
    )
    if record:
        log.total_reward = float(total)
        return float(total), log
    return float(total)
