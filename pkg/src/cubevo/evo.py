"""Duplication-based neuroevolution.

No crossover: offspring are mutated copies of fitness-proportionately
sampled parents, with one unmutated copy of the generation champion kept.
The signature mutation is neuron duplication — the descendant copies the
parent's incoming synapses at full weight while every outgoing weight of
the pair is halved, so the two neurons initially perform the parent's
function together and are free to diverge later.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from cubevo import seeds
from cubevo.env import EnvironmentSpec
from cubevo.kernel import noise_matrix, pack_environment, pack_network, run_lifetime
from cubevo.net import INPUT, OUTPUT, Network, hidden_layer

__all__ = [
    "EvoParams",
    "GenerationRecord",
    "EvolutionHistory",
    "init_population",
    "mutate_weights",
    "add_connection",
    "delete_connection",
    "duplicate_neuron",
    "prune_isolated",
    "evaluate_fitness",
    "sample_parents",
    "select_next_generation",
    "evolve",
]


@dataclass(frozen=True)
class EvoParams:
    """Evolution settings. Defaults follow the reference setup: population
    250, 5000 generations, 250-step lifetimes, per-synapse weight mutation
    probability 0.6 with variance 0.08, and per-network structural
    mutation probabilities 0.1 (add synapse), 0.05 (delete synapse),
    0.007 (duplicate neuron)."""

    population_size: int = 250
    generations: int = 5000
    lifetime: int = 250
    p_weight_mutation: float = 0.6
    weight_mutation_variance: float = 0.08
    p_add_synapse: float = 0.1
    p_delete_synapse: float = 0.05
    p_duplication: float = 0.007
    weight_init_low: float = -1.0
    weight_init_high: float = 1.0
    seed: int = 0
    evals_per_agent: int = 1
    elitism: bool = True

    def validate(self) -> None:
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.generations < 1:
            raise ValueError("generations must be at least 1")
        if self.lifetime < 1:
            raise ValueError("lifetime must be at least 1")
        for name in ("p_weight_mutation", "p_add_synapse", "p_delete_synapse", "p_duplication"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.weight_mutation_variance < 0:
            raise ValueError("weight_mutation_variance must be non-negative")
        if self.weight_init_low > self.weight_init_high:
            raise ValueError("weight_init_low must not exceed weight_init_high")
        if self.evals_per_agent < 1:
            raise ValueError("evals_per_agent must be at least 1")


def init_population(evo: EvoParams, n_env: int, rng: np.random.Generator) -> list[Network]:
    """Founders: inputs and outputs plus a single hidden ancestor neuron,
    fully connected from all inputs and to all outputs, with no direct
    input-to-output synapses. Weights are uniform in the init range."""
    population = []
    for _ in range(evo.population_size):
        neurons: dict[int, str] = {}
        for i in range(n_env):
            neurons[i] = INPUT
        for k in range(2 * n_env):
            neurons[n_env + k] = OUTPUT
        ancestor = 3 * n_env
        neurons[ancestor] = hidden_layer(0)
        synapses: dict[tuple[int, int], float] = {}
        for i in range(n_env):
            synapses[(i, ancestor)] = float(
                rng.uniform(evo.weight_init_low, evo.weight_init_high)
            )
        for k in range(2 * n_env):
            synapses[(ancestor, n_env + k)] = float(
                rng.uniform(evo.weight_init_low, evo.weight_init_high)
            )
        population.append(Network(neurons, synapses))
    return population


def _bump(stats, key: str, amount: int = 1) -> None:
    if stats is not None:
        stats[key] = stats.get(key, 0) + amount


def mutate_weights(
    genome: Network,
    p_mutation: float,
    variance: float,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> Network:
    """Each synapse independently gains Gaussian noise (mean 0, the given
    variance) with probability ``p_mutation``. Topology is untouched."""
    out = genome.copy()
    std = math.sqrt(variance)
    for pre, post, w in genome.canonical_synapses():
        if rng.random() < p_mutation:
            out.synapses[(pre, post)] = w + float(rng.normal(0.0, std))
            _bump(stats, "weight_mutations")
    return out


def add_connection(
    genome: Network,
    p_add: float,
    rng: np.random.Generator,
    weight_low: float = -1.0,
    weight_high: float = 1.0,
    stats: dict | None = None,
) -> Network:
    """With probability ``p_add`` (per network), add one synapse between a
    uniformly random unconnected ordered pair; the postsynaptic neuron is
    never an input. No-op when the network is saturated."""
    if rng.random() >= p_add:
        return genome
    targets = [nid for nid, layer in genome.neurons.items() if layer != INPUT]
    candidates = sorted(
        (pre, post)
        for pre in genome.neurons
        for post in targets
        if (pre, post) not in genome.synapses
    )
    if not candidates:
        return genome
    out = genome.copy()
    pre, post = candidates[int(rng.integers(len(candidates)))]
    out.synapses[(pre, post)] = float(rng.uniform(weight_low, weight_high))
    _bump(stats, "synapses_added")
    return out


def delete_connection(
    genome: Network,
    p_delete: float,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> Network:
    """With probability ``p_delete`` (per network), remove one uniformly
    random synapse, then drop any hidden neuron left with no synapses."""
    if rng.random() >= p_delete or not genome.synapses:
        return genome
    out = genome.copy()
    ordered = sorted(out.synapses, key=lambda k: (k[1], k[0]))
    del out.synapses[ordered[int(rng.integers(len(ordered)))]]
    _bump(stats, "synapses_deleted")
    return prune_isolated(out)


def duplicate_neuron(
    genome: Network,
    p_duplicate: float,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> Network:
    """With probability ``p_duplicate`` (per network), duplicate one
    uniformly random hidden neuron.

    The descendant copies every incoming synapse at the parent's weight;
    every outgoing synapse of the parent is halved and mirrored onto the
    descendant, so the pair's combined drive equals the parent's previous
    drive. A self-synapse w becomes four edges (parent-parent,
    child-child, parent-child, child-parent) of w/2 each, halving on the
    outgoing side of both copies.
    """
    hidden = genome.hidden_ids
    if rng.random() >= p_duplicate or not hidden:
        return genome
    out = genome.copy()
    parent = hidden[int(rng.integers(len(hidden)))]
    child = out.next_neuron_id()
    out.neurons[child] = out.neurons[parent]

    self_weight = out.synapses.pop((parent, parent), None)
    incoming = [(pre, w) for (pre, post), w in out.synapses.items() if post == parent]
    outgoing = [(post, w) for (pre, post), w in out.synapses.items() if pre == parent]
    for pre, w in incoming:
        out.synapses[(pre, child)] = w
    for post, w in outgoing:
        out.synapses[(parent, post)] = w / 2.0
        out.synapses[(child, post)] = w / 2.0
    if self_weight is not None:
        half = self_weight / 2.0
        out.synapses[(parent, parent)] = half
        out.synapses[(child, child)] = half
        out.synapses[(parent, child)] = half
        out.synapses[(child, parent)] = half
    _bump(stats, "neurons_duplicated")
    return out


def prune_isolated(genome: Network) -> Network:
    """Remove hidden neurons that have neither incoming nor outgoing
    synapses; input and output neurons are never removed."""
    out = genome.copy()
    while True:
        connected = set()
        for pre, post in out.synapses:
            connected.add(pre)
            connected.add(post)
        isolated = [nid for nid in out.hidden_ids if nid not in connected]
        if not isolated:
            return out
        for nid in isolated:
            del out.neurons[nid]


def evaluate_fitness(
    genome: Network,
    spec: EnvironmentSpec,
    lifetime: int,
    initial_state: np.ndarray,
    seed,
) -> float:
    """Total reward collected over one lifetime from ``initial_state``.

    ``seed`` drives only the environment's stochastic bit flips, so two
    calls with identical arguments are identical bitwise.
    """
    pnet = pack_network(genome)
    penv = pack_environment(spec)
    noise = noise_matrix(lifetime, spec.n_env, seed) if spec.p_stoch > 0 else None
    return run_lifetime(pnet, penv, lifetime, initial_state, noise)


def sample_parents(fitnesses, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Roulette sampling with replacement. Fitnesses are shifted so the
    minimum maps to a small positive floor (1e-6 of the range); when every
    genome scores the same the draw is uniform."""
    fits = np.asarray(fitnesses, dtype=np.float64)
    lo = float(fits.min())
    hi = float(fits.max())
    shifted = fits - lo + 1e-6 * (hi - lo)
    total = float(shifted.sum())
    if total <= 0.0:
        probs = np.full(len(fits), 1.0 / len(fits))
    else:
        probs = shifted / total
    cumulative = np.cumsum(probs)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, rng.random(n_draws), side="right")


def select_next_generation(
    population: list[Network],
    fitnesses,
    evo: EvoParams,
    rng: np.random.Generator,
    stats: dict | None = None,
) -> list[Network]:
    """Produce the next population: fitness-proportionate parents, each
    offspring a mutated copy (weights, add synapse, delete synapse,
    duplicate neuron, prune — in that fixed order), with slot 0 holding an
    unmutated copy of the champion when elitism is on."""
    if len(population) != len(fitnesses):
        raise ValueError("population and fitnesses must have equal length")
    if len(population) < 2:
        raise ValueError("population must hold at least 2 genomes")
    parents = sample_parents(fitnesses, len(population), rng)
    champion = int(np.argmax(fitnesses))
    next_population = []
    for slot in range(len(population)):
        if evo.elitism and slot == 0:
            next_population.append(population[champion].copy())
            continue
        child = population[int(parents[slot])]
        child = mutate_weights(
            child, evo.p_weight_mutation, evo.weight_mutation_variance, rng, stats
        )
        child = add_connection(
            child, evo.p_add_synapse, rng, evo.weight_init_low, evo.weight_init_high, stats
        )
        child = delete_connection(child, evo.p_delete_synapse, rng, stats)
        child = duplicate_neuron(child, evo.p_duplication, rng, stats)
        child = prune_isolated(child)
        next_population.append(child)
    return next_population


@dataclass
class GenerationRecord:
    generation: int
    mean_fitness: float
    max_fitness: float
    interneuron_count_mean: float
    synapse_count_mean: float
    champion: Network
    weight_mutations: int = 0
    synapses_added: int = 0
    synapses_deleted: int = 0
    neurons_duplicated: int = 0


@dataclass
class EvolutionHistory:
    records: list[GenerationRecord] = field(default_factory=list)
    final_population: list[Network] = field(default_factory=list)
    final_fitnesses: list[float] = field(default_factory=list)
    # the shared worlds the last generation was scored on, for replays
    final_initial_states: list[np.ndarray] = field(default_factory=list)
    final_noise_seeds: list[int] = field(default_factory=list)

    @property
    def champion(self) -> Network:
        return self.records[-1].champion

    @property
    def champion_fitness(self) -> float:
        return self.records[-1].max_fitness


def _evaluate_population(
    population: list[Network],
    penv,
    lifetime: int,
    initial_states: list[np.ndarray],
    noises: list[np.ndarray | None],
    workers: int,
) -> list[float]:
    packed = [pack_network(genome) for genome in population]

    def fitness_of(index: int) -> float:
        totals = [
            run_lifetime(packed[index], penv, lifetime, state, noise)
            for state, noise in zip(initial_states, noises)
        ]
        return sum(totals) / len(totals)

    if workers <= 1:
        return [fitness_of(i) for i in range(len(population))]
    # The kernel releases the GIL; results are keyed by index, so the
    # worker count cannot affect the outcome.
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fitness_of, range(len(population))))


def evolve(
    spec: EnvironmentSpec,
    evo: EvoParams,
    workers: int = 1,
    on_generation=None,
) -> EvolutionHistory:
    """Run the full evolutionary loop.

    Each generation draws one shared initial world state (uniform random
    bits) and one shared noise realization, so every agent in the
    generation faces the same world. The result depends only on ``spec``
    and ``evo`` (including the master seed), never on ``workers``.
    """
    evo.validate()
    spec.validate()
    penv = pack_environment(spec)
    population = init_population(evo, spec.n_env, seeds.stream(evo.seed, "init"))
    history = EvolutionHistory()
    pending_stats: dict[str, int] = {}

    fitnesses: list[float] = []
    for generation in range(evo.generations):
        world = seeds.stream(evo.seed, "world", generation)
        initial_states = []
        noise_seeds = []
        noises = []
        for _ in range(evo.evals_per_agent):
            initial_states.append(world.integers(0, 2, spec.n_env).astype(np.int8))
            noise_seeds.append(int(world.integers(0, 2**63)))
            noises.append(
                noise_matrix(evo.lifetime, spec.n_env, noise_seeds[-1])
                if spec.p_stoch > 0
                else None
            )
        fitnesses = _evaluate_population(
            population, penv, evo.lifetime, initial_states, noises, workers
        )
        champion = int(np.argmax(fitnesses))
        record = GenerationRecord(
            generation=generation,
            mean_fitness=float(sum(fitnesses) / len(fitnesses)),
            max_fitness=float(fitnesses[champion]),
            interneuron_count_mean=float(
                sum(g.n_hidden for g in population) / len(population)
            ),
            synapse_count_mean=float(
                sum(g.n_synapses for g in population) / len(population)
            ),
            champion=population[champion].copy(),
            weight_mutations=pending_stats.get("weight_mutations", 0),
            synapses_added=pending_stats.get("synapses_added", 0),
            synapses_deleted=pending_stats.get("synapses_deleted", 0),
            neurons_duplicated=pending_stats.get("neurons_duplicated", 0),
        )
        history.records.append(record)
        if on_generation is not None:
            on_generation(record)
        if generation + 1 < evo.generations:
            pending_stats = {}
            population = select_next_generation(
                population,
                fitnesses,
                evo,
                seeds.stream(evo.seed, "select", generation),
                stats=pending_stats,
            )
    history.final_population = population
    history.final_fitnesses = [float(f) for f in fitnesses]
    history.final_initial_states = initial_states
    history.final_noise_seeds = noise_seeds
    return history
