"""Neuroevolution of recurrent bit-flip agents in multi-goal hypercube worlds."""

from cubevo.env import (
    Action,
    EnvironmentSpec,
    EnvRuntime,
    GeneratorParams,
    Goal,
    StepOutcome,
    apply_action,
    apply_noise,
    available_reward,
    difficulty,
    env_step,
    generate_environment,
    match_achieved_goals,
    occupancy,
)
from cubevo.net import (
    Network,
    NetworkState,
    activation,
    reset_state,
    select_action,
    step_network,
)
from cubevo.evo import (
    EvoParams,
    EvolutionHistory,
    GenerationRecord,
    add_connection,
    delete_connection,
    duplicate_neuron,
    evaluate_fitness,
    evolve,
    init_population,
    mutate_weights,
    prune_isolated,
    select_next_generation,
)
from cubevo.analysis import (
    AlternativeEvent,
    CycleInfo,
    SweepBand,
    SweepConfig,
    Trajectory,
    detect_alternatives,
    detect_main_cycle,
    neuron_specialization,
    occupancy_sweep,
    record_trajectory,
    slow_oscillation_scan,
    stm_depth_lower_bound,
    strategy_signature,
    welch_t_test,
)

__version__ = "0.1.0"
