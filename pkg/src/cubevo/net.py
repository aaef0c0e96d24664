"""Threshold-gated recurrent controller networks.

Neurons are logistic units arranged in an input layer, any number of
indexed hidden layers and an output layer. A synapse transmits its scaled
value only while the presynaptic output exceeds the activation threshold.
Layers evaluate in order each step; a synapse from a layer that has not
yet been evaluated this step (lateral, backward or self) reads the
previous step's output, which is what lets recurrent wiring carry state
across time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from numba import njit

from cubevo.env import Action

__all__ = [
    "INPUT",
    "OUTPUT",
    "hidden_layer",
    "layer_sort_key",
    "Network",
    "NetworkState",
    "activation",
    "step_network",
    "select_action",
    "reset_state",
]

INPUT = "input"
OUTPUT = "output"


def hidden_layer(index: int = 0) -> str:
    return f"hidden:{index}"


def layer_sort_key(layer: str) -> tuple[int, int]:
    """Evaluation order: input, then hidden layers by index, then output."""
    if layer == INPUT:
        return (0, 0)
    if layer == OUTPUT:
        return (2, 0)
    if layer.startswith("hidden:"):
        return (1, int(layer.split(":", 1)[1]))
    raise ValueError(f"unknown layer tag {layer!r}")


@njit(cache=True)
def activation(x: float) -> float:
    """Logistic 1/(1 + exp(-x)), overflow-free on both tails."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class Network:
    """Direct-encoded genome: the network is its own phenotype.

    ``neurons`` maps neuron id to a layer tag ("input", "hidden:<k>" or
    "output"); ``synapses`` maps (pre id, post id) to a weight, which makes
    duplicate pairs unrepresentable. The i-th input neuron in ascending id
    order senses bit i of the environment, and the k-th output neuron in
    ascending id order stands for action index k (bit k//2 to value k%2).
    """

    def __init__(self, neurons, synapses, threshold: float = 0.5):
        self.neurons: dict[int, str] = dict(neurons)
        self.synapses: dict[tuple[int, int], float] = {
            (int(pre), int(post)): float(w) for (pre, post), w in dict(synapses).items()
        }
        self.threshold = float(threshold)

    # -- structure queries ---------------------------------------------

    @property
    def input_ids(self) -> list[int]:
        return sorted(i for i, layer in self.neurons.items() if layer == INPUT)

    @property
    def output_ids(self) -> list[int]:
        return sorted(i for i, layer in self.neurons.items() if layer == OUTPUT)

    @property
    def hidden_ids(self) -> list[int]:
        return sorted(
            i for i, layer in self.neurons.items() if layer not in (INPUT, OUTPUT)
        )

    @property
    def n_inputs(self) -> int:
        return len(self.input_ids)

    @property
    def n_outputs(self) -> int:
        return len(self.output_ids)

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_ids)

    @property
    def n_synapses(self) -> int:
        return len(self.synapses)

    def evaluation_order(self) -> list[int]:
        return sorted(self.neurons, key=lambda i: (layer_sort_key(self.neurons[i]), i))

    def canonical_synapses(self) -> list[tuple[int, int, float]]:
        """Synapses sorted by (post, pre): the fixed summation order that
        makes floating-point results reproducible."""
        return [
            (pre, post, self.synapses[(pre, post)])
            for (pre, post) in sorted(self.synapses, key=lambda k: (k[1], k[0]))
        ]

    def next_neuron_id(self) -> int:
        return max(self.neurons) + 1

    def copy(self) -> "Network":
        return Network(self.neurons, self.synapses, self.threshold)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Network):
            return NotImplemented
        return (
            self.neurons == other.neurons
            and self.synapses == other.synapses
            and self.threshold == other.threshold
        )

    def __repr__(self) -> str:
        return (
            f"Network(inputs={self.n_inputs}, hidden={self.n_hidden}, "
            f"outputs={self.n_outputs}, synapses={self.n_synapses})"
        )

    # -- validation -----------------------------------------------------

    def validate(self) -> None:
        for nid, layer in self.neurons.items():
            layer_sort_key(layer)  # raises on unknown tags
        if self.n_outputs != 2 * self.n_inputs:
            raise ValueError(
                f"output layer must hold 2 neurons per input bit "
                f"(got {self.n_inputs} inputs, {self.n_outputs} outputs)"
            )
        for (pre, post), w in self.synapses.items():
            if pre not in self.neurons:
                raise ValueError(f"synapse ({pre}, {post}) has unknown presynaptic id")
            if post not in self.neurons:
                raise ValueError(f"synapse ({pre}, {post}) has unknown postsynaptic id")
            if self.neurons[post] == INPUT:
                raise ValueError(f"synapse ({pre}, {post}) targets an input neuron")
            if not math.isfinite(w):
                raise ValueError(f"synapse ({pre}, {post}) has non-finite weight {w}")

    # -- serialization ----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "neurons": [
                {"id": nid, "layer": layer} for nid, layer in sorted(self.neurons.items())
            ],
            "synapses": [
                {"pre": pre, "post": post, "w": w}
                for pre, post, w in self.canonical_synapses()
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Network":
        try:
            threshold = float(doc["threshold"])
            raw_neurons = doc["neurons"]
            raw_synapses = doc["synapses"]
        except KeyError as err:
            raise ValueError(f"network document missing field {err.args[0]!r}") from None
        neurons: dict[int, str] = {}
        for raw in raw_neurons:
            try:
                nid, layer = int(raw["id"]), str(raw["layer"])
            except (KeyError, TypeError, ValueError):
                raise ValueError(f"malformed neuron entry: {raw!r}") from None
            if nid in neurons:
                raise ValueError(f"duplicate neuron id {nid}")
            neurons[nid] = layer
        synapses: dict[tuple[int, int], float] = {}
        for raw in raw_synapses:
            try:
                key = (int(raw["pre"]), int(raw["post"]))
                weight = float(raw["w"])
            except (KeyError, TypeError, ValueError):
                raise ValueError(f"malformed synapse entry: {raw!r}") from None
            if key in synapses:
                raise ValueError(f"duplicate synapse pair {key}")
            synapses[key] = weight
        net = cls(neurons, synapses, threshold)
        net.validate()
        return net

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Network":
        return cls.from_json_dict(json.loads(text))


@dataclass
class NetworkState:
    """Per-neuron outputs for the previous and current step."""

    prev: dict[int, float]
    curr: dict[int, float]


def reset_state(net: Network) -> NetworkState:
    """All-zero state: no recurrent signal leaks between lifetimes."""
    zeros = {nid: 0.0 for nid in net.neurons}
    return NetworkState(prev=dict(zeros), curr=dict(zeros))


def step_network(
    net: Network, state: NetworkState, input_bits
) -> tuple[NetworkState, list[float]]:
    """One synchronous network update.

    Input neurons take the bit values directly. Every other neuron, in
    layer order, sums ``w * y_pre`` over incoming synapses whose
    presynaptic output exceeds the threshold, where ``y_pre`` is the
    current-step output if the presynaptic layer was already evaluated
    this step and the previous step's output otherwise. Incoming synapses
    are summed in ascending presynaptic-id order (the canonical order).
    """
    input_ids = net.input_ids
    if len(input_bits) != len(input_ids):
        raise ValueError(
            f"got {len(input_bits)} input bits for {len(input_ids)} input neurons"
        )
    rank = {nid: layer_sort_key(layer) for nid, layer in net.neurons.items()}
    incoming: dict[int, list[tuple[int, float]]] = {}
    for (pre, post), w in sorted(net.synapses.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        incoming.setdefault(post, []).append((pre, w))

    previous = state.curr
    curr: dict[int, float] = {}
    for i, nid in enumerate(input_ids):
        curr[nid] = float(input_bits[i])
    for nid in net.evaluation_order():
        if net.neurons[nid] == INPUT:
            continue
        total = 0.0
        for pre, w in incoming.get(nid, ()):
            y = curr[pre] if rank[pre] < rank[nid] else previous.get(pre, 0.0)
            if y > net.threshold:
                total += w * y
        curr[nid] = float(activation(total))
    outputs = [curr[nid] for nid in net.output_ids]
    return NetworkState(prev=dict(previous), curr=curr), outputs


def select_action(outputs) -> Action:
    """Decode the most active output neuron into an action; ties go to the
    lowest index."""
    best = max(range(len(outputs)), key=lambda k: (outputs[k], -k))
    return Action.from_index(best)
