"""
Architecture intermediate representation.
NetworkDef is what the parser produces, what shape inference and mutation
planning analyze, and what the micro-engine executes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field

from src.errors import InvalidIRError

INPUT_ID = "input"

Number = Union[int, float]
Slot = Tuple[str, str]


class LayerKind(str, Enum):
    CONV2D = "Conv2d"
    LINEAR = "Linear"
    BATCHNORM2D = "BatchNorm2d"
    RELU = "ReLU"
    MAXPOOL2D = "MaxPool2d"
    ADAPTIVEAVGPOOL2D = "AdaptiveAvgPool2d"
    FLATTEN = "Flatten"
    ADD = "Add"
    CONCAT = "Concat"
    DROPOUT = "Dropout"


# attributes that carry a channel / feature width
CHANNEL_ATTRS = ("in_channels", "out_channels", "num_features", "in_features", "out_features")

# attributes that must be >= 1
DIMENSION_ATTRS = {
    LayerKind.CONV2D: ("in_channels", "out_channels", "kernel", "stride", "groups"),
    LayerKind.LINEAR: ("in_features", "out_features"),
    LayerKind.BATCHNORM2D: ("num_features",),
    LayerKind.MAXPOOL2D: ("kernel", "stride"),
    LayerKind.ADAPTIVEAVGPOOL2D: ("target_size",),
}

MULTI_INPUT_KINDS = (LayerKind.ADD, LayerKind.CONCAT)


@dataclass(frozen=True)
class Span:
    """Half-open byte range [start, end) in a source text"""
    start: int
    end: int

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class LayerSpec:
    id: str
    kind: LayerKind
    params: Mapping[str, Number] = field(default_factory=dict)
    # attribute name -> literal span; only populated for layers parsed from text
    source_spans: Mapping[str, Span] = field(default_factory=dict, compare=False, repr=False)

    def get(self, attr: str, default: Optional[Number] = None) -> Optional[Number]:
        return self.params.get(attr, default)

    def with_params(self, **updates: Number) -> "LayerSpec":
        params = dict(self.params)
        params.update(updates)
        return replace(self, params=params)

    @property
    def channel_slots(self) -> List[Slot]:
        return [(self.id, a) for a in CHANNEL_ATTRS if a in self.params]

    @property
    def is_depthwise(self) -> bool:
        """groups == in_channels > 1"""
        if self.kind != LayerKind.CONV2D:
            return False
        groups = int(self.params.get("groups", 1))
        return groups > 1 and groups == int(self.params["in_channels"])


@dataclass(frozen=True)
class Edge:
    producer: str
    consumer: str
    slot: int


@dataclass(frozen=True)
class NetworkDef:
    name: str
    input_shape: Tuple[int, int, int]
    num_classes: int
    layers: Tuple[LayerSpec, ...]
    edges: Tuple[Edge, ...]

    # ---- lookups -----------------------------------------------------------

    def layer(self, layer_id: str) -> LayerSpec:
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)

    def layer_ids(self) -> List[str]:
        return [layer.id for layer in self.layers]

    def producers(self, consumer: str) -> List[str]:
        """Producer ids feeding `consumer`, ordered by input slot"""
        feeding = sorted((e for e in self.edges if e.consumer == consumer), key=lambda e: e.slot)
        return [e.producer for e in feeding]

    def consumers(self, producer: str) -> List[str]:
        return [e.consumer for e in self.edges if e.producer == producer]

    def topological_order(self) -> List[str]:
        """Kahn's algorithm; ties broken by declaration order. Raises on cycles."""
        order = _topological_order(self)
        if order is None:
            raise InvalidIRError(["cycle: graph is not acyclic"])
        return order

    def sink(self) -> LayerSpec:
        sinks = [layer for layer in self.layers if not self.consumers(layer.id)]
        if len(sinks) != 1:
            raise InvalidIRError([f"expected one sink, found {len(sinks)}"])
        return sinks[0]

    def slot_value(self, slot: Slot) -> int:
        layer_id, attr = slot
        return int(self.layer(layer_id).params[attr])

    # ---- functional updates ------------------------------------------------

    def with_assignments(self, assignments: Mapping[Slot, Number]) -> "NetworkDef":
        """Copy of the net with the given (layer, attribute) values replaced"""
        by_layer: Dict[str, Dict[str, Number]] = {}
        for (layer_id, attr), value in assignments.items():
            by_layer.setdefault(layer_id, {})[attr] = value
        layers = tuple(
            layer.with_params(**by_layer[layer.id]) if layer.id in by_layer else layer
            for layer in self.layers
        )
        return replace(self, layers=layers)

    def without_spans(self) -> "NetworkDef":
        return replace(self, layers=tuple(replace(layer, source_spans={}) for layer in self.layers))


class Hyperparams(BaseModel):
    """Training recipe carried in the <hp> block"""

    model_config = ConfigDict(frozen=True)

    batch_size: int = Field(default=64, ge=1)
    optimizer: str = Field(default="AdamW", pattern="^(SGD|AdamW)$")
    learning_rate: float = Field(default=1e-3, gt=0)
    epochs: int = Field(default=1, ge=1)

    def to_lines(self) -> str:
        return "\n".join([
            f"batch_size={self.batch_size}",
            f"optimizer={self.optimizer}",
            f"learning_rate={self.learning_rate!r}",
            f"epochs={self.epochs}",
        ])


@dataclass
class ValidationResult:
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _topological_order(net: NetworkDef) -> Optional[List[str]]:
    ids = net.layer_ids()
    known = set(ids)
    indegree = {layer_id: 0 for layer_id in ids}
    for edge in net.edges:
        if edge.consumer in indegree and (edge.producer in known or edge.producer == INPUT_ID):
            if edge.producer != INPUT_ID:
                indegree[edge.consumer] += 1
    ready = [layer_id for layer_id in ids if indegree[layer_id] == 0]
    order = []
    position = {layer_id: i for i, layer_id in enumerate(ids)}
    while ready:
        ready.sort(key=position.__getitem__)
        current = ready.pop(0)
        order.append(current)
        for edge in net.edges:
            if edge.producer == current and edge.consumer in indegree:
                indegree[edge.consumer] -= 1
                if indegree[edge.consumer] == 0:
                    ready.append(edge.consumer)
    if len(order) != len(ids):
        return None
    return order


def _expected_arity(layer: LayerSpec) -> Tuple[int, Optional[int]]:
    if layer.kind in MULTI_INPUT_KINDS:
        return 2, None
    return 1, 1


def validate_ir(net: NetworkDef) -> ValidationResult:
    """Collect every invariant violation. Pure: violations are data, never raised."""
    violations: List[str] = []
    ids = net.layer_ids()
    known = set(ids)

    if len(known) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        violations.append(f"duplicate layer id: {', '.join(dupes)}")
    if INPUT_ID in known:
        violations.append(f"reserved layer id: {INPUT_ID}")

    if len(net.input_shape) != 3 or any(int(d) < 1 for d in net.input_shape):
        violations.append(f"dimension: input shape {net.input_shape} must be three positive integers")
    if net.num_classes < 1:
        violations.append("dimension: classes must be positive")

    # edges reference known nodes
    for edge in net.edges:
        if edge.producer not in known and edge.producer != INPUT_ID:
            violations.append(f"unknown producer: {edge.producer} -> {edge.consumer}")
        if edge.consumer not in known:
            violations.append(f"unknown consumer: {edge.producer} -> {edge.consumer}")

    # slot coverage: every consumer slot fed exactly once, arity respected
    for layer in net.layers:
        feeding = [e for e in net.edges if e.consumer == layer.id]
        slots = [e.slot for e in feeding]
        if len(set(slots)) != len(slots):
            violations.append(f"slot coverage: {layer.id} has an input slot fed more than once")
        if sorted(set(slots)) != list(range(len(set(slots)))):
            violations.append(f"slot coverage: {layer.id} input slots are not contiguous from 0")
        low, high = _expected_arity(layer)
        if len(feeding) < low or (high is not None and len(feeding) > high):
            violations.append(f"slot coverage: {layer.id} ({layer.kind.value}) has {len(feeding)} inputs")

    if _topological_order(net) is None:
        violations.append("cycle: graph is not acyclic")

    # single source, single sink
    if net.layers and not any(e.producer == INPUT_ID for e in net.edges):
        violations.append("source: nothing consumes the network input")
    sinks = [layer for layer in net.layers if not any(e.producer == layer.id for e in net.edges)]
    if len(sinks) != 1:
        violations.append(f"sink: expected exactly one sink, found {len(sinks)}")
    else:
        sink = sinks[0]
        if sink.kind != LayerKind.LINEAR:
            violations.append(f"sink class count: sink {sink.id} is {sink.kind.value}, not Linear")
        elif int(sink.params.get("out_features", -1)) != net.num_classes:
            violations.append(
                f"sink class count: {sink.id}.out_features={sink.params.get('out_features')} "
                f"but classes={net.num_classes}"
            )

    for layer in net.layers:
        for attr in DIMENSION_ATTRS.get(layer.kind, ()):
            value = layer.params.get(attr)
            if value is None or int(value) < 1:
                violations.append(f"dimension: {layer.id}.{attr}={value} must be >= 1")
        if layer.kind == LayerKind.CONV2D and int(layer.params.get("padding", 0)) < 0:
            violations.append(f"dimension: {layer.id}.padding must be >= 0")
        if layer.kind == LayerKind.CONV2D:
            groups = int(layer.params.get("groups", 1) or 1)
            if groups >= 1:
                if int(layer.params.get("in_channels", 0)) % groups:
                    violations.append(
                        f"groups divisibility: {layer.id}.in_channels={layer.params.get('in_channels')} "
                        f"not divisible by groups={groups}")
                if int(layer.params.get("out_channels", 0)) % groups:
                    violations.append(
                        f"groups divisibility: {layer.id}.out_channels={layer.params.get('out_channels')} "
                        f"not divisible by groups={groups}")
        if layer.kind == LayerKind.DROPOUT and not 0 <= float(layer.params.get("p", 0.5)) < 1:
            violations.append(f"dimension: {layer.id}.p must be in [0, 1)")
        if layer.kind == LayerKind.CONCAT and int(layer.params.get("axis", 1)) not in (1, 2, 3):
            violations.append(f"dimension: {layer.id}.axis must be 1, 2 or 3")
        # parsed layers must carry a span for every channel attribute
        if layer.source_spans:
            for attr in CHANNEL_ATTRS:
                if attr in layer.params and attr not in layer.source_spans:
                    violations.append(f"span: {layer.id}.{attr} has no source span")

    return ValidationResult(violations)


def count_params(net: NetworkDef) -> int:
    """Weight + bias element count of every parameterized layer"""
    result = validate_ir(net)
    if not result.ok:
        raise InvalidIRError(result.violations)
    total = 0
    for layer in net.layers:
        p = layer.params
        if layer.kind == LayerKind.CONV2D:
            out_c, in_c = int(p["out_channels"]), int(p["in_channels"])
            k, groups = int(p["kernel"]), int(p.get("groups", 1))
            total += out_c * (in_c // groups) * k * k + out_c
        elif layer.kind == LayerKind.LINEAR:
            total += int(p["out_features"]) * int(p["in_features"]) + int(p["out_features"])
        elif layer.kind == LayerKind.BATCHNORM2D:
            total += 2 * int(p["num_features"])
    return total


def width_vector(net: NetworkDef) -> Tuple[int, ...]:
    """Channel configuration: out width of every Conv2d and hidden Linear, topological order"""
    sink_id = net.sink().id
    widths = []
    for layer_id in net.topological_order():
        layer = net.layer(layer_id)
        if layer.kind == LayerKind.CONV2D:
            widths.append(int(layer.params["out_channels"]))
        elif layer.kind == LayerKind.LINEAR and layer_id != sink_id:
            widths.append(int(layer.params["out_features"]))
    return tuple(widths)


def width_positions(net: NetworkDef) -> Tuple[Tuple[str, str], ...]:
    """(layer id, kind) for each entry of width_vector; the schema used by correlation analysis"""
    sink_id = net.sink().id
    positions = []
    for layer_id in net.topological_order():
        layer = net.layer(layer_id)
        if layer.kind == LayerKind.CONV2D or (layer.kind == LayerKind.LINEAR and layer_id != sink_id):
            positions.append((layer_id, layer.kind.value))
    return tuple(positions)


def build_network(name: str, input_shape: Iterable[int], num_classes: int,
                  layers: Iterable[Tuple[str, LayerKind, Mapping[str, Number], Iterable[str]]]) -> NetworkDef:
    """Convenience constructor: (id, kind, params, producer ids) per layer"""
    specs, edges = [], []
    for layer_id, kind, params, producers in layers:
        specs.append(LayerSpec(layer_id, LayerKind(kind), dict(params)))
        for slot, producer in enumerate(producers):
            edges.append(Edge(producer, layer_id, slot))
    return NetworkDef(name, tuple(int(d) for d in input_shape), int(num_classes), tuple(specs), tuple(edges))
