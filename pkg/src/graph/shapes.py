"""
Symbolic shape inference over a NetworkDef.
Shapes are batch-independent: (C, H, W) for feature maps, (F,) after Flatten.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Tuple

from src.errors import InvalidIRError, ShapeMismatch
from src.ir.arch_ir import INPUT_ID, LayerKind, LayerSpec, NetworkDef, validate_ir

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class ShapeMap:
    input_shape: Shape
    outputs: Dict[str, Shape] = field(default_factory=dict)

    def __getitem__(self, node: str) -> Shape:
        if node == INPUT_ID:
            return self.input_shape
        return self.outputs[node]

    def __iter__(self) -> Iterator[str]:
        return iter(self.outputs)

    def items(self):
        return self.outputs.items()


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """floor((in + 2p - k) / s) + 1, dilation fixed at 1"""
    return (size + 2 * padding - kernel) // stride + 1


def _spatial(layer: LayerSpec, shape: Shape) -> Shape:
    c, h, w = shape
    k, s, p = int(layer.params["kernel"]), int(layer.params["stride"]), int(layer.params.get("padding", 0))
    oh, ow = conv_output_size(h, k, s, p), conv_output_size(w, k, s, p)
    if oh < 1 or ow < 1:
        raise ShapeMismatch(layer.id, f"spatial size >= {k - 2 * p} for kernel {k}", (h, w))
    return oh, ow


def _require_map(layer: LayerSpec, shape: Shape) -> None:
    if len(shape) != 3:
        raise ShapeMismatch(layer.id, "feature map (C, H, W)", shape)


def layer_output_shape(layer: LayerSpec, inputs: List[Shape]) -> Shape:
    """Output shape of one layer given its operand shapes; raises ShapeMismatch"""
    kind, params = layer.kind, layer.params
    first = inputs[0]

    if kind == LayerKind.CONV2D:
        _require_map(layer, first)
        if first[0] != int(params["in_channels"]):
            raise ShapeMismatch(layer.id, int(params["in_channels"]), first[0])
        return (int(params["out_channels"]),) + _spatial(layer, first)

    if kind == LayerKind.BATCHNORM2D:
        _require_map(layer, first)
        if first[0] != int(params["num_features"]):
            raise ShapeMismatch(layer.id, int(params["num_features"]), first[0])
        return first

    if kind in (LayerKind.RELU, LayerKind.DROPOUT):
        return first

    if kind == LayerKind.MAXPOOL2D:
        _require_map(layer, first)
        return (first[0],) + _spatial(layer, first)

    if kind == LayerKind.ADAPTIVEAVGPOOL2D:
        _require_map(layer, first)
        size = int(params["target_size"])
        return first[0], size, size

    if kind == LayerKind.FLATTEN:
        total = 1
        for dim in first:
            total *= dim
        return (total,)

    if kind == LayerKind.LINEAR:
        if len(first) != 1:
            raise ShapeMismatch(layer.id, f"flat features ({params['in_features']},)", first)
        if first[0] != int(params["in_features"]):
            raise ShapeMismatch(layer.id, int(params["in_features"]), first[0])
        return (int(params["out_features"]),)

    if kind == LayerKind.ADD:
        for shape in inputs[1:]:
            if shape != first:
                raise ShapeMismatch(layer.id, first, shape)
        return first

    if kind == LayerKind.CONCAT:
        axis = int(params.get("axis", 1)) - 1
        for shape in inputs:
            if len(shape) != len(first) or axis >= len(shape):
                raise ShapeMismatch(layer.id, f"rank {len(first)} operands with axis {axis + 1}", shape)
            other = tuple(d for i, d in enumerate(shape) if i != axis)
            expected = tuple(d for i, d in enumerate(first) if i != axis)
            if other != expected:
                raise ShapeMismatch(layer.id, expected, other)
        out = list(first)
        out[axis] = sum(shape[axis] for shape in inputs)
        return tuple(out)

    raise ShapeMismatch(layer.id, "known layer kind", kind)


def infer_shapes(net: NetworkDef) -> ShapeMap:
    result = validate_ir(net)
    if not result.ok:
        raise InvalidIRError(result.violations)
    shapes = ShapeMap(tuple(int(d) for d in net.input_shape))
    for layer_id in net.topological_order():
        layer = net.layer(layer_id)
        inputs = [shapes[p] for p in net.producers(layer_id)]
        shapes.outputs[layer_id] = layer_output_shape(layer, inputs)
    return shapes


def consumed_width(layer: LayerSpec, shape: Shape) -> Tuple[str, int]:
    """Channel-consuming attribute of `layer` and the width its operand provides"""
    if layer.kind == LayerKind.LINEAR:
        return "in_features", shape[0] if len(shape) == 1 else -1
    if layer.kind == LayerKind.CONV2D:
        return "in_channels", shape[0]
    return "num_features", shape[0]


def repair_derived(net: NetworkDef, derived_slots) -> Tuple[NetworkDef, List[Tuple[str, str, int, int]]]:
    """
    Recompute every derived slot from the operand shapes seen during a topological walk.
    Returns the repaired net and (layer, attr, old, new) for each changed slot.
    """
    derived = set(derived_slots)
    repairs = []
    shapes = ShapeMap(tuple(int(d) for d in net.input_shape))
    current = net
    for layer_id in net.topological_order():
        layer = current.layer(layer_id)
        inputs = [shapes[p] for p in current.producers(layer_id)]
        if layer.kind in (LayerKind.LINEAR, LayerKind.CONV2D, LayerKind.BATCHNORM2D):
            attr, provided = consumed_width(layer, inputs[0])
            if (layer_id, attr) in derived and provided > 0 and int(layer.params[attr]) != provided:
                repairs.append((layer_id, attr, int(layer.params[attr]), provided))
                current = current.with_assignments({(layer_id, attr): provided})
                layer = current.layer(layer_id)
        shapes.outputs[layer_id] = layer_output_shape(layer, inputs)
    return current, repairs
