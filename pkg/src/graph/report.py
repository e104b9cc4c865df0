"""Deterministic text report of shapes and mutation groups (the `analyze` command)"""

from typing import List

from src.graph.groups import MutationGroup, build_groups
from src.graph.shapes import ShapeMap, infer_shapes
from src.ir.arch_ir import NetworkDef, count_params, width_vector


def _dims(shape) -> str:
    return "x".join(str(d) for d in shape)


def _status(group: MutationGroup) -> str:
    if group.fixed:
        return f"fixed ({group.reason})"
    if group.derived:
        return "derived"
    return "mutable"


def format_report(net: NetworkDef, shapes: ShapeMap, groups: List[MutationGroup]) -> str:
    lines = [
        f"network {net.name}",
        f"input {_dims(net.input_shape)}",
        f"classes {net.num_classes}",
        f"params {count_params(net)}",
        f"widths {list(width_vector(net))}",
        "shapes:",
    ]
    for layer_id in net.topological_order():
        lines.append(f"  {layer_id} {net.layer(layer_id).kind.value} {_dims(shapes[layer_id])}")
    lines.append("groups:")
    for index, group in enumerate(groups):
        slots = ", ".join(f"{layer}.{attr}" for layer, attr in group.slots)
        extras = []
        if group.divisors:
            extras.append("divisors " + ",".join(str(d) for d in group.divisors))
        if group.depthwise:
            extras.append("depthwise " + ",".join(f"{layer}/{g}" for layer, g in group.depthwise))
        suffix = ("; " + "; ".join(extras)) if extras else ""
        lines.append(
            f"  g{index} width={group.width(net)} {_status(group)} "
            f"driver={group.driver[0]}.{group.driver[1]}{suffix}"
        )
        lines.append(f"    {slots}")
    return "\n".join(lines) + "\n"


def analyze_net(net: NetworkDef) -> str:
    shapes = infer_shapes(net)
    return format_report(net, shapes, build_groups(net, shapes))
