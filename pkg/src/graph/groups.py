"""
Mutation groups: union-find closure over channel variables.

Every tensor edge carries a channel variable. Producer out-slots and consumer
in-slots are unified with the variable they produce or consume; Flatten and
channel Concat outputs are derived variables whose value is computed from
their operands, so classes holding them are recomputed, never mutated directly.
"""

import logging
from dataclasses import dataclass
from functools import reduce
from math import lcm
from typing import Dict, Hashable, List, Optional, Set, Tuple

from src.graph.shapes import ShapeMap
from src.ir.arch_ir import INPUT_ID, LayerKind, NetworkDef, Slot

logger = logging.getLogger(__name__)

INPUT_VAR = ("<input>",)
OUT_ATTRS = ("out_channels", "out_features")


class UnionFind:
    """Disjoint sets with path compression and union by size"""

    def __init__(self):
        self.parent: Dict[Hashable, Hashable] = {}
        self.size: Dict[Hashable, int] = {}

    def add(self, item: Hashable) -> None:
        if item not in self.parent:
            self.parent[item] = item
            self.size[item] = 1

    def find(self, item: Hashable) -> Hashable:
        self.add(item)
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, a: Hashable, b: Hashable) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]

    def classes(self) -> Dict[Hashable, List[Hashable]]:
        out: Dict[Hashable, List[Hashable]] = {}
        for item in self.parent:
            out.setdefault(self.find(item), []).append(item)
        return out


@dataclass(frozen=True)
class MutationGroup:
    slots: Tuple[Slot, ...]
    driver: Slot
    divisors: Tuple[int, ...] = ()
    # depthwise convs whose groups value resets to 1 when the new width is not a multiple of it
    depthwise: Tuple[Tuple[str, int], ...] = ()
    fixed: bool = False
    derived: bool = False
    reason: str = ""

    @property
    def mutable(self) -> bool:
        return not self.fixed and not self.derived

    @property
    def step(self) -> int:
        """Widths must be multiples of this"""
        return reduce(lcm, self.divisors, 1)

    def width(self, net: NetworkDef) -> int:
        return net.slot_value(self.driver)


def _is_derived(var: Hashable) -> bool:
    return isinstance(var, tuple) and len(var) == 2 and var[0] in ("<flatten>", "<concat>")


def build_groups(net: NetworkDef, shapes: ShapeMap) -> List[MutationGroup]:
    """Partition every channel-bearing slot of `net` into mutation groups"""
    uf = UnionFind()
    uf.add(INPUT_VAR)
    out_var: Dict[str, Hashable] = {INPUT_ID: INPUT_VAR}
    depends: Dict[Hashable, List[Hashable]] = {}
    hard: Dict[Slot, int] = {}
    soft: Dict[Slot, Tuple[str, int]] = {}
    order = net.topological_order()
    position = {layer_id: i for i, layer_id in enumerate(order)}

    for layer_id in order:
        layer = net.layer(layer_id)
        producers = net.producers(layer_id)
        operand_vars = [out_var[p] for p in producers]
        first = operand_vars[0]
        kind = layer.kind

        if kind == LayerKind.CONV2D:
            in_slot, out_slot = (layer_id, "in_channels"), (layer_id, "out_channels")
            uf.union(in_slot, first)
            uf.add(out_slot)
            groups = int(layer.params.get("groups", 1))
            if layer.is_depthwise:
                if int(layer.params["out_channels"]) == int(layer.params["in_channels"]):
                    uf.union(out_slot, in_slot)
                soft[in_slot] = (layer_id, groups)
                soft[out_slot] = (layer_id, groups)
            elif groups > 1:
                hard[in_slot] = groups
                hard[out_slot] = groups
            out_var[layer_id] = out_slot
        elif kind == LayerKind.LINEAR:
            in_slot, out_slot = (layer_id, "in_features"), (layer_id, "out_features")
            uf.union(in_slot, first)
            uf.add(out_slot)
            out_var[layer_id] = out_slot
        elif kind == LayerKind.BATCHNORM2D:
            uf.union((layer_id, "num_features"), first)
            out_var[layer_id] = first
        elif kind == LayerKind.FLATTEN:
            if len(shapes[producers[0]]) == 1:
                out_var[layer_id] = first
            else:
                var = ("<flatten>", layer_id)
                uf.add(var)
                depends[var] = [first]
                out_var[layer_id] = var
        elif kind == LayerKind.CONCAT and int(layer.params.get("axis", 1)) == 1:
            var = ("<concat>", layer_id)
            uf.add(var)
            depends[var] = operand_vars
            out_var[layer_id] = var
        elif kind in (LayerKind.ADD, LayerKind.CONCAT):
            for other in operand_vars[1:]:
                uf.union(first, other)
            out_var[layer_id] = first
        else:
            out_var[layer_id] = first

    sink = net.sink()
    sink_slot = (sink.id, "out_features")
    classes = uf.classes()

    fixed_roots: Dict[Hashable, str] = {}

    def fix(root: Hashable, reason: str) -> None:
        if root in fixed_roots:
            return
        fixed_roots[root] = reason
        # a fixed derived value pins everything it is computed from
        for member in classes[root]:
            for dep in depends.get(member, ()):
                fix(uf.find(dep), f"feeds fixed {reason.split(':')[0]} class")

    fix(uf.find(INPUT_VAR), "input channels")
    fix(uf.find(sink_slot), "sink class count")

    derived_roots: Set[Hashable] = set()
    for root, members in classes.items():
        derived_vars = [m for m in members if _is_derived(m)]
        if not derived_vars:
            continue
        derived_roots.add(root)
        producer_slots = [m for m in members if not _is_derived(m) and m != INPUT_VAR and m[1] in OUT_ATTRS]
        grouped = [m for m in members if m in hard or m in soft]
        if len(derived_vars) > 1 or producer_slots or INPUT_VAR in members or grouped:
            fix(root, "derived width conflict: operand sum must match another width")

    groups: List[MutationGroup] = []
    for root, members in classes.items():
        slots = [m for m in members if not _is_derived(m) and m != INPUT_VAR]
        if not slots:
            continue
        slots.sort(key=lambda s: (position[s[0]], s[1] not in OUT_ATTRS, s[1]))
        out_slots = [s for s in slots if s[1] in OUT_ATTRS]
        driver = out_slots[0] if out_slots else slots[0]
        divisors = tuple(sorted({hard[s] for s in slots if s in hard}))
        depthwise = tuple(sorted({soft[s] for s in slots if s in soft}))
        fixed = root in fixed_roots
        derived = root in derived_roots
        reason = fixed_roots.get(root, "derived from operand widths" if derived else "")
        groups.append(MutationGroup(tuple(slots), driver, divisors, depthwise, fixed, derived, reason))

    groups.sort(key=lambda g: (position[g.driver[0]], g.driver[1]))
    logger.debug("%s: %d groups, %d mutable", net.name, len(groups), sum(g.mutable for g in groups))
    return groups


def derived_slots(groups: List[MutationGroup]) -> List[Slot]:
    return [slot for g in groups if g.derived for slot in g.slots]


def group_of(groups: List[MutationGroup], slot: Slot) -> Optional[MutationGroup]:
    for group in groups:
        if slot in group.slots:
            return group
    return None
