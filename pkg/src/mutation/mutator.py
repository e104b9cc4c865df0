"""
Channel-width mutation: choose a mutation group, draw a new width under its
divisibility constraints, repair depthwise convs and derived slots, and write
the result back into the source text as literal edits.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.dsl.edits import Edit, apply_edits
from src.dsl.parser import SourceText, parse
from src.errors import (
    ChannelForgeError,
    ConstraintUnsatisfiable,
    InternalInconsistency,
    NoMutableGroup,
    ShapeMismatch,
)
from src.graph.groups import MutationGroup, build_groups, derived_slots
from src.graph.shapes import infer_shapes, repair_derived
from src.ir.arch_ir import NetworkDef, Slot, width_vector
from src.verify.verifier import verify

logger = logging.getLogger(__name__)

Repair = Tuple[str, str, int, int]


class MutatorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    width_min: int = Field(default=4, ge=1)
    # inclusive; the [4, 1025) range read as exclusive-upper
    width_max: int = Field(default=1024, ge=1)
    rng_seed: int = Field(default=0, ge=0, lt=2 ** 64)
    max_attempts: int = Field(default=32, ge=1)

    @model_validator(mode="after")
    def check_range(self):
        if self.width_min > self.width_max:
            raise ValueError(f"width_min {self.width_min} exceeds width_max {self.width_max}")
        return self


@dataclass(frozen=True)
class MutationPlan:
    group: MutationGroup
    new_width: int
    repairs: Tuple[Repair, ...] = ()

    def assignments(self) -> Dict[Slot, int]:
        out: Dict[Slot, int] = {slot: self.new_width for slot in self.group.slots}
        for layer_id, attr, _, new in self.repairs:
            out[(layer_id, attr)] = new
        return out


def round_width(raw: int, step: int) -> int:
    """Round up to the nearest multiple of step"""
    return -(-raw // step) * step


def plan_mutation(net: NetworkDef, groups: List[MutationGroup], cfg: MutatorConfig,
                  rng: np.random.Generator) -> MutationPlan:
    mutable = [g for g in groups if g.mutable]
    if not mutable:
        raise NoMutableGroup(f"{net.name} has no mutable channel group")
    derived = derived_slots(groups)

    for attempt in range(cfg.max_attempts):
        group = mutable[int(rng.integers(len(mutable)))]
        raw = int(rng.integers(cfg.width_min, cfg.width_max + 1))
        width = round_width(raw, group.step)
        if width > cfg.width_max:
            logger.debug("attempt %d: width %d rounds past %d, redrawing", attempt, width, cfg.width_max)
            continue

        repairs: List[Repair] = []
        assignments: Dict[Slot, int] = {slot: width for slot in group.slots}
        for layer_id, groups_value in group.depthwise:
            if width % groups_value:
                # depthwise reset: fall back to a standard convolution
                repairs.append((layer_id, "groups", groups_value, 1))
                assignments[(layer_id, "groups")] = 1
        try:
            _, derived_repairs = repair_derived(net.with_assignments(assignments), derived)
        except ShapeMismatch as e:
            raise InternalInconsistency(f"planning on {net.name} broke shapes: {e}") from e
        repairs.extend(derived_repairs)
        return MutationPlan(group, width, tuple(repairs))

    raise ConstraintUnsatisfiable(
        f"no width in [{cfg.width_min}, {cfg.width_max}] satisfied the constraints "
        f"after {cfg.max_attempts} attempts"
    )


def apply_plan(net: NetworkDef, src: SourceText, plan: MutationPlan) -> Tuple[NetworkDef, SourceText]:
    if not src.offsets:
        src = SourceText.traced(src.text)
    assignments = plan.assignments()

    edits = []
    for (layer_id, attr), value in sorted(assignments.items()):
        if net.slot_value((layer_id, attr)) == value:
            continue
        ref = src.literal_at(layer_id, attr)
        if ref is None:
            raise InternalInconsistency(f"{layer_id}.{attr} has no literal to edit")
        edits.append(Edit(ref.span, str(value)))
    if not edits:
        return net, src

    edited = apply_edits(src, edits)
    mutated = parse(edited, validate=False)
    expected = net.with_assignments(assignments)
    if mutated != expected:
        logger.error("source edits for %s diverged from the IR-level mutation", net.name)
        raise InternalInconsistency("re-parsed source differs from the IR-level mutation")
    try:
        infer_shapes(mutated)
    except ChannelForgeError as e:
        logger.error("mutation of %s produced an inconsistent net: %s", net.name, e)
        raise InternalInconsistency(str(e)) from e
    return mutated, edited


def mutate(src: SourceText, cfg: MutatorConfig, rng: np.random.Generator,
           rounds: int = 1) -> Tuple[NetworkDef, SourceText]:
    """Run `rounds` sequential plan/apply rounds starting from src"""
    if not src.offsets:
        src = SourceText.traced(src.text)
    net = parse(src)
    for _ in range(rounds):
        groups = build_groups(net, infer_shapes(net))
        plan = plan_mutation(net, groups, cfg, rng)
        net, src = apply_plan(net, src, plan)
    return net, src


def draw_rng(rng_seed: int, *key: int) -> np.random.Generator:
    """Independent stream for one draw, keyed by (rng_seed, key...)"""
    return np.random.default_rng(np.random.SeedSequence(entropy=rng_seed, spawn_key=tuple(key)))


def _draw_variant(seed_text: str, cfg_data: dict, draw: int, verify_variants: bool) -> Optional[Tuple[str, str]]:
    """One bootstrap draw; returns (source text, rejection reason) with an empty reason on success"""
    cfg = MutatorConfig(**cfg_data)
    rng = draw_rng(cfg.rng_seed, draw)
    rounds = int(rng.integers(1, 4))
    try:
        _, src = mutate(SourceText.traced(seed_text), cfg, rng, rounds)
    except (ConstraintUnsatisfiable, NoMutableGroup):
        return None
    if verify_variants:
        report = verify(src)
        if not report.valid:
            return src.text, report.verdict_text()
    return src.text, ""


def bootstrap(seed_src: SourceText, count: int, cfg: MutatorConfig, workers: int = 1,
              verify_variants: bool = True) -> List[Tuple[SourceText, NetworkDef]]:
    """
    Generate `count` distinct verified variants of the seed.
    Draw d uses the stream (rng_seed, d) and variants are accepted in draw order,
    so the result does not depend on `workers`.
    """
    if count <= 0:
        return []
    seed_text = seed_src.text
    seed_net = parse(seed_src)
    seen = {width_vector(seed_net)}
    accepted: List[Tuple[SourceText, NetworkDef]] = []
    budget = count * cfg.max_attempts
    cfg_data = cfg.model_dump()
    draw = 0
    rejected = 0

    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while len(accepted) < count and draw < budget:
            batch = list(range(draw, min(budget, draw + max(workers * 4, count - len(accepted)))))
            draw = batch[-1] + 1
            if executor is not None:
                results = list(executor.map(_draw_variant, [seed_text] * len(batch), [cfg_data] * len(batch),
                                            batch, [verify_variants] * len(batch)))
            else:
                results = [_draw_variant(seed_text, cfg_data, d, verify_variants) for d in batch]
            for result in results:
                if len(accepted) == count:
                    break
                if result is None:
                    rejected += 1
                    continue
                text, reason = result
                if reason:
                    logger.warning("bootstrap variant failed verification: %s", reason)
                    rejected += 1
                    continue
                src = SourceText.traced(text)
                net = parse(src)
                vector = width_vector(net)
                if vector in seen:
                    rejected += 1
                    continue
                seen.add(vector)
                accepted.append((src, net))
    finally:
        if executor is not None:
            executor.shutdown()

    if len(accepted) < count:
        raise ConstraintUnsatisfiable(
            f"only {len(accepted)} of {count} distinct variants after {budget} draws")
    logger.info("bootstrap: %d variants accepted, %d draws rejected", count, rejected)
    return accepted
