"""
Three-stage candidate verification: shape consistency, gradient integrity and
trainability. verify() never raises; every failure is recorded in the report.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from src.dsl.parser import SourceText, parse
from src.engine.functional import cross_entropy
from src.engine.model import instantiate
from src.errors import ChannelForgeError, ShapeMismatch
from src.graph.shapes import ShapeMap, infer_shapes
from src.ir.arch_ir import LayerKind, NetworkDef, count_params, validate_ir

logger = logging.getLogger(__name__)

CHECK_BATCH = 2
CHECK_LR = 1e-2
DEFAULT_MAX_PARAMS = 50_000_000
# multiply-accumulates per sample, and python-level kernel offsets per forward pass
DEFAULT_MAX_MACS = 10_000_000_000
MAX_KERNEL_STEPS = 20_000

STAGE_SHAPE = 1
STAGE_GRADIENT = 2
STAGE_TRAINABLE = 3


@dataclass(frozen=True)
class VerificationReport:
    shape_ok: bool = False
    gradient_ok: bool = False
    trainable_ok: bool = False
    # first failing stage, None when valid
    stage: Optional[int] = None
    reason: str = ""

    @property
    def valid(self) -> bool:
        return self.shape_ok and self.gradient_ok and self.trainable_ok

    def verdict_text(self) -> str:
        if self.valid:
            return "Valid"
        return f"Invalid(stage {self.stage}, {self.reason})"

    def to_text(self) -> str:
        def mark(ok: bool) -> str:
            return "✓" if ok else "✗"
        return "\n".join([
            f"{mark(self.shape_ok)} shape consistency",
            f"{mark(self.gradient_ok)} gradient integrity",
            f"{mark(self.trainable_ok)} trainability",
            f"verdict: {self.verdict_text()}",
        ])


def compute_cost(net: NetworkDef, shapes: ShapeMap) -> Tuple[int, int, int]:
    """(multiply-accumulates, kernel offsets looped, padded input values) for one sample"""
    macs, steps, padded = 0, 0, 0
    for layer in net.layers:
        p = layer.params
        out = shapes[layer.id]
        if layer.kind in (LayerKind.CONV2D, LayerKind.MAXPOOL2D):
            c, h, w = shapes[net.producers(layer.id)[0]]
            k, pad = int(p["kernel"]), int(p.get("padding", 0))
            steps += k * k
            padded += c * (h + 2 * pad) * (w + 2 * pad)
            per_output = k * k
            if layer.kind == LayerKind.CONV2D:
                per_output *= int(p["in_channels"]) // int(p.get("groups", 1))
            macs += int(np.prod(out)) * per_output
        elif layer.kind == LayerKind.ADAPTIVEAVGPOOL2D:
            steps += int(p["target_size"]) ** 2
        elif layer.kind == LayerKind.LINEAR:
            macs += int(p["in_features"]) * int(p["out_features"])
    return macs, steps, padded


def _fail(stage: int, reason: str, **flags) -> VerificationReport:
    return VerificationReport(stage=stage, reason=reason, **flags)


def verify(src: Union[SourceText, str, bytes], max_params: int = DEFAULT_MAX_PARAMS,
           seed: int = 0, max_macs: int = DEFAULT_MAX_MACS) -> VerificationReport:
    """Run the three verification stages on a candidate source"""
    # stage 1: parse, validate, infer shapes, forward a 2-sample synthetic batch
    try:
        net = parse(src, validate=False)
    except (ChannelForgeError, UnicodeError) as e:
        return _fail(STAGE_SHAPE, f"parse: {e}")

    result = validate_ir(net)
    if not result.ok:
        first = result.violations[0]
        if first.startswith("sink class count"):
            return _fail(STAGE_SHAPE, "class-count")
        return _fail(STAGE_SHAPE, f"invalid-network: {first}")

    params = count_params(net)
    if params > max_params:
        return _fail(STAGE_SHAPE, f"too-large: {params} parameters exceed {max_params}")
    try:
        shapes = infer_shapes(net)
    except ShapeMismatch as e:
        return _fail(STAGE_SHAPE, f"shape-mismatch: {e}")
    activations = sum(int(np.prod(shape)) for _, shape in shapes.items())
    if activations * CHECK_BATCH > max_params:
        return _fail(STAGE_SHAPE, f"too-large: {activations} activation values per sample")
    macs, steps, padded = compute_cost(net, shapes)
    if macs > max_macs or steps > MAX_KERNEL_STEPS or padded * CHECK_BATCH > max_params:
        return _fail(STAGE_SHAPE, f"too-costly: {macs} multiply-accumulates, {steps} kernel offsets, "
                                  f"{padded} padded input values per sample")

    rng = np.random.default_rng(seed)
    try:
        model = instantiate(net, rng_seed=seed)
        batch = rng.standard_normal((CHECK_BATCH,) + tuple(net.input_shape))
        logits = model.forward(batch, training=True)
    except ShapeMismatch as e:
        return _fail(STAGE_SHAPE, f"shape-mismatch: {e}")
    except (ChannelForgeError, ValueError, MemoryError) as e:
        return _fail(STAGE_SHAPE, f"forward: {e}")
    if logits.shape != (CHECK_BATCH, net.num_classes):
        return _fail(STAGE_SHAPE, f"class-count: logits {logits.shape}")

    # stage 2: cross-entropy against random labels, backward, finite gradients
    try:
        labels = rng.integers(0, net.num_classes, size=CHECK_BATCH)
        _, dlogits = cross_entropy(logits, labels)
        model.backward(dlogits)
    except (ChannelForgeError, ValueError) as e:
        return _fail(STAGE_GRADIENT, f"backward: {e}", shape_ok=True)
    for layer_id, group in model.grads.items():
        for name, grad in group.items():
            if grad is None or not np.all(np.isfinite(grad)):
                return _fail(STAGE_GRADIENT, f"non-finite gradient in {layer_id}.{name}", shape_ok=True)

    # stage 3: one SGD step must move at least one parameter
    deltas = model.sgd_step(CHECK_LR)
    if not any(delta > 0 for delta in deltas.values()):
        return _fail(STAGE_TRAINABLE, "no parameter changed after one step", shape_ok=True, gradient_ok=True)

    logger.debug("verified %s (%d parameters)", net.name, params)
    return VerificationReport(shape_ok=True, gradient_ok=True, trainable_ok=True)
