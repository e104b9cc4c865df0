"""
Proxy fitness for verified candidates.

MicroEvaluator trains the candidate on a small Dataset with the numpy engine and
reports validation accuracy. SurrogateEvaluator scores the channel
configuration with a fixed formula that has a known optimum, so search runs can
be checked against ground truth in seconds.
"""

import hashlib
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.dsl.parser import SourceText, parse
from src.engine import cross_entropy, instantiate, make_optimizer
from src.errors import DataMismatch, TopologyUnsupported, VerificationRequired
from src.evaluation.dataset import Dataset
from src.ir.arch_ir import Hyperparams, LayerKind, NetworkDef, count_params, width_vector
from src.verify import verify

logger = logging.getLogger(__name__)

METRIC_NAME = "accuracy"
EVAL_BATCH = 256


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    params: int
    evaluator_kind: str
    wall_time: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")


class SurrogateConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    base: float = Field(default=0.15, ge=0)
    last_layer_gain: float = 0.05
    early_penalty: float = 0.03
    noise_sigma: float = Field(default=0.01, ge=0)
    w_ref_early: int = Field(default=64, ge=1)
    w_ref_last: int = Field(default=256, ge=1)
    rng_seed: int = Field(default=0, ge=0)


# ---------------------------------------------------------------- micro training

def evaluate_accuracy(model, data: Dataset) -> float:
    """Top-1 accuracy on the validation split, in inference mode"""
    if len(data.val_idx) == 0:
        raise DataMismatch("dataset has an empty validation split")
    correct = 0
    for start in range(0, len(data.val_idx), EVAL_BATCH):
        idx = data.val_idx[start:start + EVAL_BATCH]
        logits = model.forward(data.images[idx], training=False)
        correct += int(np.sum(np.argmax(logits, axis=1) == data.labels[idx]))
    return correct / len(data.val_idx)


def train_proxy(src: Union[SourceText, str], hp: Hyperparams, data: Dataset, rng_seed: int = 0,
                verified: bool = False) -> EvalResult:
    """Train hp.epochs epochs from a seeded init, then score the validation split"""
    started = time.perf_counter()
    if not verified:
        report = verify(src)
        if not report.valid:
            raise VerificationRequired(f"candidate is {report.verdict_text()}")
    net = parse(src)
    if tuple(net.input_shape) != data.input_shape:
        raise DataMismatch(f"net expects {net.input_shape}, dataset has {data.input_shape}")
    if net.num_classes != data.num_classes:
        raise DataMismatch(f"net has {net.num_classes} classes, dataset has {data.num_classes}")
    if len(data.train_idx) == 0:
        raise DataMismatch("dataset has an empty training split")

    model = instantiate(net, rng_seed=rng_seed)
    optimizer = make_optimizer(hp.optimizer, model, hp.learning_rate)
    rng = np.random.default_rng(rng_seed)
    for epoch in range(hp.epochs):
        order = rng.permutation(data.train_idx)
        losses = []
        for start in range(0, len(order), hp.batch_size):
            idx = order[start:start + hp.batch_size]
            logits = model.forward(data.images[idx], training=True)
            loss, dlogits = cross_entropy(logits, data.labels[idx])
            model.backward(dlogits)
            optimizer.step()
            losses.append(loss)
        logger.debug("%s epoch %d: mean loss %.4f", net.name, epoch, float(np.mean(losses)))

    accuracy = evaluate_accuracy(model, data)
    return EvalResult(accuracy, model.parameter_count(), "micro", time.perf_counter() - started)


# ---------------------------------------------------------------- surrogate

def surrogate_widths(net: NetworkDef):
    """(second conv out_channels, widest hidden linear out_features)"""
    sink_id = net.sink().id
    convs, hidden = [], []
    for layer_id in net.topological_order():
        layer = net.layer(layer_id)
        if layer.kind == LayerKind.CONV2D:
            convs.append(int(layer.params["out_channels"]))
        elif layer.kind == LayerKind.LINEAR and layer_id != sink_id:
            hidden.append(int(layer.params["out_features"]))
    if len(convs) < 2 or not hidden:
        raise TopologyUnsupported(f"{net.name} needs at least two convs and one hidden linear layer")
    return convs[1], max(hidden)


def surrogate_noise(net: NetworkDef, cfg: SurrogateConfig) -> float:
    if cfg.noise_sigma == 0:
        return 0.0
    key = f"{width_vector(net)}|{cfg.rng_seed}".encode()
    digest = hashlib.sha256(key).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return cfg.noise_sigma * float(rng.standard_normal())


def surrogate_eval(net: NetworkDef, cfg: Optional[SurrogateConfig] = None) -> EvalResult:
    cfg = cfg or SurrogateConfig()
    w_2, w_last = surrogate_widths(net)
    score = (cfg.base
             + cfg.last_layer_gain * math.log2(w_last / cfg.w_ref_last)
             - cfg.early_penalty * abs(math.log2(w_2 / cfg.w_ref_early))
             + surrogate_noise(net, cfg))
    return EvalResult(min(max(score, 0.0), 1.0), count_params(net), "surrogate")


# ---------------------------------------------------------------- evaluator objects

class MicroEvaluator:
    kind = "micro"

    def __init__(self, data: Dataset, dataset_tag: str = "toy100", rng_seed: int = 0):
        self.data = data
        self.dataset_tag = dataset_tag
        self.rng_seed = rng_seed

    def evaluate(self, src: Union[SourceText, str], hp: Hyperparams) -> EvalResult:
        return train_proxy(src, hp, self.data, self.rng_seed, verified=True)


class SurrogateEvaluator:
    kind = "surrogate"

    def __init__(self, cfg: Optional[SurrogateConfig] = None, dataset_tag: str = "surrogate"):
        self.cfg = cfg or SurrogateConfig()
        self.dataset_tag = dataset_tag

    def evaluate(self, src: Union[SourceText, str], hp: Hyperparams) -> EvalResult:
        return surrogate_eval(parse(src), self.cfg)
