"""
ModelInstance: parameters, forward, backward and a plain SGD step for a NetworkDef.
"""

import logging
from typing import Dict, List, Optional

import numpy as np

from src.engine import functional as F
from src.errors import ChannelForgeError, ShapeMismatch
from src.graph.shapes import ShapeMap, infer_shapes
from src.ir.arch_ir import INPUT_ID, LayerKind, NetworkDef

logger = logging.getLogger(__name__)


class ModelInstance:
    """
    Executable instance of a NetworkDef.

    params[layer_id] holds "weight"/"bias" arrays (BatchNorm: scale/shift as
    weight/bias); grads mirrors params. BatchNorm running statistics live in
    buffers and are not parameters.
    """

    def __init__(self, net: NetworkDef, shapes: ShapeMap, rng_seed: int = 0, dtype=np.float32):
        self.net = net
        self.shapes = shapes
        self.dtype = np.dtype(dtype)
        self.order = net.topological_order()
        self.params: Dict[str, Dict[str, np.ndarray]] = {}
        self.buffers: Dict[str, Dict[str, np.ndarray]] = {}
        self.rng = np.random.default_rng(rng_seed)
        self.last_shapes: Dict[str, tuple] = {}
        self._caches: Optional[Dict[str, object]] = None
        self._init_params()
        self.grads = {lid: {name: np.zeros_like(p) for name, p in group.items()}
                      for lid, group in self.params.items()}

    def _kaiming(self, shape, fan_in: int) -> np.ndarray:
        bound = np.sqrt(6.0 / fan_in)
        return self.rng.uniform(-bound, bound, size=shape).astype(self.dtype)

    def _init_params(self) -> None:
        for layer_id in self.order:
            layer = self.net.layer(layer_id)
            p = layer.params
            if layer.kind == LayerKind.CONV2D:
                out_c, in_c, k, g = int(p["out_channels"]), int(p["in_channels"]), int(p["kernel"]), int(p["groups"])
                self.params[layer_id] = {
                    "weight": self._kaiming((out_c, in_c // g, k, k), (in_c // g) * k * k),
                    "bias": np.zeros(out_c, dtype=self.dtype),
                }
            elif layer.kind == LayerKind.LINEAR:
                out_f, in_f = int(p["out_features"]), int(p["in_features"])
                self.params[layer_id] = {
                    "weight": self._kaiming((out_f, in_f), in_f),
                    "bias": np.zeros(out_f, dtype=self.dtype),
                }
            elif layer.kind == LayerKind.BATCHNORM2D:
                c = int(p["num_features"])
                self.params[layer_id] = {"weight": np.ones(c, dtype=self.dtype), "bias": np.zeros(c, dtype=self.dtype)}
                self.buffers[layer_id] = {"running_mean": np.zeros(c, dtype=self.dtype),
                                          "running_var": np.ones(c, dtype=self.dtype)}

    # ------------------------------------------------------------------

    def parameter_count(self) -> int:
        return sum(int(t.size) for group in self.params.values() for t in group.values())

    def zero_grad(self) -> None:
        for group in self.grads.values():
            for g in group.values():
                g.fill(0)

    def forward(self, batch: np.ndarray, training: bool = False) -> np.ndarray:
        batch = np.asarray(batch, dtype=self.dtype)
        if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(self.net.input_shape):
            raise ShapeMismatch(INPUT_ID, tuple(self.net.input_shape), tuple(batch.shape[1:]))
        values = {INPUT_ID: batch}
        caches: Dict[str, object] = {}
        remaining = self._consumer_counts()
        self.last_shapes = {}

        for layer_id in self.order:
            layer = self.net.layer(layer_id)
            inputs = [values[p] for p in self.net.producers(layer_id)]
            kind, p = layer.kind, layer.params
            x = inputs[0]
            if kind == LayerKind.CONV2D:
                params = self.params[layer_id]
                y, cache = F.conv2d_forward(x, params["weight"], params["bias"],
                                            int(p["stride"]), int(p["padding"]), int(p["groups"]))
            elif kind == LayerKind.LINEAR:
                if x.ndim != 2:
                    raise ShapeMismatch(layer_id, "flat features", tuple(x.shape[1:]))
                params = self.params[layer_id]
                y, cache = F.linear_forward(x, params["weight"], params["bias"])
            elif kind == LayerKind.BATCHNORM2D:
                params, buffers = self.params[layer_id], self.buffers[layer_id]
                y, cache = F.batchnorm_forward(x, params["weight"], params["bias"],
                                               buffers["running_mean"], buffers["running_var"], training)
            elif kind == LayerKind.RELU:
                y, cache = F.relu_forward(x)
            elif kind == LayerKind.MAXPOOL2D:
                y, cache = F.maxpool_forward(x, int(p["kernel"]), int(p["stride"]), int(p["padding"]))
            elif kind == LayerKind.ADAPTIVEAVGPOOL2D:
                y, cache = F.adaptive_avgpool_forward(x, int(p["target_size"]))
            elif kind == LayerKind.FLATTEN:
                y, cache = F.flatten_forward(x)
            elif kind == LayerKind.DROPOUT:
                y, cache = F.dropout_forward(x, float(p["p"]), training, self.rng)
            elif kind == LayerKind.ADD:
                if any(t.shape != x.shape for t in inputs[1:]):
                    raise ShapeMismatch(layer_id, tuple(x.shape[1:]), [tuple(t.shape[1:]) for t in inputs])
                y, cache = F.add_forward(inputs)
            elif kind == LayerKind.CONCAT:
                y, cache = F.concat_forward(inputs, int(p["axis"]))
            else:
                raise ShapeMismatch(layer_id, "known layer kind", kind)
            values[layer_id] = y
            self.last_shapes[layer_id] = tuple(y.shape[1:])
            if training:
                caches[layer_id] = cache
            # free activations nothing else reads
            for producer in self.net.producers(layer_id):
                remaining[producer] -= 1
                if remaining[producer] == 0 and producer != INPUT_ID:
                    del values[producer]

        self._caches = caches if training else None
        return values[self.net.sink().id]

    def _consumer_counts(self) -> Dict[str, int]:
        counts = {INPUT_ID: 0}
        for layer_id in self.order:
            counts.setdefault(layer_id, 0)
            for producer in self.net.producers(layer_id):
                counts[producer] = counts.get(producer, 0) + 1
        return counts

    def backward(self, dlogits: np.ndarray) -> None:
        """Populate self.grads from the gradient of the loss w.r.t. the logits"""
        if self._caches is None:
            raise ChannelForgeError("backward needs a preceding forward pass in training mode")
        caches = self._caches
        upstream: Dict[str, np.ndarray] = {self.net.sink().id: np.asarray(dlogits, dtype=self.dtype)}
        self.zero_grad()

        for layer_id in reversed(self.order):
            dy = upstream.pop(layer_id, None)
            if dy is None:
                continue
            layer = self.net.layer(layer_id)
            cache = caches[layer_id]
            kind = layer.kind
            if kind == LayerKind.CONV2D:
                dx, dw, db = F.conv2d_backward(dy, cache)
                self.grads[layer_id]["weight"][...] = dw
                self.grads[layer_id]["bias"][...] = db
                dxs = [dx]
            elif kind == LayerKind.LINEAR:
                dx, dw, db = F.linear_backward(dy, cache)
                self.grads[layer_id]["weight"][...] = dw
                self.grads[layer_id]["bias"][...] = db
                dxs = [dx]
            elif kind == LayerKind.BATCHNORM2D:
                dx, dgamma, dbeta = F.batchnorm_backward(dy, cache)
                self.grads[layer_id]["weight"][...] = dgamma
                self.grads[layer_id]["bias"][...] = dbeta
                dxs = [dx]
            elif kind == LayerKind.RELU:
                dxs = [F.relu_backward(dy, cache)]
            elif kind == LayerKind.MAXPOOL2D:
                dxs = [F.maxpool_backward(dy, cache)]
            elif kind == LayerKind.ADAPTIVEAVGPOOL2D:
                dxs = [F.adaptive_avgpool_backward(dy, cache)]
            elif kind == LayerKind.FLATTEN:
                dxs = [F.flatten_backward(dy, cache)]
            elif kind == LayerKind.DROPOUT:
                dxs = [F.dropout_backward(dy, cache)]
            elif kind == LayerKind.ADD:
                dxs = F.add_backward(dy, cache)
            else:
                dxs = F.concat_backward(dy, cache)
            for producer, dx in zip(self.net.producers(layer_id), dxs):
                if producer == INPUT_ID:
                    continue
                if producer in upstream:
                    upstream[producer] = upstream[producer] + dx
                else:
                    upstream[producer] = dx

    def sgd_step(self, lr: float) -> Dict[str, float]:
        """p <- p - lr * grad; returns max |delta p| per parameterized layer"""
        report = {}
        for layer_id, group in self.params.items():
            largest = 0.0
            for name, param in group.items():
                before = param.copy()
                param -= self.dtype.type(lr) * self.grads[layer_id][name]
                largest = max(largest, float(np.max(np.abs(param - before))) if param.size else 0.0)
            report[layer_id] = largest
        return report

    def parameter_arrays(self) -> List[np.ndarray]:
        return [t for lid in self.order if lid in self.params for t in self.params[lid].values()]


def instantiate(net: NetworkDef, rng_seed: int = 0, dtype=np.float32) -> ModelInstance:
    """Kaiming-uniform weights, zero biases, BatchNorm scale 1 / shift 0; raises ShapeMismatch"""
    shapes = infer_shapes(net)
    model = ModelInstance(net, shapes, rng_seed, dtype)
    logger.debug("instantiated %s with %d parameters", net.name, model.parameter_count())
    return model
