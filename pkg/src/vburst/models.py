"""Model graphs: the multi-path spectrogram CNN and the embedding MLP.

A ModelGraph is a DAG of LayerSpec nodes over the nncore layer set,
with one graph input (index -1) and one output node.  Execution frees
each activation as soon as its last consumer has run, which is what
keeps the wide spectrogram model inside a small memory budget.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from vburst.errors import DataError, FormatError, NumericError
from vburst.nncore import (
    Conv2D,
    LayerSpec,
    finite_checks_enabled,
    infer_shape,
    make_layer,
    softmax_ce_grad,
)
from vburst.seeding import child_rng

BKPT_MAGIC = b"BKPT"
BKPT_VERSION = 1


class Node:
    def __init__(self, spec: LayerSpec, inputs: tuple):
        self.spec = spec
        self.inputs = tuple(inputs)
        self.layer = None
        self.out_shape = None


class ModelGraph:
    def __init__(self, name: str, input_shape: tuple, nodes: list, rng, dtype=np.float32):
        """nodes: list of (LayerSpec, input indices); -1 refers to the graph input."""
        self.name = name
        self.input_shape = tuple(input_shape)
        self.dtype = dtype
        self.nodes = []
        shapes = {-1: self.input_shape}
        for i, (spec, inputs) in enumerate(nodes):
            node = Node(spec, inputs)
            if any(j >= i or j < -1 for j in node.inputs):
                raise ValueError(f"node {i} references an undefined input: {node.inputs}")
            in_shapes = [shapes[j] for j in node.inputs]
            node.out_shape = infer_shape(spec, in_shapes)
            node.layer = make_layer(spec, in_shapes, rng, dtype)
            shapes[i] = node.out_shape
            self.nodes.append(node)
        self._consumers = [0] * len(self.nodes)
        for node in self.nodes:
            for j in node.inputs:
                if j >= 0:
                    self._consumers[j] += 1
        dangling = [i for i, c in enumerate(self._consumers[:-1]) if c == 0]
        if dangling:
            raise ValueError(f"graph has multiple outputs: nodes {dangling} are unconsumed")
        # gradients w.r.t. raw input data are never used; skip the heaviest one
        for node in self.nodes:
            if isinstance(node.layer, Conv2D) and all(j == -1 for j in node.inputs):
                node.layer.need_input_grad = False

    @property
    def output_shape(self) -> tuple:
        return self.nodes[-1].out_shape

    def forward(self, x: np.ndarray, mode: str = "infer", rng=None) -> np.ndarray:
        if tuple(x.shape[1:]) != self.input_shape:
            raise DataError(
                f"{self.name}: input shape {tuple(x.shape[1:])} does not match "
                f"{self.input_shape}"
            )
        x = np.ascontiguousarray(x, dtype=self.dtype)
        acts = {-1: x}
        pending = list(self._consumers)
        for i, node in enumerate(self.nodes):
            xs = [acts[j] for j in node.inputs]
            out = node.layer.forward(xs if node.spec.kind == "concat" else xs[0], mode, rng)
            if finite_checks_enabled() and not np.all(np.isfinite(out)):
                raise NumericError(f"{self.name}: non-finite output at node {i} ({node.spec.kind})")
            acts[i] = out
            for j in node.inputs:
                if j >= 0:
                    pending[j] -= 1
                    if pending[j] == 0:
                        del acts[j]
        return acts[len(self.nodes) - 1]

    def predict(self, x: np.ndarray, batch_size: int = 200) -> np.ndarray:
        """Infer-mode forward in batches; returns stacked probabilities."""
        outs = [
            self.forward(x[i : i + batch_size], mode="infer")
            for i in range(0, x.shape[0], batch_size)
        ]
        return np.concatenate(outs, axis=0)

    def backward_from_probs(self, probs: np.ndarray, targets: np.ndarray) -> None:
        """Backprop the fused softmax + cross-entropy gradient through the graph.

        Populates every layer's grads dict; the softmax node itself is folded
        into the seed gradient (p - t)/N at its input.
        """
        last = len(self.nodes) - 1
        if self.nodes[last].spec.kind != "softmax":
            raise ValueError("fused CE backward requires a softmax output node")
        self.nodes[last].layer._probs = None
        grad_map = {self.nodes[last].inputs[0]: softmax_ce_grad(probs, targets)}
        for i in range(last - 1, -1, -1):
            if i not in grad_map:
                continue
            node = self.nodes[i]
            dx = node.layer.backward(grad_map.pop(i))
            if dx is None:
                continue
            pieces = zip(node.inputs, dx) if node.spec.kind == "concat" else [(node.inputs[0], dx)]
            for j, dj in pieces:
                if j == -1:
                    continue
                if j in grad_map:
                    grad_map[j] = grad_map[j] + dj
                else:
                    grad_map[j] = dj

    def trainable_refs(self) -> list:
        """(node index, param name) pairs in stable topological order."""
        refs = []
        for i, node in enumerate(self.nodes):
            for name in node.layer.param_names:
                refs.append((i, name))
        return refs

    def trainable_arrays(self) -> list:
        return [self.nodes[i].layer.params[name] for i, name in self.trainable_refs()]

    def grad_arrays(self) -> list:
        return [self.nodes[i].layer.grads[name] for i, name in self.trainable_refs()]

    def num_params(self, trainable_only: bool = True) -> int:
        total = 0
        for node in self.nodes:
            names = node.layer.param_names
            if not trainable_only:
                names = names + node.layer.state_names
            total += sum(node.layer.params[n].size for n in names)
        return total

    def _blob_entries(self) -> list:
        """(node index, param name) for every persisted array, in file order."""
        entries = []
        for i, node in enumerate(self.nodes):
            for name in node.layer.param_names + node.layer.state_names:
                entries.append((i, name))
        return entries


def build_melspec_cnn(t: int, seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Three parallel conv paths over (128, T, 1) spectrograms, merged on channels."""
    if t not in (150, 85):
        raise ValueError(f"temporal length must be 150 or 85, got {t}")
    name = f"melspec{t}-cnn"
    nodes = []

    def branch(kernel):
        base = len(nodes)
        nodes.extend(
            [
                (LayerSpec("conv2d", filters=16, kernel=kernel), (-1,)),
                (LayerSpec("batchnorm"), (base,)),
                (LayerSpec("relu"), (base + 1,)),
                (LayerSpec("spatial_dropout", rate=0.2), (base + 2,)),
                (LayerSpec("maxpool2d", pool=(4, 2)), (base + 3,)),
            ]
        )
        return base + 4

    merged = [branch((10, 1)), branch((1, 10)), branch((3, 3))]
    nodes.append((LayerSpec("concat"), tuple(merged)))

    def block(filters, kernel, rate):
        base = len(nodes)
        nodes.extend(
            [
                (LayerSpec("batchnorm"), (base - 1,)),
                (LayerSpec("conv2d", filters=filters, kernel=kernel), (base,)),
                (LayerSpec("batchnorm"), (base + 1,)),
                (LayerSpec("relu"), (base + 2,)),
                (LayerSpec("spatial_dropout", rate=rate), (base + 3,)),
                (LayerSpec("maxpool2d", pool=(2, 4)), (base + 4,)),
            ]
        )

    block(32, (5, 5), 0.3)
    block(32, (5, 5), 0.3)
    block(64, (3, 3), 0.4)
    base = len(nodes)
    nodes.extend(
        [
            (LayerSpec("batchnorm"), (base - 1,)),
            (LayerSpec("conv2d", filters=16, kernel=(3, 3)), (base,)),
            (LayerSpec("global_maxpool"), (base + 1,)),
            (LayerSpec("batchnorm"), (base + 2,)),
            (LayerSpec("dense", units=8), (base + 3,)),
            (LayerSpec("softmax"), (base + 4,)),
        ]
    )
    rng = child_rng(seed, "init", name)
    return ModelGraph(name, (128, t, 1), nodes, rng, dtype)


def build_embedding_mlp(seed: int = 0, dtype=np.float32) -> ModelGraph:
    """768-dim pooled embeddings -> BN -> 64 -> 32 -> 8-way softmax."""
    name = "embedding-mlp"
    nodes = [
        (LayerSpec("batchnorm"), (-1,)),
        (LayerSpec("dense", units=64), (0,)),
        (LayerSpec("dropout", rate=0.2), (1,)),
        (LayerSpec("relu"), (2,)),
        (LayerSpec("dense", units=32), (3,)),
        (LayerSpec("dropout", rate=0.2), (4,)),
        (LayerSpec("relu"), (5,)),
        (LayerSpec("dense", units=8), (6,)),
        (LayerSpec("softmax"), (7,)),
    ]
    rng = child_rng(seed, "init", name)
    return ModelGraph(name, (768,), nodes, rng, dtype)


def save_checkpoint(model: ModelGraph, path, epoch: int = -1, seed: int = 0,
                    val_uar: float | None = None) -> None:
    header_fields = {
        "name": model.name,
        "dtype": np.dtype(model.dtype).name,
        "input_shape": json.dumps(list(model.input_shape)),
        "nodes": json.dumps(
            [{"spec": n.spec.to_dict(), "inputs": list(n.inputs)} for n in model.nodes]
        ),
        "epoch": str(epoch),
        "seed": str(seed),
        "val_uar": "" if val_uar is None else repr(float(val_uar)),
    }
    header = "".join(f"{k}={v}\n" for k, v in header_fields.items()).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BKPT_MAGIC)
        fh.write(struct.pack("<BI", BKPT_VERSION, len(header)))
        fh.write(header)
        for i, name in model._blob_entries():
            arr = model.nodes[i].layer.params[name]
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_checkpoint(path):
    """Returns (ModelGraph, metadata dict with epoch/seed/val_uar)."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:4] != BKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {BKPT_MAGIC!r}")
    if len(blob) < 9:
        raise FormatError(f"{path}: truncated header")
    version, header_len = struct.unpack_from("<BI", blob, 4)
    if version != BKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if len(blob) < 9 + header_len:
        raise FormatError(f"{path}: truncated header")
    fields = {}
    for line in blob[9 : 9 + header_len].decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            fields[key] = value
    try:
        input_shape = tuple(json.loads(fields["input_shape"]))
        node_descs = json.loads(fields["nodes"])
        dtype = np.dtype(fields["dtype"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header: {exc}") from exc
    nodes = [(LayerSpec.from_dict(d["spec"]), tuple(d["inputs"])) for d in node_descs]
    model = ModelGraph(fields.get("name", "model"), input_shape, nodes,
                       child_rng(0, "checkpoint-load"), dtype.type)
    offset = 9 + header_len
    for i, name in model._blob_entries():
        arr = model.nodes[i].layer.params[name]
        end = offset + arr.size * dtype.itemsize
        if end > len(blob):
            raise FormatError(f"{path}: parameter blob truncated at node {i} {name!r}")
        values = np.frombuffer(blob, dtype=dtype.newbyteorder("<"), count=arr.size,
                               offset=offset)
        arr[...] = values.reshape(arr.shape)
        offset = end
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes after parameters")
    metadata = {
        "epoch": int(fields.get("epoch", "-1")),
        "seed": int(fields.get("seed", "0")),
        "val_uar": float(fields["val_uar"]) if fields.get("val_uar") else None,
    }
    return model, metadata
