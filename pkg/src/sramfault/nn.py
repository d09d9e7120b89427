"""A small feed-forward inference engine (no training).

Inputs are processed in batches: a batch of images has shape ``(N, C, H, W)``,
a batch of vectors ``(N, D)``. Dense layers flatten whatever they receive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch
from .injector import load_tensor, save_tensor

KINDS = ("dense", "conv2d", "maxpool", "avgpool", "relu", "softmax")


@dataclass(frozen=True, eq=False)
class Layer:
    kind: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    kernel: int = 0
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for name in ("weights", "bias"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=np.float32))
        if self.kind in ("dense", "conv2d"):
            if self.weights is None:
                raise ValueError(f"{self.kind} layer needs weights")
            expected = 2 if self.kind == "dense" else 4
            if self.weights.ndim != expected:
                raise ValueError(f"{self.kind} weights must have {expected} dimensions")
            if self.bias is None:
                object.__setattr__(self, "bias", np.zeros(self.weights.shape[0], np.float32))
            if self.bias.shape != (self.weights.shape[0],):
                raise ValueError("bias length must equal the number of outputs")
        if self.kind in ("maxpool", "avgpool") and self.kernel < 1:
            raise ValueError("pooling needs a kernel size >= 1")
        if self.kind == "conv2d" and self.kernel == 0:
            object.__setattr__(self, "kernel", int(self.weights.shape[-1]))

    @property
    def has_params(self) -> bool:
        return self.kind in ("dense", "conv2d")

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        """Per-sample output shape for a per-sample input shape."""
        if self.kind == "dense":
            n_in = int(np.prod(shape))
            if n_in != self.weights.shape[1]:
                raise ShapeMismatch(f"dense layer expects {self.weights.shape[1]} inputs, got {shape}")
            return (self.weights.shape[0],)
        if self.kind == "conv2d":
            if len(shape) != 3 or shape[0] != self.weights.shape[1]:
                raise ShapeMismatch(f"conv2d expects ({self.weights.shape[1]}, H, W), got {shape}")
            _, h, w = shape
            k, s, p = self.weights.shape[2], self.stride, self.padding
            oh, ow = (h + 2 * p - k) // s + 1, (w + 2 * p - self.weights.shape[3]) // s + 1
            if oh < 1 or ow < 1:
                raise ShapeMismatch(f"conv2d kernel larger than input {shape}")
            return (self.weights.shape[0], oh, ow)
        if self.kind in ("maxpool", "avgpool"):
            if len(shape) != 3:
                raise ShapeMismatch(f"pooling expects (C, H, W), got {shape}")
            c, h, w = shape
            k, s = self.kernel, self.stride
            oh, ow = (h - k) // s + 1, (w - k) // s + 1
            if oh < 1 or ow < 1:
                raise ShapeMismatch(f"pooling window larger than input {shape}")
            return (c, oh, ow)
        return tuple(shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "dense":
            x = x.reshape(x.shape[0], -1)
            return x @ self.weights.T + self.bias
        if self.kind == "conv2d":
            return _conv2d(x, self.weights, self.bias, self.stride, self.padding)
        if self.kind in ("maxpool", "avgpool"):
            win = sliding_window_view(x, (self.kernel, self.kernel), axis=(2, 3))
            win = win[:, :, :: self.stride, :: self.stride]
            return win.max(axis=(4, 5)) if self.kind == "maxpool" else win.mean(axis=(4, 5), dtype=np.float32)
        if self.kind == "relu":
            return np.maximum(x, 0)
        # softmax over the last axis
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)


def _conv2d(x, weights, bias, stride: int, padding: int) -> np.ndarray:
    """Cross-correlation via im2col."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_c, in_c, kh, kw = weights.shape
    cols = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # cols: (N, C, OH, OW, kh, kw) -> (N, OH, OW, C*kh*kw)
    n, _, oh, ow = cols.shape[:4]
    patches = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, in_c * kh * kw)
    out = patches @ weights.reshape(out_c, -1).T + bias
    return out.transpose(0, 3, 1, 2)


@dataclass(frozen=True, eq=False)
class Network:
    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]
    name: str = "network"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        object.__setattr__(self, "_output_shape", shape)

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self._output_shape

    def param_tensors(self, include_biases: bool = False) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            if layer.has_params:
                out.append(layer.weights)
                if include_biases:
                    out.append(layer.bias)
        return out

    def weight_order(self, include_biases: bool = False) -> np.ndarray:
        """All weights flattened layer by layer, each tensor in row-major order.

        With ``include_biases`` every layer's bias follows its weights.
        """
        tensors = self.param_tensors(include_biases)
        if not tensors:
            return np.empty(0, np.float32)
        return np.concatenate([t.ravel() for t in tensors]).astype(np.float32)

    def n_weights(self, include_biases: bool = False) -> int:
        return sum(t.size for t in self.param_tensors(include_biases))

    def with_weights(self, flat, include_biases: bool = False) -> "Network":
        """Inverse of :meth:`weight_order`."""
        flat = np.asarray(flat, dtype=np.float32).ravel()
        if flat.size != self.n_weights(include_biases):
            raise ShapeMismatch(f"expected {self.n_weights(include_biases)} weights, got {flat.size}")
        pos = 0
        layers = []
        for layer in self.layers:
            if not layer.has_params:
                layers.append(layer)
                continue
            w = flat[pos: pos + layer.weights.size].reshape(layer.weights.shape)
            pos += layer.weights.size
            b = layer.bias
            if include_biases:
                b = flat[pos: pos + b.size]
                pos += b.size
            layers.append(replace(layer, weights=w, bias=b))
        return Network(self.input_shape, tuple(layers), self.name)

    def forward(self, batch: np.ndarray) -> np.ndarray:
        x = np.asarray(batch, dtype=np.float32)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"input shape {x.shape[1:]} does not match {self.input_shape}")
        # overflowing faulty weights are expected; inf/nan simply propagate
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            for layer in self.layers:
                x = layer.forward(x)
        return x


def _argmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax; NaN never wins, ties go to the lowest index."""
    scores = scores.reshape(scores.shape[0], -1)
    clean = np.where(np.isnan(scores), -np.inf, scores)
    return np.argmax(clean, axis=1)


def predict(net: Network, inputs: np.ndarray, batch_size: int = 1024) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float32)
    out = [_argmax(net.forward(inputs[i: i + batch_size])) for i in range(0, len(inputs), batch_size)]
    return np.concatenate(out) if out else np.empty(0, np.int64)


def infer(net: Network, sample) -> int:
    sample = np.asarray(sample, dtype=np.float32)
    if sample.shape != net.input_shape:
        raise ShapeMismatch(f"input shape {sample.shape} does not match {net.input_shape}")
    return int(predict(net, sample[None])[0])


@dataclass(frozen=True, eq=False)
class LabeledData:
    inputs: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float32)
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if len(inputs) != len(labels):
            raise ShapeMismatch(f"{len(inputs)} inputs but {len(labels)} labels")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.labels.size)


def accuracy(net: Network, data: LabeledData) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    return float(np.mean(predict(net, data.inputs) == data.labels))


# --- files -------------------------------------------------------------------------

def _layer_manifest(directory: Path, prefix: str, layer: Layer) -> dict:
    d: dict = {"kind": layer.kind}
    if layer.kind in ("maxpool", "avgpool"):
        d.update(kernel=layer.kernel, stride=layer.stride)
    if layer.kind == "conv2d":
        d.update(stride=layer.stride, padding=layer.padding)
    if layer.has_params:
        d["weights"] = save_tensor(directory, f"{prefix}_w", layer.weights)
        d["bias"] = save_tensor(directory, f"{prefix}_b", layer.bias)
    return d


def save_network(net: Network, directory: str | Path) -> Path:
    """Write ``network.json`` plus one weight/bias blob pair per parameterized layer."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    layers = [_layer_manifest(directory, f"{net.name}_l{i}", layer) for i, layer in enumerate(net.layers)]
    manifest = {"name": net.name, "input_shape": list(net.input_shape), "layers": layers}
    path = directory / "network.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path


def load_network(path: str | Path) -> Network:
    path = Path(path)
    if path.is_dir():
        path = path / "network.json"
    manifest = json.loads(path.read_text(encoding="utf-8"))
    layers = []
    for d in manifest["layers"]:
        kw = {k: d[k] for k in ("kernel", "stride", "padding") if k in d}
        if "weights" in d:
            kw["weights"] = load_tensor(path.parent, d["weights"])
            kw["bias"] = load_tensor(path.parent, d["bias"])
        layers.append(Layer(d["kind"], **kw))
    return Network(tuple(manifest["input_shape"]), tuple(layers), manifest.get("name", "network"))


def save_data(data: LabeledData, directory: str | Path) -> Path:
    """Write ``dataset.json``, a float32 input blob and an int32 label blob."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    inputs_blob, labels_blob = f"{data.name}_inputs.bin", f"{data.name}_labels.bin"
    (directory / inputs_blob).write_bytes(np.asarray(data.inputs, dtype="<f4").tobytes())
    (directory / labels_blob).write_bytes(np.asarray(data.labels, dtype="<i4").tobytes())
    manifest = {
        "name": data.name,
        "count": len(data),
        "input_shape": list(data.inputs.shape[1:]),
        "inputs": inputs_blob,
        "labels": labels_blob,
    }
    path = directory / "dataset.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path


def load_data(path: str | Path) -> LabeledData:
    path = Path(path)
    if path.is_dir():
        path = path / "dataset.json"
    m = json.loads(path.read_text(encoding="utf-8"))
    n = int(m["count"])
    inputs = np.frombuffer((path.parent / m["inputs"]).read_bytes(), dtype="<f4")
    labels = np.frombuffer((path.parent / m["labels"]).read_bytes(), dtype="<i4")
    shape = (n, *m["input_shape"])
    if inputs.size != int(np.prod(shape)) or labels.size != n:
        raise ShapeMismatch(f"{path}: blob sizes do not match count {n}")
    return LabeledData(inputs.reshape(shape), labels, m.get("name", "dataset"))
