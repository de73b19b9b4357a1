"""Dense feed-forward ReLU networks and output-specification clauses."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NetworkFormatError


@dataclass(frozen=True)
class Layer:
    kind: str  # "affine" | "relu"
    weight: np.ndarray | None = None
    bias: np.ndarray | None = None

    @property
    def out_dim(self):
        return None if self.weight is None else self.weight.shape[0]


def affine(weight, bias):
    w = np.array(weight, dtype=np.float64, ndmin=2)
    b = np.array(bias, dtype=np.float64).reshape(-1)
    if w.shape[0] != b.shape[0]:
        raise NetworkFormatError(f"weight has {w.shape[0]} rows but bias has length {b.shape[0]}")
    w.setflags(write=False)
    b.setflags(write=False)
    return Layer("affine", w, b)


RELU = Layer("relu")


@dataclass(frozen=True)
class Network:
    layers: tuple
    input_dim: int
    output_dim: int = field(init=False)

    def __post_init__(self):
        if not self.layers:
            raise NetworkFormatError("network has no layers")
        width = self.input_dim
        prev = None
        for idx, layer in enumerate(self.layers):
            if layer.kind == "affine":
                rows, cols = layer.weight.shape
                if cols != width:
                    raise NetworkFormatError(
                        f"layer {idx}: dimension mismatch, weight expects {cols} inputs "
                        f"but preceding width is {width}", layer=idx)
                if layer.bias.shape != (rows,):
                    raise NetworkFormatError(f"layer {idx}: bias length differs from weight rows", layer=idx)
                if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                    raise NetworkFormatError(f"layer {idx}: non-finite parameters", layer=idx)
                width = rows
            elif layer.kind == "relu":
                if prev != "affine":
                    raise NetworkFormatError(f"layer {idx}: relu must follow an affine layer", layer=idx)
            else:
                raise NetworkFormatError(f"layer {idx}: unsupported layer kind {layer.kind!r}", layer=idx)
            prev = layer.kind
        if prev != "affine":
            raise NetworkFormatError(f"layer {len(self.layers) - 1}: final layer must be affine",
                                     layer=len(self.layers) - 1)
        object.__setattr__(self, "output_dim", width)

    @property
    def affine_layers(self):
        return [layer for layer in self.layers if layer.kind == "affine"]

    @property
    def num_relu_layers(self):
        return sum(layer.kind == "relu" for layer in self.layers)

    def to_dict(self):
        out = []
        for layer in self.layers:
            if layer.kind == "affine":
                out.append({"type": "dense", "weight": layer.weight.tolist(), "bias": layer.bias.tolist()})
            else:
                out.append({"type": "relu"})
        return {"input_dim": self.input_dim, "layers": out}


def network_from_dict(spec):
    """Build a :class:`Network` from the parsed JSON network format."""
    try:
        input_dim = int(spec["input_dim"])
        raw_layers = spec["layers"]
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkFormatError(f"malformed network description: {exc}") from exc
    if input_dim <= 0:
        raise NetworkFormatError("input_dim must be positive")
    layers = []
    for idx, raw in enumerate(raw_layers):
        kind = raw.get("type") if isinstance(raw, dict) else None
        if kind in ("dense", "affine", "linear"):
            try:
                layers.append(affine(raw["weight"], raw["bias"]))
            except (KeyError, ValueError) as exc:
                raise NetworkFormatError(f"layer {idx}: cannot parse dense layer ({exc})", layer=idx) from exc
            except NetworkFormatError as exc:
                raise NetworkFormatError(f"layer {idx}: {exc}", layer=idx) from exc
        elif kind == "relu":
            layers.append(RELU)
        else:
            raise NetworkFormatError(f"layer {idx}: unsupported layer kind {kind!r}", layer=idx)
    return Network(tuple(layers), input_dim)


def load_network(path):
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise NetworkFormatError(f"network file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}: invalid JSON ({exc})") from exc
    return network_from_dict(spec)


def forward(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.input_dim:
        raise ValueError(f"input has dimension {x.shape[-1]}, network expects {net.input_dim}")
    h = x
    for layer in net.layers:
        if layer.kind == "affine":
            h = h @ layer.weight.T + layer.bias
        else:
            h = np.maximum(h, 0.0)
    return h


@dataclass(frozen=True)
class ClauseMatrix:
    """Rows ``c`` with ``c @ y >= 0`` for every row iff ``label`` wins (ties allowed)."""

    rows: np.ndarray
    label: int

    @property
    def m(self):
        return self.rows.shape[0]

    def margins(self, y):
        return np.asarray(y, dtype=np.float64) @ self.rows.T

    def satisfied(self, y):
        return bool(np.all(self.margins(y) >= 0.0))


def clause_matrix(label, n_outputs):
    if n_outputs < 2:
        raise ValueError("need at least two output classes")
    if not 0 <= label < n_outputs:
        raise ValueError(f"label {label} out of range for {n_outputs} outputs")
    others = [j for j in range(n_outputs) if j != label]
    rows = np.zeros((n_outputs - 1, n_outputs))
    rows[:, label] = 1.0
    rows[np.arange(n_outputs - 1), others] = -1.0
    rows.setflags(write=False)
    return ClauseMatrix(rows, int(label))
